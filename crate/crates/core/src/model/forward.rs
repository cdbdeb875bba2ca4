//! Shared visit representation: concept re-weighting, visit attention,
//! bidirectional GRU, and the two logistic heads.

use super::{ModelError, ModelParams, ParamId};
use crate::data::{EmbeddingTable, PatientSeries};
use crate::numerics::{Tape, Tensor, Var};

/// Model parameters registered on a tape, plus per-tape quantities shared by
/// every patient (concept weights and the re-weighted embedding matrix).
pub struct ModelGraph {
    vars: Vec<Var>,
    pub concept_weights: Var,
    /// Kernel scores before the softmax.
    pub kernel_scores: Var,
    weighted_embeddings: Var,
    p: usize,
    d: usize,
}

/// Per-patient nodes produced by [`ModelGraph::forward`].
#[derive(Debug, Clone, Copy)]
pub struct PatientNodes {
    /// `T x q` visit embeddings.
    pub phi: Var,
    /// Length-`T` visit attention.
    pub psi: Var,
    /// `T x q` visit representations.
    pub reps: Var,
    pub p_y: Var,
    pub p_s: Var,
}

impl ModelGraph {
    /// Registers every parameter; those for which `trainable` is false become constants.
    pub fn build(
        tape: &mut Tape,
        params: &ModelParams,
        emb: &EmbeddingTable,
        trainable: impl Fn(ParamId) -> bool,
    ) -> Result<Self, ModelError> {
        if emb.q() != params.dims.q {
            return Err(ModelError::DimMismatch {
                what: "embedding dimension q",
                expected: params.dims.q,
                found: emb.q(),
            });
        }
        let vars: Vec<Var> = ParamId::ALL
            .iter()
            .map(|&id| {
                let t = params.get(id).clone();
                if trainable(id) {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let p = emb.p();
        let e = tape.constant(emb.features.clone());
        let es = tape.constant(emb.surrogate.clone());
        let v = |id: ParamId| vars[id as usize];

        // two-branch kernel on (e_j, e_surrogate)
        let wf = tape.transpose(v(ParamId::CrFeatureW))?;
        let a = tape.matmul(e, wf)?;
        let a = tape.add(a, v(ParamId::CrFeatureB))?;
        let a = tape.expit(a);
        let s = tape.matmul(v(ParamId::CrSurrogateW), es)?;
        let s = tape.add(s, v(ParamId::CrSurrogateB))?;
        let s = tape.expit(s);
        let s = tape.tile_rows(s, p)?;
        let h = tape.concat(&[a, s], 1)?;
        let wfu = tape.transpose(v(ParamId::CrFusionW))?;
        let h = tape.matmul(h, wfu)?;
        let h = tape.add(h, v(ParamId::CrFusionB))?;
        let h = tape.expit(h);
        let k = tape.matmul(h, v(ParamId::CrOutW))?;
        let kernel_scores = tape.add(k, v(ParamId::CrOutB))?;
        let concept_weights = tape.softmax(kernel_scores, 0)?;
        let weighted_embeddings = tape.scale_rows(e, concept_weights)?;

        Ok(Self {
            vars,
            concept_weights,
            kernel_scores,
            weighted_embeddings,
            p,
            d: params.dims.d,
        })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id as usize]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `Φ = (1/p) · D · diag(w) · E` for a `T x p` count matrix.
    pub fn visit_embeddings(&self, tape: &mut Tape, features: Tensor) -> Result<Var, ModelError> {
        if features.cols() != self.p || features.rank() != 2 {
            return Err(ModelError::DimMismatch {
                what: "feature width p",
                expected: self.p,
                found: features.cols(),
            });
        }
        let d = tape.constant(features);
        let phi = tape.matmul(d, self.weighted_embeddings)?;
        Ok(tape.scale(phi, 1.0 / self.p as f64))
    }

    /// `ψ_t = (1/T) Σ_u expit(Q(φ_u)ᵀ K(φ_t) / √d)`
    pub fn attention(&self, tape: &mut Tape, phi: Var) -> Result<Var, ModelError> {
        let wq = tape.transpose(self.var(ParamId::VanQuery))?;
        let wk = tape.transpose(self.var(ParamId::VanKey))?;
        let q = tape.matmul(phi, wq)?;
        let k = tape.matmul(phi, wk)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.d as f64).sqrt());
        let gates = tape.expit(scores);
        Ok(tape.mean_axis(gates, 0)?)
    }

    /// Bidirectional GRU over `φ_t · ψ_t`, concatenated states projected back to `q`.
    pub fn bigru(&self, tape: &mut Tape, phi: Var, psi: Var) -> Result<Var, ModelError> {
        use ParamId::*;
        let x = tape.scale_rows(phi, psi)?;
        let fwd = tape.gru(
            x,
            self.var(GruFwdWih),
            self.var(GruFwdWhh),
            self.var(GruFwdBih),
            self.var(GruFwdBhh),
            false,
        )?;
        let bwd = tape.gru(
            x,
            self.var(GruBwdWih),
            self.var(GruBwdWhh),
            self.var(GruBwdBih),
            self.var(GruBwdBhh),
            true,
        )?;
        let h = tape.concat(&[fwd, bwd], 1)?;
        let wp = tape.transpose(self.var(ProjW))?;
        let f = tape.matmul(h, wp)?;
        Ok(tape.add(f, self.var(ProjB))?)
    }

    fn head(&self, tape: &mut Tape, reps: Var, w: ParamId, b: ParamId) -> Result<Var, ModelError> {
        let z = tape.matmul(reps, self.var(w))?;
        let z = tape.add(z, self.var(b))?;
        Ok(tape.expit(z))
    }

    pub fn forward(&self, tape: &mut Tape, features: Tensor) -> Result<PatientNodes, ModelError> {
        let phi = self.visit_embeddings(tape, features)?;
        let psi = self.attention(tape, phi)?;
        let reps = self.bigru(tape, phi, psi)?;
        let p_y = self.head(tape, reps, ParamId::HeadY, ParamId::HeadY0)?;
        let p_s = self.head(tape, reps, ParamId::HeadS, ParamId::HeadS0)?;
        Ok(PatientNodes {
            phi,
            psi,
            reps,
            p_y,
            p_s,
        })
    }

    pub fn forward_series(&self, tape: &mut Tape, series: &PatientSeries) -> Result<PatientNodes, ModelError> {
        self.forward(tape, series.feature_tensor())
    }
}

fn frozen(_: ParamId) -> bool {
    false
}

/// Raw kernel scores `K_CR(e_j, e_surrogate)` for every feature.
pub fn kernel_scores(emb: &EmbeddingTable, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let g = ModelGraph::build(&mut tape, params, emb, frozen)?;
    Ok(tape.value(g.kernel_scores).data().to_vec())
}

/// Softmax-normalized concept weights, one per feature.
pub fn concept_weights(emb: &EmbeddingTable, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let g = ModelGraph::build(&mut tape, params, emb, frozen)?;
    Ok(tape.value(g.concept_weights).data().to_vec())
}

/// `φ(D_t) = (1/p) Σ_j D_j w_j e_j`
pub fn visit_embed(counts: &[f64], weights: &[f64], emb: &EmbeddingTable) -> Result<Vec<f64>, ModelError> {
    let p = emb.p();
    if counts.len() != p || weights.len() != p {
        return Err(ModelError::DimMismatch {
            what: "visit length p",
            expected: p,
            found: counts.len().min(weights.len()),
        });
    }
    let mut out = vec![0.0; emb.q()];
    for j in 0..p {
        let c = counts[j] * weights[j] / p as f64;
        for (o, e) in out.iter_mut().zip(emb.features.row(j)) {
            *o += c * e;
        }
    }
    Ok(out)
}

fn graph_for(tape: &mut Tape, params: &ModelParams, q: usize) -> Result<ModelGraph, ModelError> {
    // attention and recurrence do not read the embedding table; a dummy one-row
    // table keeps `build` usable for them
    let dummy = EmbeddingTable::new(vec!["_".into()], vec![vec![1.0; q]], vec![1.0; q])
        .map_err(|e| ModelError::Config(e.to_string()))?;
    ModelGraph::build(tape, params, &dummy, frozen)
}

/// Visit attention for a `T x q` embedding sequence.
pub fn visit_attention(phi: &Tensor, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let g = graph_for(&mut tape, params, params.dims.q)?;
    let phi = tape.constant(phi.clone());
    let psi = g.attention(&mut tape, phi)?;
    Ok(tape.value(psi).data().to_vec())
}

/// Bidirectional GRU representations `F(t)` (`T x q`).
pub fn bigru_forward(phi: &Tensor, psi: &[f64], params: &ModelParams) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let g = graph_for(&mut tape, params, params.dims.q)?;
    let phi = tape.constant(phi.clone());
    let psi = tape.constant(Tensor::vector(psi.to_vec()));
    let f = g.bigru(&mut tape, phi, psi)?;
    Ok(tape.value(f).clone())
}

/// Per-visit probabilities from both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub p_y: Vec<f64>,
    pub p_s: Vec<f64>,
    pub reps: Tensor,
}

pub fn predict(series: &PatientSeries, emb: &EmbeddingTable, params: &ModelParams) -> Result<Prediction, ModelError> {
    let mut tape = Tape::new();
    let g = ModelGraph::build(&mut tape, params, emb, frozen)?;
    let n = g.forward_series(&mut tape, series)?;
    Ok(Prediction {
        p_y: tape.value(n.p_y).data().to_vec(),
        p_s: tape.value(n.p_s).data().to_vec(),
        reps: tape.value(n.reps).clone(),
    })
}

/// Predictions for many patients sharing one tape for the concept weights.
pub fn predict_many(
    patients: &[PatientSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
) -> Result<Vec<Prediction>, ModelError> {
    let mut tape = Tape::new();
    let g = ModelGraph::build(&mut tape, params, emb, frozen)?;
    let base = tape.len();
    let mut out = Vec::with_capacity(patients.len());
    for s in patients {
        let n = g.forward_series(&mut tape, s)?;
        out.push(Prediction {
            p_y: tape.value(n.p_y).data().to_vec(),
            p_s: tape.value(n.p_s).data().to_vec(),
            reps: tape.value(n.reps).clone(),
        });
        tape.truncate(base);
    }
    Ok(out)
}
