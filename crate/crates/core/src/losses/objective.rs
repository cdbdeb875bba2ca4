//! Composition of the loss terms over patient batches.

use std::collections::HashMap;

use super::kernel::{gold_weights, silver_weights};
use super::terms::{contrast, monotone_drop, smoothness, weighted_ce};
use super::{LossConfig, LossError, Penalty, PenaltyHead};
use crate::augment::SyntheticSeries;
use crate::data::{Cohort, EmbeddingTable, PatientSeries};
use crate::model::{ModelGraph, ModelParams, ParamId, PatientNodes};
use crate::numerics::{Tape, Tensor, Var};

/// Training stage, which fixes both the objective and the trainable set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Silver loss plus penalty; the gold head is frozen.
    Pretrain,
    /// Gold loss plus weighted silver loss, penalty and concordance.
    Finetune,
}

impl Stage {
    pub fn trains(self, id: ParamId) -> bool {
        match self {
            Stage::Pretrain => !id.is_gold_head(),
            Stage::Finetune => true,
        }
    }
}

/// Patients entering each term, as indices into `patients`.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub patients: &'a [PatientSeries],
    pub supervised: Vec<usize>,
    pub unsupervised: Vec<usize>,
    pub penalized: Vec<usize>,
    /// Real patients paired with every synthetic series in the concordance loss.
    pub contrast_real: Vec<usize>,
    pub synthetic: Vec<&'a SyntheticSeries>,
}

impl<'a> Batch<'a> {
    /// Every term over the whole cohort; the concordance loss pairs the labeled
    /// block with the full synthetic set.
    pub fn full(cohort: &'a Cohort, synthetic: Option<&'a [SyntheticSeries]>) -> Self {
        let all: Vec<usize> = (0..cohort.len()).collect();
        let labeled: Vec<usize> = (0..cohort.n_labeled).collect();
        let synthetic: Vec<&SyntheticSeries> = synthetic.map(|s| s.iter().collect()).unwrap_or_default();
        Self {
            patients: &cohort.patients,
            supervised: labeled.clone(),
            unsupervised: all.clone(),
            penalized: all,
            contrast_real: if synthetic.is_empty() { Vec::new() } else { labeled },
            synthetic,
        }
    }
}

/// Scalar nodes of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub supervised: Option<Var>,
    pub unsupervised: Option<Var>,
    pub penalty: Option<Var>,
    pub contrast: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Components {
    pub supervised: Option<f64>,
    pub unsupervised: Option<f64>,
    pub penalty: Option<f64>,
    pub contrast: Option<f64>,
    pub total: f64,
}

impl ObjectiveNodes {
    pub fn values(&self, tape: &Tape) -> Components {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v));
        Components {
            supervised: get(self.supervised),
            unsupervised: get(self.unsupervised),
            penalty: get(self.penalty),
            contrast: get(self.contrast),
            total: tape.scalar(self.total),
        }
    }
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>, LossError> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &v in rest {
        acc = tape.add(acc, v)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / terms.len() as f64)))
}

fn weighted_sum(tape: &mut Tape, parts: &[(Option<Var>, f64)]) -> Result<Var, LossError> {
    let mut acc: Option<Var> = None;
    for &(v, w) in parts {
        let Some(v) = v else { continue };
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { v } else { tape.scale(v, w) };
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

/// Builds the objective of `stage` over `batch` on `tape`.
///
/// Each patient is forwarded once however many terms it enters.
pub fn build_objective(
    tape: &mut Tape,
    graph: &ModelGraph,
    batch: &Batch,
    cfg: &LossConfig,
    stage: Stage,
) -> Result<ObjectiveNodes, LossError> {
    let mut nodes: HashMap<usize, PatientNodes> = HashMap::new();
    let mut forward = |tape: &mut Tape, i: usize| -> Result<PatientNodes, LossError> {
        if let Some(n) = nodes.get(&i) {
            return Ok(*n);
        }
        let n = graph.forward_series(tape, &batch.patients[i])?;
        nodes.insert(i, n);
        Ok(n)
    };

    let supervised = if stage == Stage::Finetune {
        if batch.supervised.is_empty() {
            return Err(LossError::NoLabeled);
        }
        let mut terms = Vec::with_capacity(batch.supervised.len());
        for &i in &batch.supervised {
            let s = &batch.patients[i];
            let gold = s.gold.as_ref().ok_or_else(|| LossError::MissingGold(s.id.clone()))?;
            let n = forward(tape, i)?;
            let targets: Vec<f64> = gold.iter().map(|&y| f64::from(y)).collect();
            terms.push(weighted_ce(tape, n.p_y, &targets, &gold_weights(gold, &cfg.kernel))?);
        }
        mean(tape, &terms)?
    } else {
        None
    };

    let want_unsupervised = stage == Stage::Pretrain || cfg.gamma != 0.0;
    let unsupervised = if want_unsupervised {
        let mut terms = Vec::with_capacity(batch.unsupervised.len());
        for &i in &batch.unsupervised {
            let s = &batch.patients[i];
            let silver = s.silver.as_ref().ok_or_else(|| LossError::MissingSilver(s.id.clone()))?;
            let n = forward(tape, i)?;
            terms.push(weighted_ce(tape, n.p_s, silver, &silver_weights(silver, &cfg.kernel))?);
        }
        mean(tape, &terms)?
    } else {
        None
    };

    let penalty = if cfg.lambda != 0.0 {
        let mut terms = Vec::with_capacity(batch.penalized.len());
        for &i in &batch.penalized {
            let n = forward(tape, i)?;
            let term = match (cfg.penalty, cfg.penalty_head) {
                (Penalty::Cumulative, PenaltyHead::Silver) => monotone_drop(tape, n.p_s)?,
                (Penalty::Cumulative, PenaltyHead::Gold) => monotone_drop(tape, n.p_y)?,
                (Penalty::Recurrent, _) => smoothness(tape, n.reps)?,
            };
            terms.push(term);
        }
        mean(tape, &terms)?
    } else {
        None
    };

    let contrast_node = if stage == Stage::Finetune && !batch.synthetic.is_empty() && !batch.contrast_real.is_empty()
    {
        let mut synth = Vec::with_capacity(batch.synthetic.len());
        for s in &batch.synthetic {
            synth.push((graph.forward(tape, s.feature_tensor())?.reps, s.gold.as_slice()));
        }
        let mut terms = Vec::with_capacity(batch.contrast_real.len() * synth.len());
        for &i in &batch.contrast_real {
            let s = &batch.patients[i];
            let gold = s.gold.as_ref().ok_or_else(|| LossError::MissingGold(s.id.clone()))?;
            let n = forward(tape, i)?;
            for &(reps, sg) in &synth {
                terms.push(contrast(tape, n.reps, gold, reps, sg, cfg.margin)?);
            }
        }
        mean(tape, &terms)?
    } else {
        None
    };

    let total = match stage {
        Stage::Pretrain => weighted_sum(tape, &[(unsupervised, 1.0), (penalty, cfg.lambda)])?,
        Stage::Finetune => weighted_sum(
            tape,
            &[
                (supervised, 1.0),
                (unsupervised, cfg.gamma),
                (penalty, cfg.lambda),
                (contrast_node, cfg.kappa_cc),
            ],
        )?,
    };
    Ok(ObjectiveNodes {
        supervised,
        unsupervised,
        penalty,
        contrast: contrast_node,
        total,
    })
}

/// Objective value and, on request, its gradient for every parameter in
/// [`ParamId::ALL`] order (zeros for parameters the stage keeps frozen).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub components: Components,
    pub grads: Option<Vec<Tensor>>,
}

pub fn evaluate(
    batch: &Batch,
    emb: &EmbeddingTable,
    params: &ModelParams,
    cfg: &LossConfig,
    stage: Stage,
    with_grad: bool,
) -> Result<Evaluation, LossError> {
    let mut tape = Tape::new();
    let graph = ModelGraph::build(&mut tape, params, emb, |id| with_grad && stage.trains(id))?;
    let nodes = build_objective(&mut tape, &graph, batch, cfg, stage)?;
    let components = nodes.values(&tape);
    let grads = if with_grad {
        let mut g = tape.backward(nodes.total)?;
        Some(
            ParamId::ALL
                .iter()
                .map(|&id| {
                    g.take(graph.var(id))
                        .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(Evaluation { components, grads })
}

fn single_term(
    patients: &[PatientSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
    term: impl Fn(&mut Tape, PatientNodes, &PatientSeries) -> Result<Var, LossError>,
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let graph = ModelGraph::build(&mut tape, params, emb, |_| false)?;
    let mut terms = Vec::with_capacity(patients.len());
    for s in patients {
        let n = graph.forward_series(&mut tape, s)?;
        terms.push(term(&mut tape, n, s)?);
    }
    Ok(mean(&mut tape, &terms)?.map_or(0.0, |v| tape.scalar(v)))
}

/// Kernel-weighted cross-entropy of the gold head against gold labels.
pub fn loss_supervised(
    labeled: &[PatientSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    if labeled.is_empty() {
        return Err(LossError::NoLabeled);
    }
    single_term(labeled, emb, params, |tape, n, s| {
        let gold = s.gold.as_ref().ok_or_else(|| LossError::MissingGold(s.id.clone()))?;
        let targets: Vec<f64> = gold.iter().map(|&y| f64::from(y)).collect();
        weighted_ce(tape, n.p_y, &targets, &gold_weights(gold, &cfg.kernel))
    })
}

/// Kernel-weighted soft cross-entropy of the silver head against silver labels.
pub fn loss_unsupervised(
    patients: &[PatientSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    single_term(patients, emb, params, |tape, n, s| {
        let silver = s.silver.as_ref().ok_or_else(|| LossError::MissingSilver(s.id.clone()))?;
        weighted_ce(tape, n.p_s, silver, &silver_weights(silver, &cfg.kernel))
    })
}

/// Mean per-patient decrease of the silver head across consecutive visits.
pub fn penalty_cum(patients: &[PatientSeries], emb: &EmbeddingTable, params: &ModelParams) -> Result<f64, LossError> {
    single_term(patients, emb, params, |tape, n, _| monotone_drop(tape, n.p_s))
}

/// Mean per-patient distance between consecutive visit representations.
pub fn penalty_rec(patients: &[PatientSeries], emb: &EmbeddingTable, params: &ModelParams) -> Result<f64, LossError> {
    single_term(patients, emb, params, |tape, n, _| smoothness(tape, n.reps))
}

/// Concordance loss between real labeled patients and a synthetic set.
pub fn loss_contrastive(
    real: &[PatientSeries],
    synthetic: &[SyntheticSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
    margin: f64,
) -> Result<f64, LossError> {
    if synthetic.is_empty() {
        return Err(LossError::EmptySynthetic);
    }
    if real.is_empty() {
        return Err(LossError::NoLabeled);
    }
    let mut tape = Tape::new();
    let graph = ModelGraph::build(&mut tape, params, emb, |_| false)?;
    let base = tape.len();
    let synth_reps: Vec<Tensor> = synthetic
        .iter()
        .map(|s| {
            let n = graph.forward(&mut tape, s.feature_tensor())?;
            Ok(tape.value(n.reps).clone())
        })
        .collect::<Result<_, LossError>>()?;
    tape.truncate(base);
    let mut total = 0.0;
    for s in real {
        let gold = s.gold.as_ref().ok_or_else(|| LossError::MissingGold(s.id.clone()))?;
        let n = graph.forward_series(&mut tape, s)?;
        let mark = tape.len();
        for (reps, syn) in synth_reps.iter().zip(synthetic) {
            let r = tape.constant(reps.clone());
            let c = contrast(&mut tape, n.reps, gold, r, &syn.gold, margin)?;
            total += tape.scalar(c);
            tape.truncate(mark);
        }
        tape.truncate(base);
    }
    Ok(total / (real.len() * synthetic.len()) as f64)
}

/// Silver loss plus the configured penalty.
pub fn loss_pretrain(
    patients: &[PatientSeries],
    emb: &EmbeddingTable,
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    let idx: Vec<usize> = (0..patients.len()).collect();
    let batch = Batch {
        patients,
        supervised: Vec::new(),
        unsupervised: idx.clone(),
        penalized: idx,
        contrast_real: Vec::new(),
        synthetic: Vec::new(),
    };
    Ok(evaluate(&batch, emb, params, cfg, Stage::Pretrain, false)?.components.total)
}

/// Gold loss plus weighted silver loss and penalty, plus the weighted
/// concordance loss when a synthetic set is supplied.
pub fn loss_semisup(
    cohort: &Cohort,
    synthetic: Option<&[SyntheticSeries]>,
    emb: &EmbeddingTable,
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<Components, LossError> {
    if synthetic.is_some_and(|s| s.is_empty()) {
        return Err(LossError::EmptySynthetic);
    }
    let batch = Batch::full(cohort, synthetic);
    Ok(evaluate(&batch, emb, params, cfg, Stage::Finetune, false)?.components)
}
