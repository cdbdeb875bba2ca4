//! Planted-signal synthetic cohorts with known onset times.
//!
//! Every patient has `T ~ U{t_min..=t_max}` visits. Signal features follow a
//! Poisson law whose rate rises by `lift` while the phenotype is active;
//! noise features never change. The first signal feature is the surrogate and
//! utilization is the visit's total count.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::data::{Cohort, DataError, EmbeddingTable, PatientSeries};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub frac_labeled: f64,
    pub p_features: usize,
    pub n_signal: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Per-visit probability that the phenotype starts.
    pub onset_hazard: f64,
    /// Per-visit probability that an active episode ends (relapse mode only).
    pub offset_hazard: f64,
    /// Extra expected count per signal feature while active.
    pub lift: f64,
    /// Rate of every noise feature.
    pub background_rate: f64,
    /// Rate of every signal feature while inactive.
    pub signal_background_rate: f64,
    pub relapse: bool,
    pub embedding_dim: usize,
    /// Norm of the surrogate embedding; feature embeddings share its scale.
    pub embedding_scale: f64,
    /// Relative spread of signal embeddings around the surrogate direction.
    pub signal_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 600,
            frac_labeled: 1.0 / 6.0,
            p_features: 50,
            n_signal: 5,
            t_min: 6,
            t_max: 20,
            onset_hazard: 0.06,
            offset_hazard: 0.3,
            lift: 1.0,
            background_rate: 0.2,
            signal_background_rate: 0.03,
            relapse: false,
            embedding_dim: 10,
            embedding_scale: 1.0,
            signal_spread: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.frac_labeled) {
            return bad(format!("frac_labeled {} outside [0, 1]", self.frac_labeled));
        }
        if self.n_signal == 0 || self.n_signal > self.p_features {
            return bad(format!("need 1 <= n_signal <= p_features, got {} and {}", self.n_signal, self.p_features));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad(format!("need 1 <= t_min <= t_max, got {}..{}", self.t_min, self.t_max));
        }
        for (name, v) in [("onset_hazard", self.onset_hazard), ("offset_hazard", self.offset_hazard)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1)"));
            }
        }
        for (name, v) in [
            ("lift", self.lift),
            ("background_rate", self.background_rate),
            ("signal_background_rate", self.signal_background_rate),
            ("signal_spread", self.signal_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.signal_background_rate + self.lift <= 0.0 {
            return bad("active signal rate must be positive".into());
        }
        if self.embedding_dim == 0 || !(self.embedding_scale > 0.0) {
            return bad("embedding_dim and embedding_scale must be positive".into());
        }
        Ok(())
    }

    pub fn n_labeled(&self) -> usize {
        (self.frac_labeled * self.n_patients as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.p_features)
            .map(|j| {
                if j < self.n_signal {
                    format!("signal_{j}")
                } else {
                    format!("noise_{}", j - self.n_signal)
                }
            })
            .collect()
    }
}

/// Ground truth kept alongside a generated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Per-visit phenotype status for every patient, labeled or not.
    pub gold: Vec<Vec<u8>>,
    /// First active visit (1-based), `None` when censored.
    pub onset: Vec<Option<usize>>,
}

fn status<R: Rng>(rng: &mut R, t: usize, cfg: &SynthConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(t);
    let mut active = false;
    for _ in 0..t {
        if active {
            if cfg.relapse && rng.gen::<f64>() < cfg.offset_hazard {
                active = false;
            }
        } else if rng.gen::<f64>() < cfg.onset_hazard {
            active = true;
        }
        out.push(u8::from(active));
    }
    out
}

fn poisson<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        0.0
    } else {
        Poisson::new(rate).expect("positive rate").sample(rng)
    }
}

fn embeddings(cfg: &SynthConfig) -> Result<EmbeddingTable, SynthError> {
    let mut rng = rng::stream(cfg.seed, &[2]);
    let q = cfg.embedding_dim;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..q).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let anchor = unit(&mut rng);
    let rows = (0..cfg.p_features)
        .map(|j| {
            let v = unit(&mut rng);
            let row: Vec<f64> = if j < cfg.n_signal {
                anchor.iter().zip(&v).map(|(a, e)| a + cfg.signal_spread * e).collect()
            } else {
                v
            };
            row.into_iter().map(|x| x * cfg.embedding_scale).collect()
        })
        .collect();
    let surrogate = anchor.iter().map(|x| x * cfg.embedding_scale).collect();
    Ok(EmbeddingTable::new(cfg.feature_names(), rows, surrogate)?)
}

/// Cohort, ground truth and embedding table for `cfg`.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<(Cohort, SynthTruth, EmbeddingTable), SynthError> {
    cfg.validate()?;
    let p = cfg.p_features;
    let n_labeled = cfg.n_labeled();
    let mut patients = Vec::with_capacity(cfg.n_patients);
    let mut truth = SynthTruth {
        gold: Vec::with_capacity(cfg.n_patients),
        onset: Vec::with_capacity(cfg.n_patients),
    };
    for i in 0..cfg.n_patients {
        let mut rng = rng::stream(cfg.seed, &[1, i as u64]);
        let t = rng.gen_range(cfg.t_min..=cfg.t_max);
        let gold = status(&mut rng, t, cfg);
        let mut features = Vec::with_capacity(t * p);
        for &y in &gold {
            for j in 0..p {
                let rate = if j < cfg.n_signal {
                    cfg.signal_background_rate + if y == 1 { cfg.lift } else { 0.0 }
                } else {
                    cfg.background_rate
                };
                features.push(poisson(&mut rng, rate));
            }
        }
        let surrogate = (0..t).map(|u| features[u * p]).collect();
        let utilization = (0..t).map(|u| features[u * p..(u + 1) * p].iter().sum()).collect();
        truth.onset.push(gold.iter().position(|&y| y == 1).map(|u| u + 1));
        patients.push(PatientSeries {
            id: format!("P{i:05}"),
            features,
            p,
            gold: (i < n_labeled).then(|| gold.clone()),
            silver: None,
            surrogate_counts: Some(surrogate),
            utilization: Some(utilization),
        });
        truth.gold.push(gold);
    }
    let cohort = Cohort::new(patients, cfg.feature_names())?;
    Ok((cohort, truth, embeddings(cfg)?))
}

/// Per-visit log-likelihood ratio of active versus inactive status from the
/// signal counts under the generating intensities.
pub fn oracle_scores(cohort: &Cohort, cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let b = cfg.signal_background_rate;
    let a = b + cfg.lift;
    let per_count = if b > 0.0 { (a / b).ln() } else { f64::INFINITY };
    cohort
        .patients
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|t| {
                    let c: f64 = s.visit(t)[..cfg.n_signal].iter().sum();
                    if per_count.is_infinite() {
                        // any signal count proves activity
                        if c > 0.0 { f64::INFINITY } else { -cfg.lift * cfg.n_signal as f64 }
                    } else {
                        c * per_count - cfg.lift * cfg.n_signal as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Result of [`split`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Cohort,
    pub eval: Cohort,
    pub train_index: Vec<usize>,
    pub eval_index: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Patient-level split that keeps the labeled fraction on both sides.
pub fn split(cohort: &Cohort, frac_train: f64, seed: u64) -> Result<Split, SynthError> {
    if !(frac_train > 0.0 && frac_train < 1.0) {
        return Err(SynthError::Config(format!("frac_train {frac_train} outside (0, 1)")));
    }
    let mut rng = rng::stream(seed, &[3]);
    let mut labeled: Vec<usize> = (0..cohort.n_labeled).collect();
    let mut unlabeled: Vec<usize> = (cohort.n_labeled..cohort.len()).collect();
    labeled.shuffle(&mut rng);
    unlabeled.shuffle(&mut rng);
    let cut = |n: usize| ((n as f64 * frac_train).round() as usize).min(n);
    let (lt, ut) = (cut(labeled.len()), cut(unlabeled.len()));
    let sorted = |part: &[usize]| {
        let mut v = part.to_vec();
        v.sort_unstable();
        v
    };
    let train_index: Vec<usize> = sorted(&labeled[..lt]).into_iter().chain(sorted(&unlabeled[..ut])).collect();
    let eval_index: Vec<usize> = sorted(&labeled[lt..]).into_iter().chain(sorted(&unlabeled[ut..])).collect();
    if train_index.is_empty() || eval_index.is_empty() {
        return Err(SynthError::Config("split leaves one side empty".into()));
    }
    let take = |idx: &[usize]| -> Result<Cohort, SynthError> {
        let pts = idx.iter().map(|&i| cohort.patients[i].clone()).collect();
        Ok(Cohort::new(pts, cohort.feature_names.clone())?)
    };
    let train = take(&train_index)?;
    let eval = take(&eval_index)?;
    let mut warnings = Vec::new();
    for (name, c) in [("train", &train), ("eval", &eval)] {
        let labels: Vec<u8> = c.labeled().iter().filter_map(|s| s.gold.as_ref()).flatten().copied().collect();
        if !(labels.contains(&0) && labels.contains(&1)) {
            warnings.push(format!("{name} split lacks one gold class"));
        }
    }
    Ok(Split {
        train,
        eval,
        train_index,
        eval_index,
        warnings,
    })
}

#[cfg(test)]
mod tests;
