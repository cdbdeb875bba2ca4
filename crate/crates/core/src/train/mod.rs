//! Two-stage optimization: silver pre-training with the gold head frozen,
//! then joint fine-tuning with the gold loss and the optional concordance term.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::augment::{self, AugmentConfig, AugmentError, SyntheticSeries};
use crate::data::{Cohort, EmbeddingTable};
use crate::losses::{evaluate, Batch, Components, LossConfig, LossError, Stage};
use crate::model::{ModelParams, Moments, ParamId};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("train config: {0}")]
    Config(String),
    #[error("non-finite {what} in {stage:?} epoch {epoch}, batch [{patients}]")]
    NonFinite {
        what: &'static str,
        stage: Stage,
        epoch: usize,
        patients: String,
    },
    #[error("patient {0} has no silver labels")]
    MissingSilver(String),
    #[error("fine-tuning needs at least one labeled patient")]
    NoLabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Patients per step, drawn separately for the gold and silver terms.
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: Option<AugmentConfig>,
    /// One step per epoch over the whole cohort.
    pub full_batch: bool,
    /// Draw a fresh synthetic set every fine-tuning epoch.
    pub regenerate_synthetic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs_pretrain: 200,
            epochs_finetune: 200,
            batch_size: 16,
            seed: 0,
            loss: LossConfig::default(),
            augment: None,
            full_batch: false,
            regenerate_synthetic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        self.loss.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Fresh optimizer state: zero moments at step 0.
pub fn adam_init(params: &ModelParams) -> Moments {
    let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    Moments {
        step: 0,
        first: zeros.clone(),
        second: zeros,
    }
}

/// One bias-corrected Adam update. Parameters rejected by `trains` keep their
/// values and their moments; the step counter is shared.
pub fn adam_step(
    params: &ModelParams,
    grads: &[Tensor],
    state: &Moments,
    cfg: &TrainConfig,
    trains: impl Fn(ParamId) -> bool,
) -> Result<(ModelParams, Moments), TrainError> {
    let n = ParamId::ALL.len();
    if grads.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(TrainError::Config(format!(
            "adam: expected {n} tensors, got {} grads and {}/{} moments",
            grads.len(),
            state.first.len(),
            state.second.len()
        )));
    }
    let mut next = params.clone();
    let mut moments = state.clone();
    moments.step += 1;
    let t = moments.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, &id) in ParamId::ALL.iter().enumerate() {
        let g = &grads[k];
        if g.shape() != params.get(id).shape() {
            return Err(TrainError::Config(format!("adam: gradient shape mismatch for {}", id.name())));
        }
        if !g.is_finite() {
            return Err(TrainError::Config(format!("adam: non-finite gradient for {}", id.name())));
        }
        if !trains(id) {
            continue;
        }
        let m = moments.first[k].data_mut();
        let v = moments.second[k].data_mut();
        let theta = next.get_mut(id).data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            theta[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok((next, moments))
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    /// Step-averaged components, one entry per epoch.
    pub epochs: Vec<Components>,
    pub wall_seconds: f64,
    pub checksum: String,
}

impl TrainReport {
    /// One `key=value` record per epoch followed by a summary line. Wall time
    /// is left out so that equal runs give equal text.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |x| format!("{x}"));
        let mut out = String::new();
        for (e, c) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                out,
                "epoch={} supervised={} unsupervised={} penalty={} contrast={} total={}",
                e + 1,
                fmt(c.supervised),
                fmt(c.unsupervised),
                fmt(c.penalty),
                fmt(c.contrast),
                c.total
            );
        }
        let stage = match self.stage {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        };
        let _ = writeln!(
            out,
            "stage={stage} epochs={} checksum={}",
            self.epochs.len(),
            self.checksum
        );
        out
    }
}

/// Parameters, optimizer state and report after a stage.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub moments: Moments,
    pub report: TrainReport,
}

struct StepPlan {
    supervised: Vec<usize>,
    unsupervised: Vec<usize>,
}

/// Batches of one epoch. Silver batches partition a shuffled cohort; gold
/// batches walk a shuffled labeled list, wrapping around as needed.
fn epoch_plan(cohort: &Cohort, cfg: &TrainConfig, stage: Stage, epoch: usize) -> Vec<StepPlan> {
    let labeled: Vec<usize> = (0..cohort.n_labeled).collect();
    let everyone: Vec<usize> = (0..cohort.len()).collect();
    let uses_gold = stage == Stage::Finetune;
    if cfg.full_batch {
        return vec![StepPlan {
            supervised: if uses_gold { labeled } else { Vec::new() },
            unsupervised: everyone,
        }];
    }
    let stage_tag = match stage {
        Stage::Pretrain => 0,
        Stage::Finetune => 1,
    };
    let mut rng = rng::stream(cfg.seed, &[10, stage_tag, epoch as u64]);
    let mut order = everyone;
    order.shuffle(&mut rng);
    let mut gold_order = labeled;
    gold_order.shuffle(&mut rng);
    let gold_batch = cfg.batch_size.min(gold_order.len());
    order
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(step, chunk)| {
            let supervised = if uses_gold && gold_batch > 0 {
                (0..gold_batch)
                    .map(|j| gold_order[(step * gold_batch + j) % gold_order.len()])
                    .collect()
            } else {
                Vec::new()
            };
            StepPlan {
                supervised,
                unsupervised: chunk.to_vec(),
            }
        })
        .collect()
}

fn describe(cohort: &Cohort, idx: &[usize]) -> String {
    const SHOWN: usize = 8;
    let mut names: Vec<&str> = idx.iter().take(SHOWN).map(|&i| cohort.patients[i].id.as_str()).collect();
    if idx.len() > SHOWN {
        names.push("...");
    }
    names.join(" ")
}

fn average(parts: &[Components]) -> Components {
    let n = parts.len() as f64;
    let avg = |f: &dyn Fn(&Components) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = parts.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Components {
        supervised: avg(&|c| c.supervised),
        unsupervised: avg(&|c| c.unsupervised),
        penalty: avg(&|c| c.penalty),
        contrast: avg(&|c| c.contrast),
        total: parts.iter().map(|c| c.total).sum::<f64>() / n,
    }
}

fn synthetic_for(cohort: &Cohort, cfg: &TrainConfig, epoch: Option<usize>) -> Result<Vec<SyntheticSeries>, TrainError> {
    let Some(aug) = &cfg.augment else {
        return Ok(Vec::new());
    };
    let mut aug = aug.clone();
    if let Some(e) = epoch {
        aug.seed = rng::derive_seed(aug.seed, &[e as u64]);
    }
    Ok(augment::generate(cohort.labeled(), &aug)?)
}

fn run_stage(
    cohort: &Cohort,
    emb: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<TrainOutcome, TrainError> {
    let start = Instant::now();
    let epochs = match stage {
        Stage::Pretrain => cfg.epochs_pretrain,
        Stage::Finetune => cfg.epochs_finetune,
    };
    let mut synthetic = if stage == Stage::Finetune { synthetic_for(cohort, cfg, None)? } else { Vec::new() };
    let mut params = init.clone();
    let mut moments = adam_init(init);
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        if stage == Stage::Finetune && cfg.regenerate_synthetic && epoch > 0 {
            synthetic = synthetic_for(cohort, cfg, Some(epoch))?;
        }
        let mut parts = Vec::new();
        for plan in epoch_plan(cohort, cfg, stage, epoch) {
            let union: Vec<usize> = plan
                .supervised
                .iter()
                .chain(&plan.unsupervised)
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let (contrast_real, synth): (Vec<usize>, Vec<&SyntheticSeries>) = if synthetic.is_empty() {
                (Vec::new(), Vec::new())
            } else {
                let ids: BTreeSet<&str> = plan.supervised.iter().map(|&i| cohort.patients[i].id.as_str()).collect();
                let synth: Vec<&SyntheticSeries> =
                    synthetic.iter().filter(|s| ids.contains(s.source_id.as_str())).collect();
                if synth.is_empty() {
                    (Vec::new(), Vec::new())
                } else {
                    (plan.supervised.clone(), synth)
                }
            };
            let batch = Batch {
                patients: &cohort.patients,
                supervised: plan.supervised,
                unsupervised: plan.unsupervised,
                penalized: union.clone(),
                contrast_real,
                synthetic: synth,
            };
            let ev = evaluate(&batch, emb, &params, &cfg.loss, stage, true)?;
            let non_finite = |what| TrainError::NonFinite {
                what,
                stage,
                epoch: epoch + 1,
                patients: describe(cohort, &union),
            };
            if !ev.components.total.is_finite() {
                return Err(non_finite("loss"));
            }
            let grads = ev.grads.expect("gradients requested");
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(non_finite("gradient"));
            }
            (params, moments) = adam_step(&params, &grads, &moments, cfg, |id| stage.trains(id))?;
            parts.push(ev.components);
        }
        records.push(average(&parts));
    }
    let report = TrainReport {
        stage,
        epochs: records,
        wall_seconds: start.elapsed().as_secs_f64(),
        checksum: params.checksum(),
    };
    Ok(TrainOutcome {
        params,
        moments,
        report,
    })
}

/// Minimizes the silver objective from `init`; the gold head is never touched.
pub fn pretrain(
    cohort: &Cohort,
    emb: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if let Some(s) = cohort.patients.iter().find(|s| s.silver.is_none()) {
        return Err(TrainError::MissingSilver(s.id.clone()));
    }
    run_stage(cohort, emb, init, cfg, Stage::Pretrain)
}

/// Continues from pre-trained parameters on the semi-supervised objective,
/// adding the concordance term when `cfg.augment` is set. The optimizer state
/// starts fresh.
pub fn finetune(
    cohort: &Cohort,
    emb: &EmbeddingTable,
    pretrained: &ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cohort.n_labeled == 0 {
        return Err(TrainError::NoLabeled);
    }
    if cfg.loss.gamma != 0.0 {
        if let Some(s) = cohort.patients.iter().find(|s| s.silver.is_none()) {
            return Err(TrainError::MissingSilver(s.id.clone()));
        }
    }
    run_stage(cohort, emb, pretrained, cfg, Stage::Finetune)
}

#[cfg(test)]
mod tests;
