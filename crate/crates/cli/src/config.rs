//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. [`RunConfig::echo`] prints every key with its resolved value and
//! parses back to the same configuration.

use std::fmt::Display;
use std::str::FromStr;

use phenotime::augment::AugmentConfig;
use phenotime::data::SilverConfig;
use phenotime::eval::{EvalConfig, Prevalence};
use phenotime::losses::{LossConfig, Penalty, PenaltyHead};
use phenotime::model::ModelDims;
use phenotime::rng::derive_seed;
use phenotime::synth::SynthConfig;
use phenotime::train::TrainConfig;

use crate::error::CliError;

/// Which checkpoint `predict` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointChoice {
    Pretrain,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Gold,
    Silver,
}

/// Where `evaluate` finds gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoldSource {
    /// Ground-truth file written by `generate`, covering every patient.
    Truth,
    /// Gold labels of the labeled block of the cohort file.
    Cohort,
}

/// Model widths; the embedding width comes from the embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelWidths {
    pub d: usize,
    pub hidden: usize,
    pub cr_branch: usize,
    pub cr_fusion: usize,
}

impl ModelWidths {
    pub fn dims(&self, q: usize) -> ModelDims {
        ModelDims {
            q,
            d: self.d,
            hidden: self.hidden,
            cr_branch: self.cr_branch,
            cr_fusion: self.cr_fusion,
        }
    }
}

impl Default for ModelWidths {
    fn default() -> Self {
        let d = ModelDims::with_q(1);
        Self {
            d: d.d,
            hidden: d.hidden,
            cr_branch: d.cr_branch,
            cr_fusion: d.cr_fusion,
        }
    }
}

/// File locations; empty means the default name inside the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paths {
    pub cohort: String,
    pub embeddings: String,
    pub truth: String,
    pub silver_cohort: String,
    pub synthetic: String,
    pub pretrain_checkpoint: String,
    pub checkpoint: String,
    pub predict_cohort: String,
    pub curves: String,
    pub metrics: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub silver: SilverConfig,
    pub model: ModelWidths,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Add the concordance term during `train`.
    pub use_augment: bool,
    /// Let `train` start from a fresh initialization without a pretrain checkpoint.
    pub from_scratch: bool,
    pub augment: AugmentConfig,
    pub predict_checkpoint: CheckpointChoice,
    pub predict_head: Head,
    pub eval: EvalConfig,
    pub eval_gold: GoldSource,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            silver: SilverConfig::default(),
            model: ModelWidths::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            use_augment: false,
            from_scratch: false,
            augment: AugmentConfig::default(),
            predict_checkpoint: CheckpointChoice::Train,
            predict_head: Head::Gold,
            eval: EvalConfig::default(),
            eval_gold: GoldSource::Truth,
            paths: Paths::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, CliError> {
    options.iter().find(|(name, _)| *name == value).map(|&(_, v)| v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("{key}: expected one of {}, got '{value}'", names.join("|")))
    })
}

fn name_of<T: Copy + PartialEq>(value: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, v)| *v == value).map(|(n, _)| *n).expect("every variant is named")
}

const PENALTIES: [(&str, Penalty); 2] = [("cumulative", Penalty::Cumulative), ("recurrent", Penalty::Recurrent)];
const PENALTY_HEADS: [(&str, PenaltyHead); 2] = [("silver", PenaltyHead::Silver), ("gold", PenaltyHead::Gold)];
const CHECKPOINTS: [(&str, CheckpointChoice); 2] =
    [("pretrain", CheckpointChoice::Pretrain), ("train", CheckpointChoice::Train)];
const HEADS: [(&str, Head); 2] = [("gold", Head::Gold), ("silver", Head::Silver)];
const PREVALENCES: [(&str, Prevalence); 2] = [("visit", Prevalence::Visit), ("patient", Prevalence::Patient)];
const GOLD_SOURCES: [(&str, GoldSource); 2] = [("truth", GoldSource::Truth), ("cohort", GoldSource::Cohort)];

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let s = &mut self.synth;
        let l = &mut self.loss;
        let t = &mut self.train;
        let a = &mut self.augment;
        let p = &mut self.paths;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "synth.n_patients" => s.n_patients = parse(key, v)?,
            "synth.frac_labeled" => s.frac_labeled = parse(key, v)?,
            "synth.p_features" => s.p_features = parse(key, v)?,
            "synth.n_signal" => s.n_signal = parse(key, v)?,
            "synth.t_min" => s.t_min = parse(key, v)?,
            "synth.t_max" => s.t_max = parse(key, v)?,
            "synth.onset_hazard" => s.onset_hazard = parse(key, v)?,
            "synth.offset_hazard" => s.offset_hazard = parse(key, v)?,
            "synth.lift" => s.lift = parse(key, v)?,
            "synth.background_rate" => s.background_rate = parse(key, v)?,
            "synth.signal_background_rate" => s.signal_background_rate = parse(key, v)?,
            "synth.relapse" => s.relapse = parse(key, v)?,
            "synth.embedding_dim" => s.embedding_dim = parse(key, v)?,
            "synth.embedding_scale" => s.embedding_scale = parse(key, v)?,
            "synth.signal_spread" => s.signal_spread = parse(key, v)?,
            "silver.tau" => self.silver.tau = parse(key, v)?,
            "silver.alpha" => self.silver.alpha = parse(key, v)?,
            "silver.relapse" => self.silver.relapse = parse(key, v)?,
            "model.d" => self.model.d = parse(key, v)?,
            "model.hidden" => self.model.hidden = parse(key, v)?,
            "model.cr_branch" => self.model.cr_branch = parse(key, v)?,
            "model.cr_fusion" => self.model.cr_fusion = parse(key, v)?,
            "loss.penalty" => l.penalty = choice(key, v, &PENALTIES)?,
            "loss.penalty_head" => l.penalty_head = choice(key, v, &PENALTY_HEADS)?,
            "loss.lambda" => l.lambda = parse(key, v)?,
            "loss.gamma" => l.gamma = parse(key, v)?,
            "loss.kappa_cc" => l.kappa_cc = parse(key, v)?,
            "loss.margin" => l.margin = parse(key, v)?,
            "loss.kernel_bandwidth" => l.kernel.h = parse(key, v)?,
            "loss.kernel_w_min" => l.kernel.w_min = parse(key, v)?,
            "loss.kernel_silver_threshold" => l.kernel.kappa_thr = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "train.adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.epochs_pretrain" => t.epochs_pretrain = parse(key, v)?,
            "train.epochs_finetune" => t.epochs_finetune = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.full_batch" => t.full_batch = parse(key, v)?,
            "train.regenerate_synthetic" => t.regenerate_synthetic = parse(key, v)?,
            "train.augment" => self.use_augment = parse(key, v)?,
            "train.from_scratch" => self.from_scratch = parse(key, v)?,
            "augment.replicas" => a.replicas = parse(key, v)?,
            "augment.a_mid" => a.a_mid = parse(key, v)?,
            "augment.max_shift" => a.max_shift = parse(key, v)?,
            "augment.noise_sd" => a.noise_sd = parse(key, v)?,
            "augment.keep_prob" => a.keep_prob = parse(key, v)?,
            "augment.legacy_floor" => a.legacy_floor = parse(key, v)?,
            "predict.checkpoint" => self.predict_checkpoint = choice(key, v, &CHECKPOINTS)?,
            "predict.head" => self.predict_head = choice(key, v, &HEADS)?,
            "eval.spec_target" => self.eval.spec_target = parse(key, v)?,
            "eval.prevalence" => self.eval.prevalence = choice(key, v, &PREVALENCES)?,
            "eval.gold" => self.eval_gold = choice(key, v, &GOLD_SOURCES)?,
            "paths.cohort" => p.cohort = v.to_string(),
            "paths.embeddings" => p.embeddings = v.to_string(),
            "paths.truth" => p.truth = v.to_string(),
            "paths.silver_cohort" => p.silver_cohort = v.to_string(),
            "paths.synthetic" => p.synthetic = v.to_string(),
            "paths.pretrain_checkpoint" => p.pretrain_checkpoint = v.to_string(),
            "paths.checkpoint" => p.checkpoint = v.to_string(),
            "paths.predict_cohort" => p.predict_cohort = v.to_string(),
            "paths.curves" => p.curves = v.to_string(),
            "paths.metrics" => p.metrics = v.to_string(),
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let l = &self.loss;
        let t = &self.train;
        let a = &self.augment;
        let p = &self.paths;
        vec![
            ("seed", self.seed.to_string()),
            ("synth.n_patients", s.n_patients.to_string()),
            ("synth.frac_labeled", s.frac_labeled.to_string()),
            ("synth.p_features", s.p_features.to_string()),
            ("synth.n_signal", s.n_signal.to_string()),
            ("synth.t_min", s.t_min.to_string()),
            ("synth.t_max", s.t_max.to_string()),
            ("synth.onset_hazard", s.onset_hazard.to_string()),
            ("synth.offset_hazard", s.offset_hazard.to_string()),
            ("synth.lift", s.lift.to_string()),
            ("synth.background_rate", s.background_rate.to_string()),
            ("synth.signal_background_rate", s.signal_background_rate.to_string()),
            ("synth.relapse", s.relapse.to_string()),
            ("synth.embedding_dim", s.embedding_dim.to_string()),
            ("synth.embedding_scale", s.embedding_scale.to_string()),
            ("synth.signal_spread", s.signal_spread.to_string()),
            ("silver.tau", self.silver.tau.to_string()),
            ("silver.alpha", self.silver.alpha.to_string()),
            ("silver.relapse", self.silver.relapse.to_string()),
            ("model.d", self.model.d.to_string()),
            ("model.hidden", self.model.hidden.to_string()),
            ("model.cr_branch", self.model.cr_branch.to_string()),
            ("model.cr_fusion", self.model.cr_fusion.to_string()),
            ("loss.penalty", name_of(l.penalty, &PENALTIES).into()),
            ("loss.penalty_head", name_of(l.penalty_head, &PENALTY_HEADS).into()),
            ("loss.lambda", l.lambda.to_string()),
            ("loss.gamma", l.gamma.to_string()),
            ("loss.kappa_cc", l.kappa_cc.to_string()),
            ("loss.margin", l.margin.to_string()),
            ("loss.kernel_bandwidth", l.kernel.h.to_string()),
            ("loss.kernel_w_min", l.kernel.w_min.to_string()),
            ("loss.kernel_silver_threshold", l.kernel.kappa_thr.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.adam_beta1", t.adam_beta1.to_string()),
            ("train.adam_beta2", t.adam_beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.epochs_pretrain", t.epochs_pretrain.to_string()),
            ("train.epochs_finetune", t.epochs_finetune.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.full_batch", t.full_batch.to_string()),
            ("train.regenerate_synthetic", t.regenerate_synthetic.to_string()),
            ("train.augment", self.use_augment.to_string()),
            ("train.from_scratch", self.from_scratch.to_string()),
            ("augment.replicas", a.replicas.to_string()),
            ("augment.a_mid", a.a_mid.to_string()),
            ("augment.max_shift", a.max_shift.to_string()),
            ("augment.noise_sd", a.noise_sd.to_string()),
            ("augment.keep_prob", a.keep_prob.to_string()),
            ("augment.legacy_floor", a.legacy_floor.to_string()),
            ("predict.checkpoint", name_of(self.predict_checkpoint, &CHECKPOINTS).into()),
            ("predict.head", name_of(self.predict_head, &HEADS).into()),
            ("eval.spec_target", self.eval.spec_target.to_string()),
            ("eval.prevalence", name_of(self.eval.prevalence, &PREVALENCES).into()),
            ("eval.gold", name_of(self.eval_gold, &GOLD_SOURCES).into()),
            ("paths.cohort", p.cohort.clone()),
            ("paths.embeddings", p.embeddings.clone()),
            ("paths.truth", p.truth.clone()),
            ("paths.silver_cohort", p.silver_cohort.clone()),
            ("paths.synthetic", p.synthetic.clone()),
            ("paths.pretrain_checkpoint", p.pretrain_checkpoint.clone()),
            ("paths.checkpoint", p.checkpoint.clone()),
            ("paths.predict_cohort", p.predict_cohort.clone()),
            ("paths.curves", p.curves.clone()),
            ("paths.metrics", p.metrics.clone()),
        ]
    }

    pub fn echo(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Generator settings with the run seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: derive_seed(self.seed, &[1]),
            ..self.augment.clone()
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, &[2])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[3]),
            loss: self.loss.clone(),
            augment: self.use_augment.then(|| self.augment_config()),
            ..self.train.clone()
        }
    }
}
