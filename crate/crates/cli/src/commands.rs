//! Command implementations. Every command reads its inputs from configured
//! paths (defaulting to fixed names in the output directory), writes its
//! artifacts there and records them in a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use phenotime::augment::{generate, write_synthetic};
use phenotime::data::{
    attach_silver, load_cohort, load_embeddings, save_cohort, save_embeddings, Cohort, EmbeddingTable, LoadOptions,
};
use phenotime::eval::{evaluate, parse_curves, write_curves, PredictionCurve};
use phenotime::model::{predict_many, Checkpoint, ModelParams};
use phenotime::synth::generate_cohort;
use phenotime::train::{finetune, pretrain, TrainOutcome};

use crate::config::{CheckpointChoice, GoldSource, Head, RunConfig};
use crate::error::CliError;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Silver,
    Augment,
    Pretrain,
    Train,
    Predict,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Silver => "silver",
            Command::Augment => "augment",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
        }
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    log: Vec<String>,
}

impl<'a> Run<'a> {
    fn resolve(&self, configured: &str, default: &str) -> PathBuf {
        if configured.is_empty() {
            self.out.join(default)
        } else {
            PathBuf::from(configured)
        }
    }

    fn cohort_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.cohort, "cohort.csv")
    }
    fn embeddings_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.embeddings, "embeddings.csv")
    }
    fn truth_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.truth, "truth.csv")
    }
    fn silver_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.silver_cohort, "cohort_silver.csv")
    }
    fn pretrain_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.pretrain_checkpoint, "pretrain.ckpt")
    }
    fn checkpoint_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.checkpoint, "model.ckpt")
    }
    fn curves_path(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.curves, "curves.csv")
    }

    fn require(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.is_file() {
            return Err(CliError::io(path, "file not found"));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn cohort(&mut self, path: &Path) -> Result<Cohort, CliError> {
        self.require(path)?;
        Ok(load_cohort(path, LoadOptions::default())?)
    }

    fn embeddings(&mut self, cohort: &Cohort) -> Result<EmbeddingTable, CliError> {
        let path = self.embeddings_path();
        self.require(&path)?;
        Ok(load_embeddings(&path)?.aligned_to(&cohort.feature_names)?)
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<(), CliError> {
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn checkpoint(&mut self, path: &Path, q: usize) -> Result<Checkpoint, CliError> {
        self.require(path)?;
        let ckpt = Checkpoint::load(path)?;
        let expected = self.cfg.model.dims(q).hash();
        if ckpt.config_hash != expected {
            return Err(CliError::Checkpoint(format!(
                "{}: config hash mismatch (checkpoint {}, config {expected})",
                path.display(),
                ckpt.config_hash
            )));
        }
        Ok(ckpt)
    }

    fn save_outcome(&mut self, outcome: &TrainOutcome, ckpt_path: &Path, report_name: &str) -> Result<(), CliError> {
        let q = outcome.params.dims.q;
        let ckpt = Checkpoint {
            config_hash: self.cfg.model.dims(q).hash(),
            params: outcome.params.clone(),
            moments: Some(outcome.moments.clone()),
        };
        self.write(ckpt_path, &ckpt.to_text())?;
        let report_path = self.out.join(report_name);
        self.write(&report_path, &outcome.report.to_text())?;
        self.log.push(format!("epochs={}", outcome.report.epochs.len()));
        if let Some(last) = outcome.report.epochs.last() {
            self.log.push(format!("final_total={}", last.total));
        }
        self.log.push(format!("checksum={}", outcome.report.checksum));
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `patient_id,t,y` rows with ground-truth status for every patient.
pub fn write_truth(ids: &[String], gold: &[Vec<u8>]) -> String {
    let mut out = String::from("patient_id,t,y\n");
    for (id, g) in ids.iter().zip(gold) {
        for (t, y) in g.iter().enumerate() {
            let _ = writeln!(out, "{id},{},{y}", t + 1);
        }
    }
    out
}

pub fn parse_truth(text: &str) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("patient_id,t,y") {
        return Err(CliError::Data("truth file: expected header 'patient_id,t,y'".into()));
    }
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("truth file line {}: {m}", i + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let t: usize = f[1].parse().map_err(|_| bad("invalid visit index"))?;
        let y: u8 = match f[2] {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label must be 0 or 1")),
        };
        if out.last().is_none_or(|(id, _)| id != f[0]) {
            out.push((f[0].to_string(), Vec::new()));
        }
        let g = &mut out.last_mut().expect("pushed above").1;
        if t != g.len() + 1 {
            return Err(bad(&format!("expected visit {}, found {t}", g.len() + 1)));
        }
        g.push(y);
    }
    Ok(out)
}

fn generate_cmd(run: &mut Run) -> Result<(), CliError> {
    let (cohort, truth, emb) = generate_cohort(&run.cfg.synth_config())?;
    let cohort_path = run.cohort_path();
    let emb_path = run.embeddings_path();
    let truth_path = run.truth_path();
    save_cohort(&cohort, &cohort_path)?;
    run.outputs.push(cohort_path);
    save_embeddings(&emb, &emb_path)?;
    run.outputs.push(emb_path);
    let ids: Vec<String> = cohort.patients.iter().map(|s| s.id.clone()).collect();
    run.write(&truth_path, &write_truth(&ids, &truth.gold))?;
    run.log.push(format!("patients={} labeled={} visits={}", cohort.len(), cohort.n_labeled, cohort.n_visits()));
    Ok(())
}

fn silver_cmd(run: &mut Run) -> Result<(), CliError> {
    let path = run.cohort_path();
    let cohort = attach_silver(run.cohort(&path)?, &run.cfg.silver)?;
    let out = run.silver_path();
    save_cohort(&cohort, &out)?;
    run.outputs.push(out);
    let values: Vec<f64> = cohort.patients.iter().filter_map(|s| s.silver.as_ref()).flatten().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let thr = run.cfg.loss.kernel.kappa_thr;
    let above = values.iter().filter(|&&v| v >= thr).count() as f64 / values.len().max(1) as f64;
    run.log.push(format!("silver_mean={mean} silver_frac_at_or_above_{thr}={above}"));
    Ok(())
}

fn augment_cmd(run: &mut Run) -> Result<(), CliError> {
    let path = run.cohort_path();
    let cohort = run.cohort(&path)?;
    let set = generate(cohort.labeled(), &run.cfg.augment_config())?;
    let out = run.resolve(&run.cfg.paths.synthetic, "synthetic.csv");
    run.write(&out, &write_synthetic(&set, &cohort.feature_names))?;
    run.log.push(format!("synthetic_series={}", set.len()));
    Ok(())
}

fn pretrain_cmd(run: &mut Run) -> Result<(), CliError> {
    let path = run.silver_path();
    let cohort = run.cohort(&path)?;
    let emb = run.embeddings(&cohort)?;
    let init = ModelParams::init(run.cfg.model.dims(emb.q()), run.cfg.init_seed())?;
    let outcome = pretrain(&cohort, &emb, &init, &run.cfg.train_config())?;
    let ckpt = run.pretrain_path();
    run.save_outcome(&outcome, &ckpt, "pretrain_report.txt")
}

fn train_cmd(run: &mut Run) -> Result<(), CliError> {
    let path = run.silver_path();
    let cohort = run.cohort(&path)?;
    let emb = run.embeddings(&cohort)?;
    let start = if run.cfg.from_scratch {
        ModelParams::init(run.cfg.model.dims(emb.q()), run.cfg.init_seed())?
    } else {
        let ckpt_path = run.pretrain_path();
        if !ckpt_path.is_file() {
            return Err(CliError::Precondition(format!(
                "pretrain checkpoint {} not found; run pretrain or set train.from_scratch = true",
                ckpt_path.display()
            )));
        }
        run.checkpoint(&ckpt_path, emb.q())?.params
    };
    let outcome = finetune(&cohort, &emb, &start, &run.cfg.train_config())?;
    let ckpt = run.checkpoint_path();
    run.save_outcome(&outcome, &ckpt, "train_report.txt")
}

fn predict_cmd(run: &mut Run) -> Result<(), CliError> {
    let cohort_path = run.resolve(&run.cfg.paths.predict_cohort, "cohort.csv");
    let cohort = run.cohort(&cohort_path)?;
    let emb = run.embeddings(&cohort)?;
    let ckpt_path = match run.cfg.predict_checkpoint {
        CheckpointChoice::Pretrain => run.pretrain_path(),
        CheckpointChoice::Train => run.checkpoint_path(),
    };
    let params = run.checkpoint(&ckpt_path, emb.q())?.params;
    let preds = predict_many(&cohort.patients, &emb, &params)?;
    let curves: Vec<PredictionCurve> = cohort
        .patients
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let probs = match run.cfg.predict_head {
                Head::Gold => p.p_y,
                Head::Silver => p.p_s,
            };
            PredictionCurve::from_probs(s.id.clone(), probs)
        })
        .collect();
    let out = run.curves_path();
    run.write(&out, &write_curves(&curves))?;
    run.log.push(format!("curves={}", curves.len()));
    Ok(())
}

fn evaluate_cmd(run: &mut Run) -> Result<(), CliError> {
    let curves_path = run.curves_path();
    run.require(&curves_path)?;
    let text = fs::read_to_string(&curves_path).map_err(|e| CliError::io(&curves_path, e))?;
    let curves = parse_curves(&text)?;
    let gold: Vec<(String, Vec<u8>)> = match run.cfg.eval_gold {
        GoldSource::Truth => {
            let path = run.truth_path();
            run.require(&path)?;
            parse_truth(&fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?)?
        }
        GoldSource::Cohort => {
            let path = run.cohort_path();
            let cohort = run.cohort(&path)?;
            cohort
                .labeled()
                .iter()
                .map(|s| (s.id.clone(), s.gold.clone().expect("labeled block has gold")))
                .collect()
        }
    };
    let lookup: std::collections::HashMap<&str, &Vec<u8>> = gold.iter().map(|(id, g)| (id.as_str(), g)).collect();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for c in &curves {
        match lookup.get(c.patient_id.as_str()) {
            Some(g) => {
                probs.push(c.p.clone());
                labels.push((*g).clone());
            }
            None if run.cfg.eval_gold == GoldSource::Truth => {
                return Err(CliError::Data(format!("patient {} has no ground-truth labels", c.patient_id)));
            }
            None => {}
        }
    }
    if probs.is_empty() {
        return Err(CliError::Data("no curve has gold labels".into()));
    }
    let report = evaluate(&probs, &labels, &run.cfg.eval)?;
    let out = run.resolve(&run.cfg.paths.metrics, "metrics.txt");
    run.write(&out, &report.to_text())?;
    run.log.push(report.to_text().trim_end().replace('\n', " "));
    Ok(())
}

/// Runs `cmd`, then writes the config echo and manifest. Returns the lines
/// printed to stdout.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    if !out.is_dir() {
        return Err(CliError::io(out, "output directory does not exist"));
    }
    let start = Instant::now();
    let mut run = Run {
        cfg,
        out,
        inputs: Vec::new(),
        outputs: Vec::new(),
        log: Vec::new(),
    };
    match cmd {
        Command::Generate => generate_cmd(&mut run)?,
        Command::Silver => silver_cmd(&mut run)?,
        Command::Augment => augment_cmd(&mut run)?,
        Command::Pretrain => pretrain_cmd(&mut run)?,
        Command::Train => train_cmd(&mut run)?,
        Command::Predict => predict_cmd(&mut run)?,
        Command::Evaluate => evaluate_cmd(&mut run)?,
    }
    let echo = cfg.echo();
    let echo_path = out.join(format!("{}.config", cmd.name()));
    fs::write(&echo_path, &echo).map_err(|e| CliError::io(&echo_path, e))?;

    let mut manifest = String::from("# manifest v1\n");
    let _ = writeln!(manifest, "command = {}", cmd.name());
    let _ = writeln!(manifest, "version = {VERSION}");
    let _ = writeln!(manifest, "seed = {}", cfg.seed);
    let _ = writeln!(manifest, "config_hash = {}", hex::encode(Sha256::digest(echo.as_bytes())));
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let _ = writeln!(manifest, "created_unix = {created}");
    let _ = writeln!(manifest, "wall_seconds = {:.3}", start.elapsed().as_secs_f64());
    for (tag, files) in [("input", &run.inputs), ("output", &run.outputs)] {
        for f in files {
            let _ = writeln!(manifest, "{tag} {} sha256={}", f.display(), sha256_file(f)?);
        }
    }
    let manifest_path = out.join(format!("manifest_{}.txt", cmd.name()));
    fs::write(&manifest_path, manifest).map_err(|e| CliError::io(&manifest_path, e))?;

    let mut lines = vec![format!("# {} {VERSION}", cmd.name())];
    lines.extend(echo.lines().map(|l| format!("config {l}")));
    lines.extend(run.log);
    lines.extend(run.outputs.iter().map(|p| format!("wrote {}", p.display())));
    Ok(lines)
}
