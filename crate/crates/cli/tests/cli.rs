use std::fs;
use std::path::Path;
use std::process::Command as Process;

use phenotime::data::{load_cohort, load_embeddings, LoadOptions};
use phenotime::eval::{parse_curves, write_curves, PredictionCurve, CURVE_CLAMP};
use phenotime_cli::{execute, parse_truth, CliError, Command, RunConfig};

const SMALL: &str = "synth.n_patients = 30\nsynth.p_features = 8\nsynth.n_signal = 2\nsynth.t_max = 10\n\
                     model.d = 4\nmodel.hidden = 6\nmodel.cr_branch = 4\nmodel.cr_fusion = 2\n\
                     train.epochs_pretrain = 2\ntrain.epochs_finetune = 2\ntrain.batch_size = 8\n";

fn small() -> RunConfig {
    RunConfig::from_text(SMALL).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn manifest_outputs(dir: &Path, cmd: &str) -> Vec<String> {
    read(dir, &format!("manifest_{cmd}.txt"))
        .lines()
        .filter(|l| l.starts_with("output "))
        .map(|l| l.rsplit(' ').next().unwrap().to_string())
        .collect()
}

fn chain(cfg: &RunConfig, dir: &Path, cmds: &[Command]) {
    for &c in cmds {
        execute(c, cfg, dir).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
    }
}

#[test]
fn generate_round_trips_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small();
    chain(&cfg, a.path(), &[Command::Generate]);
    chain(&cfg, b.path(), &[Command::Generate]);
    assert_eq!(manifest_outputs(a.path(), "generate"), manifest_outputs(b.path(), "generate"));
    let cohort = load_cohort(&a.path().join("cohort.csv"), LoadOptions::default()).unwrap();
    assert_eq!(cohort.len(), 30);
    assert_eq!(load_embeddings(&a.path().join("embeddings.csv")).unwrap().p(), 8);
    let truth = parse_truth(&read(a.path(), "truth.csv")).unwrap();
    assert_eq!(truth.len(), 30);
    for (s, (id, g)) in cohort.patients.iter().zip(&truth) {
        assert_eq!(&s.id, id);
        assert_eq!(s.len(), g.len());
    }
    let echo = read(a.path(), "generate.config");
    assert_eq!(RunConfig::from_text(&echo).unwrap(), cfg);
}

#[test]
fn missing_output_dir_names_the_path() {
    let err = execute(Command::Generate, &small(), Path::new("/definitely/not/here")).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert!(err.line().contains("/definitely/not/here"));
}

#[test]
fn silver_is_idempotent_and_follows_label_properties() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.silver.alpha = 0.0;
    chain(&cfg, dir.path(), &[Command::Generate, Command::Silver]);
    let first = read(dir.path(), "cohort_silver.csv");
    chain(&cfg, dir.path(), &[Command::Silver]);
    assert_eq!(first, read(dir.path(), "cohort_silver.csv"));
    let load = |d: &Path| load_cohort(&d.join("cohort_silver.csv"), LoadOptions::default()).unwrap();
    let monotone = load(dir.path());
    for s in &monotone.patients {
        assert!(s.silver.as_ref().unwrap().windows(2).all(|w| w[0] <= w[1]));
    }

    let sharp = tempfile::tempdir().unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.silver.tau /= 2.0;
    chain(&cfg2, sharp.path(), &[Command::Generate, Command::Silver]);
    for (a, b) in monotone.patients.iter().zip(&load(sharp.path()).patients) {
        for (x, y) in a.silver.as_ref().unwrap().iter().zip(b.silver.as_ref().unwrap()) {
            assert!((y - 0.5).abs() >= (x - 0.5).abs());
        }
    }
}

#[test]
fn full_chain_writes_metric_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.use_augment = true;
    chain(
        &cfg,
        dir.path(),
        &[
            Command::Generate,
            Command::Silver,
            Command::Augment,
            Command::Pretrain,
            Command::Train,
            Command::Predict,
            Command::Evaluate,
        ],
    );
    let metrics = read(dir.path(), "metrics.txt");
    for key in ["auc=", "f1=", "abc_gain="] {
        assert!(metrics.contains(key), "{metrics}");
    }
    assert!(read(dir.path(), "synthetic.csv").starts_with("# synthetic v1"));
    let manifest = read(dir.path(), "manifest_train.txt");
    for key in ["version = v", "config_hash = ", "seed = 0", "input ", "output "] {
        assert!(manifest.contains(key));
    }
}

#[test]
fn zero_finetune_epochs_reproduce_pretrain_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.train.epochs_finetune = 0;
    chain(&cfg, dir.path(), &[Command::Generate, Command::Silver, Command::Pretrain, Command::Train, Command::Predict]);
    let trained = read(dir.path(), "curves.csv");
    cfg.predict_checkpoint = phenotime_cli::CheckpointChoice::Pretrain;
    chain(&cfg, dir.path(), &[Command::Predict]);
    assert_eq!(trained, read(dir.path(), "curves.csv"));
}

#[test]
fn oracle_curves_reach_full_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    chain(&cfg, dir.path(), &[Command::Generate]);
    let truth = parse_truth(&read(dir.path(), "truth.csv")).unwrap();
    let curves: Vec<PredictionCurve> = truth
        .iter()
        .map(|(id, g)| {
            let p = g.iter().map(|&y| f64::from(y).clamp(CURVE_CLAMP, 1.0 - CURVE_CLAMP)).collect();
            PredictionCurve::from_probs(id.clone(), p)
        })
        .collect();
    fs::write(dir.path().join("curves.csv"), write_curves(&curves)).unwrap();
    chain(&cfg, dir.path(), &[Command::Evaluate]);
    let metrics = read(dir.path(), "metrics.txt");
    let gain: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("abc_gain="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((gain - 1.0).abs() < 1e-6, "{gain}");
    assert_eq!(parse_curves(&read(dir.path(), "curves.csv")).unwrap().len(), 30);
}

#[test]
fn train_needs_pretrain_checkpoint_or_scratch_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    chain(&cfg, dir.path(), &[Command::Generate, Command::Silver]);
    let err = execute(Command::Train, &cfg, dir.path()).unwrap_err();
    assert_eq!(err.category(), "precondition");
    cfg.from_scratch = true;
    chain(&cfg, dir.path(), &[Command::Train]);
}

#[test]
fn changed_model_widths_are_caught_by_the_checkpoint_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    chain(&cfg, dir.path(), &[Command::Generate, Command::Silver, Command::Pretrain]);
    cfg.model.hidden += 1;
    let err = execute(Command::Train, &cfg, dir.path()).unwrap_err();
    assert_eq!(err.category(), "checkpoint");
    assert!(err.to_string().contains("config hash mismatch"));
}

#[test]
fn binary_reports_one_line_errors_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "train.learning_rate = 0.1\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_phenotime"))
        .args(["generate", "--config", conf.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: config: unknown key 'train.learning_rate'"));

    let conf = dir.path().join("ok.conf");
    fs::write(&conf, SMALL).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_phenotime"))
        .args(["generate", "--config", conf.to_str().unwrap(), "--seed", "5", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("config seed = 5"));
    assert!(read(dir.path(), "manifest_generate.txt").contains("seed = 5"));
}
