use super::*;
use crate::augment::AugmentConfig;
use crate::data::{attach_silver, SilverConfig};
use crate::losses::{loss_semisup, loss_supervised, penalty_cum};
use crate::model::ModelDims;
use crate::synth::{generate_cohort, SynthConfig};

fn tiny_dims(q: usize) -> ModelDims {
    ModelDims {
        q,
        d: 3,
        hidden: 4,
        cr_branch: 4,
        cr_fusion: 3,
    }
}

fn fixture(n: usize, seed: u64) -> (Cohort, EmbeddingTable, ModelParams) {
    let cfg = SynthConfig {
        n_patients: n,
        frac_labeled: 0.3,
        p_features: 6,
        n_signal: 2,
        t_min: 3,
        t_max: 6,
        onset_hazard: 0.2,
        embedding_dim: 4,
        embedding_scale: 20.0,
        seed,
        ..Default::default()
    };
    let (c, _, emb) = generate_cohort(&cfg).unwrap();
    let c = attach_silver(c, &SilverConfig::default()).unwrap();
    let params = ModelParams::init(tiny_dims(4), seed).unwrap();
    (c, emb, params)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs_pretrain: epochs,
        epochs_finetune: epochs,
        batch_size: 4,
        ..Default::default()
    }
}

#[test]
fn adam_first_step_moves_by_lr() {
    let (_, _, params) = fixture(4, 1);
    let grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::filled(t.shape(), 1.0)).collect();
    let cfg = TrainConfig::default();
    let state = adam_init(&params);
    let (next, moments) = adam_step(&params, &grads, &state, &cfg, |_| true).unwrap();
    assert_eq!(moments.step, 1);
    for (a, b) in params.flatten().iter().zip(next.flatten()) {
        assert!((b - a + cfg.lr).abs() < 1e-10);
    }
    let again = adam_step(&params, &grads, &state, &cfg, |_| true).unwrap();
    assert_eq!(again.0, next);
    assert_eq!(again.1, moments);
}

#[test]
fn adam_zero_gradient_decays_moments_only() {
    let (_, _, params) = fixture(4, 2);
    let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let state = adam_init(&params);
    let (next, _) = adam_step(&params, &zeros, &state, &TrainConfig::default(), |_| true).unwrap();
    assert_eq!(next, params);

    let mut primed = adam_init(&params);
    primed.first[0] = Tensor::filled(primed.first[0].shape(), 0.5);
    primed.second[0] = Tensor::filled(primed.second[0].shape(), 0.25);
    let cfg = TrainConfig::default();
    let (_, after) = adam_step(&params, &zeros, &primed, &cfg, |_| true).unwrap();
    assert!(after.first[0].data().iter().all(|&m| (m - 0.45).abs() < 1e-15));
    assert!(after.second[0].data().iter().all(|&v| (v - 0.25 * 0.999).abs() < 1e-15));
}

#[test]
fn adam_mask_freezes_values_and_moments() {
    let (_, _, params) = fixture(4, 3);
    let grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::filled(t.shape(), 0.3)).collect();
    let state = adam_init(&params);
    let (next, moments) = adam_step(&params, &grads, &state, &TrainConfig::default(), |id| !id.is_gold_head()).unwrap();
    for (k, &id) in ParamId::ALL.iter().enumerate() {
        if id.is_gold_head() {
            assert_eq!(next.get(id), params.get(id));
            assert_eq!(moments.first[k], state.first[k]);
            assert_eq!(moments.second[k], state.second[k]);
        } else {
            assert_ne!(next.get(id), params.get(id));
        }
    }
}

#[test]
fn adam_rejects_nan_gradient() {
    let (_, _, params) = fixture(4, 4);
    let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    grads[2].data_mut()[0] = f64::NAN;
    assert!(adam_step(&params, &grads, &adam_init(&params), &TrainConfig::default(), |_| true).is_err());
}

#[test]
fn zero_epochs_return_the_start_point() {
    let (c, emb, params) = fixture(8, 5);
    let out = pretrain(&c, &emb, &params, &quick(0)).unwrap();
    assert_eq!(out.params, params);
    assert!(out.report.epochs.is_empty());
    let out = finetune(&c, &emb, &params, &quick(0)).unwrap();
    assert_eq!(out.params, params);
}

#[test]
fn pretrain_keeps_gold_head_and_makes_progress() {
    let (c, emb, params) = fixture(20, 6);
    let out = pretrain(&c, &emb, &params, &quick(15)).unwrap();
    assert_eq!(out.report.epochs.len(), 15);
    for id in [ParamId::HeadY0, ParamId::HeadY] {
        assert_eq!(out.params.get(id), params.get(id));
    }
    assert_ne!(out.params, params);
    let first = out.report.epochs[0].total;
    assert!(out.report.epochs[10..].iter().all(|e| e.total <= first));
    assert!(out.report.epochs.iter().all(|e| e.supervised.is_none()));
}

#[test]
fn training_is_deterministic() {
    let (c, emb, params) = fixture(12, 7);
    let cfg = TrainConfig {
        augment: Some(AugmentConfig::default()),
        ..quick(3)
    };
    let a = finetune(&c, &emb, &params, &cfg).unwrap();
    let b = finetune(&c, &emb, &params, &cfg).unwrap();
    assert_eq!(a.report.epochs, b.report.epochs);
    assert_eq!(a.report.checksum, b.report.checksum);
    assert_eq!(a.params, b.params);
    assert!(a.report.epochs.iter().all(|e| e.contrast.is_some()));
    let other = finetune(&c, &emb, &params, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.report.checksum, a.report.checksum);
}

#[test]
fn full_batch_records_match_independent_components() {
    let (c, emb, params) = fixture(8, 8);
    let cfg = TrainConfig {
        full_batch: true,
        loss: LossConfig {
            gamma: 0.0,
            ..Default::default()
        },
        ..quick(1)
    };
    let out = finetune(&c, &emb, &params, &cfg).unwrap();
    let rec = out.report.epochs[0];
    let sl = loss_supervised(c.labeled(), &emb, &params, &cfg.loss).unwrap();
    let pen = penalty_cum(&c.patients, &emb, &params).unwrap();
    assert!((rec.supervised.unwrap() - sl).abs() < 1e-12);
    assert!((rec.penalty.unwrap() - pen).abs() < 1e-12);
    assert!(rec.unsupervised.is_none());
    assert!((rec.total - (sl + cfg.loss.lambda * pen)).abs() < 1e-12);
    let semi = loss_semisup(&c, None, &emb, &params, &cfg.loss).unwrap();
    assert!((semi.total - rec.total).abs() < 1e-12);
}

#[test]
fn huge_silver_weight_aligns_with_pretraining_gradient() {
    let (c, emb, params) = fixture(8, 9);
    let gamma = 1e6;
    let semi_cfg = LossConfig {
        gamma,
        ..Default::default()
    };
    let reference_cfg = LossConfig {
        lambda: semi_cfg.lambda / gamma,
        ..Default::default()
    };
    let batch = Batch::full(&c, None);
    let semi = evaluate(&batch, &emb, &params, &semi_cfg, Stage::Finetune, true).unwrap();
    let reference = evaluate(&batch, &emb, &params, &reference_cfg, Stage::Pretrain, true).unwrap();
    let flat = |g: Vec<Tensor>| -> Vec<f64> { g.into_iter().flat_map(Tensor::into_data).collect() };
    let a = flat(semi.grads.unwrap());
    let b = flat(reference.grads.unwrap());
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&a) * norm(&b));
    assert!(cosine > 0.99, "{cosine}");
}

#[test]
fn bad_inputs_are_rejected() {
    let (mut c, emb, params) = fixture(6, 10);
    assert!(matches!(
        pretrain(&c, &emb, &params, &TrainConfig { lr: 0.0, ..quick(1) }),
        Err(TrainError::Config(_))
    ));
    assert!(pretrain(&c, &emb, &params, &TrainConfig { batch_size: 0, ..quick(1) }).is_err());
    c.patients[3].silver = None;
    assert!(matches!(pretrain(&c, &emb, &params, &quick(1)), Err(TrainError::MissingSilver(id)) if id == c.patients[3].id));
}

#[test]
fn report_text_has_one_record_per_epoch() {
    let (c, emb, params) = fixture(6, 11);
    let out = pretrain(&c, &emb, &params, &quick(2)).unwrap();
    let text = out.report.to_text();
    assert_eq!(text.lines().filter(|l| l.starts_with("epoch=")).count(), 2);
    assert!(text.contains("supervised=na"));
    assert!(text.contains(&format!("checksum={}", out.params.checksum())));
}
