use super::*;
use crate::eval::auc;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients: 60,
        frac_labeled: 0.25,
        p_features: 8,
        n_signal: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn shapes_and_labeled_prefix() {
    let cfg = small(1);
    let (c, truth, emb) = generate_cohort(&cfg).unwrap();
    assert_eq!(c.len(), 60);
    assert_eq!(c.n_labeled, 15);
    assert_eq!(c.p(), 8);
    assert_eq!(emb.p(), 8);
    assert_eq!(emb.q(), cfg.embedding_dim);
    assert_eq!(truth.gold.len(), 60);
    for (i, s) in c.patients.iter().enumerate() {
        assert!((cfg.t_min..=cfg.t_max).contains(&s.len()));
        assert_eq!(s.gold.is_some(), i < 15);
        if let Some(g) = &s.gold {
            assert_eq!(g, &truth.gold[i]);
        }
        assert_eq!(truth.onset[i], truth.gold[i].iter().position(|&y| y == 1).map(|u| u + 1));
        let u = s.utilization.as_ref().unwrap();
        for t in 0..s.len() {
            assert_eq!(u[t], s.visit(t).iter().sum::<f64>());
            assert_eq!(s.surrogate_counts.as_ref().unwrap()[t], s.visit(t)[0]);
        }
    }
    assert_eq!(SynthConfig::default().n_labeled(), 100);
}

#[test]
fn fixed_seed_is_reproducible() {
    let a = generate_cohort(&small(4)).unwrap();
    let b = generate_cohort(&small(4)).unwrap();
    assert_eq!(crate::data::write_cohort(&a.0), crate::data::write_cohort(&b.0));
    assert_eq!(a.1, b.1);
    assert_eq!(crate::data::write_embeddings(&a.2), crate::data::write_embeddings(&b.2));
    let c = generate_cohort(&small(5)).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn zero_hazard_never_activates() {
    let cfg = SynthConfig {
        onset_hazard: 0.0,
        ..small(2)
    };
    let (_, truth, _) = generate_cohort(&cfg).unwrap();
    assert!(truth.gold.iter().flatten().all(|&y| y == 0));
    assert!(truth.onset.iter().all(Option::is_none));
}

#[test]
fn cumulative_gold_is_monotone_and_relapse_is_not() {
    let (_, truth, _) = generate_cohort(&small(3)).unwrap();
    assert!(truth.gold.iter().all(|g| g.windows(2).all(|w| w[0] <= w[1])));
    let cfg = SynthConfig {
        relapse: true,
        onset_hazard: 0.3,
        n_patients: 200,
        ..small(3)
    };
    let (_, truth, _) = generate_cohort(&cfg).unwrap();
    assert!(truth.gold.iter().any(|g| g.windows(2).any(|w| w[0] > w[1])));
}

#[test]
fn surrogate_lift_matches_configuration() {
    let cfg = SynthConfig {
        n_patients: 400,
        lift: 0.8,
        seed: 9,
        ..Default::default()
    };
    let (c, truth, _) = generate_cohort(&cfg).unwrap();
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    for (s, g) in c.patients.iter().zip(&truth.gold) {
        for (t, &y) in g.iter().enumerate() {
            let x = s.surrogate_counts.as_ref().unwrap()[t];
            if y == 1 { post.push(x) } else { pre.push(x) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let diff = mean(&post) - mean(&pre);
    let se = (var(&post) / post.len() as f64 + var(&pre) / pre.len() as f64).sqrt();
    assert!((diff - 0.8).abs() < 3.0 * se, "diff {diff} se {se}");
}

#[test]
fn zero_lift_gives_chance_oracle() {
    let cfg = SynthConfig {
        n_patients: 300,
        lift: 0.0,
        signal_background_rate: 0.2,
        onset_hazard: 0.1,
        seed: 12,
        ..Default::default()
    };
    let (c, truth, _) = generate_cohort(&cfg).unwrap();
    // total signal count as the score; its distribution does not depend on status
    let scores: Vec<f64> = c
        .patients
        .iter()
        .flat_map(|s| (0..s.len()).map(|t| s.visit(t)[..cfg.n_signal].iter().sum::<f64>()).collect::<Vec<_>>())
        .collect();
    let labels: Vec<u8> = truth.gold.iter().flatten().copied().collect();
    let a = auc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() < 0.04, "{a}");
}

#[test]
fn default_planted_signal_is_nearly_separable() {
    let cfg = SynthConfig { seed: 7, ..Default::default() };
    let (c, truth, _) = generate_cohort(&cfg).unwrap();
    let scores: Vec<f64> = oracle_scores(&c, &cfg).into_iter().flatten().collect();
    let labels: Vec<u8> = truth.gold.iter().flatten().copied().collect();
    assert!(auc(&scores, &labels).unwrap() >= 0.95);
}

#[test]
fn split_examples() {
    let cfg = SynthConfig {
        n_patients: 10,
        frac_labeled: 0.4,
        ..small(1)
    };
    let (c, _, _) = generate_cohort(&cfg).unwrap();
    let s = split(&c, 0.5, 3).unwrap();
    assert_eq!(s.train.len(), 5);
    assert_eq!(s.eval.len(), 5);
    assert_eq!(s.train.n_labeled, 2);
    assert_eq!(s.eval.n_labeled, 2);
    let mut all: Vec<usize> = s.train_index.iter().chain(&s.eval_index).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    let again = split(&c, 0.5, 3).unwrap();
    assert_eq!(again.train_index, s.train_index);
    assert!(split(&c, 1.0, 3).is_err());
    assert!(split(&c, 0.0, 3).is_err());
}

#[test]
fn config_validation() {
    assert!(SynthConfig { n_signal: 60, ..Default::default() }.validate().is_err());
    assert!(SynthConfig { onset_hazard: 1.0, ..Default::default() }.validate().is_err());
    assert!(SynthConfig { t_min: 0, ..Default::default() }.validate().is_err());
    assert!(SynthConfig::default().validate().is_ok());
}
