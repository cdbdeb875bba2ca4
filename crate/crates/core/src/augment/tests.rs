use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn series(gold: &[u8], p: usize) -> SyntheticSeries {
    let t = gold.len();
    SyntheticSeries {
        source_id: "a".into(),
        replica: 0,
        shift: 0,
        window: 1,
        features: (0..t * p).map(|i| i as f64).collect(),
        p,
        gold: gold.to_vec(),
    }
}

fn patient(id: &str, gold: &[u8], p: usize) -> PatientSeries {
    let s = series(gold, p);
    PatientSeries {
        id: id.into(),
        features: s.features,
        p,
        gold: Some(gold.to_vec()),
        silver: None,
        surrogate_counts: None,
        utilization: None,
    }
}

const NO_NOISE: CountNoise = CountNoise {
    mean: 0.0,
    sd: 0.0,
    keep_prob: 1.0,
};

#[test]
fn truncate_examples() {
    let s = series(&[0, 0, 1, 1, 1], 2);
    assert_eq!(truncate_shift(&s, 0).unwrap(), s);
    let t = truncate_shift(&s, 2).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.gold, vec![1, 1, 1]);
    assert_eq!(t.visit(0), s.visit(2));
    assert_eq!(t.shift, 2);
    let err = truncate_shift(&s, 5).unwrap_err();
    assert!(err.to_string().contains("empty truncation"));
}

#[test]
fn aggregate_examples() {
    let s = series(&[0, 1, 0, 0, 1], 2);
    assert_eq!(aggregate_windows(&s, 1).unwrap().features, s.features);
    let a = aggregate_windows(&s, 2).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a.gold, vec![1, 0, 1]);
    // rows: (0,1) (2,3) (4,5) (6,7) (8,9)
    assert_eq!(a.features, vec![2.0, 4.0, 10.0, 12.0, 8.0, 9.0]);
    assert_eq!(a.window, 2);
    assert_eq!(aggregate_windows(&s, 0).unwrap_err(), AugmentError::ZeroWindow);
}

#[test]
fn floor_variant_drops_tail_and_uses_endpoint_label() {
    let s = series(&[0, 1, 0, 0, 1], 1);
    let a = aggregate_windows_floor(&s, 2).unwrap();
    assert_eq!(a.gold, vec![1, 0]);
    assert_eq!(a.features, vec![1.0, 5.0]);
    let short = aggregate_windows_floor(&series(&[1], 1), 3).unwrap();
    assert_eq!(short.len(), 1);
}

#[test]
fn perturb_examples() {
    let s = series(&[0, 1, 1], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(perturb_counts(&s, NO_NOISE, &mut rng).unwrap(), s);
    let dropped = perturb_counts(&s, CountNoise::new(0.05, 0.0), &mut rng).unwrap();
    assert!(dropped.features.iter().all(|&x| x == 0.0));
    assert_eq!(dropped.gold, s.gold);
    let a = perturb_counts(&s, CountNoise::new(0.05, 0.9), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = perturb_counts(&s, CountNoise::new(0.05, 0.9), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn perturb_adds_unit_mean_noise() {
    let s = SyntheticSeries {
        features: vec![3.0; 20_000],
        p: 1,
        gold: vec![0; 20_000],
        ..series(&[0], 1)
    };
    let out = perturb_counts(&s, CountNoise::new(0.05, 1.0), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mean = out.features.iter().sum::<f64>() / 20_000.0;
    assert!((mean - 4.0).abs() < 0.005, "{mean}");
}

#[test]
fn identity_replica_when_every_step_is_degenerate() {
    let cfg = AugmentConfig {
        replicas: 1,
        a_mid: 2,
        max_shift: 0,
        noise_sd: 0.0,
        keep_prob: 1.0,
        ..Default::default()
    };
    let src = patient("x", &[0, 0, 1], 2);
    let out = generate(std::slice::from_ref(&src), &cfg).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].window, 1);
    assert_eq!(out[0].gold, vec![0, 0, 1]);
    // unit-mean noise is still added to every count
    let shifted: Vec<f64> = src.features.iter().map(|x| x + 1.0).collect();
    assert_eq!(out[0].features, shifted);
}

#[test]
fn windows_cycle_across_replicas() {
    let cfg = AugmentConfig {
        replicas: 4,
        a_mid: 3,
        max_shift: 0,
        ..Default::default()
    };
    assert_eq!((1..=4).map(|k| cfg.window_for(k)).collect::<Vec<_>>(), vec![2, 3, 4, 2]);
    let out = generate(&[patient("x", &[0; 12], 1)], &cfg).unwrap();
    let windows: Vec<usize> = out.iter().map(|s| s.window).collect();
    assert_eq!(windows, vec![2, 3, 4, 2]);
    let lens: Vec<usize> = out.iter().map(|s| s.len()).collect();
    assert_eq!(lens, vec![6, 4, 3, 6]);
}

#[test]
fn composed_length_example() {
    let s = series(&[0; 7], 1);
    let out = aggregate_windows(&truncate_shift(&s, 1).unwrap(), 3).unwrap();
    assert_eq!(out.len(), 2);
}

#[test]
fn generate_is_deterministic_and_ordered() {
    let pts = vec![patient("a", &[0, 0, 1, 1], 3), patient("b", &[0, 1, 1, 1, 1, 1, 1, 1, 1, 1], 3)];
    let cfg = AugmentConfig {
        replicas: 3,
        seed: 11,
        ..Default::default()
    };
    let a = generate(&pts, &cfg).unwrap();
    let b = generate(&pts, &cfg).unwrap();
    assert_eq!(a, b);
    let order: Vec<(String, usize)> = a.iter().map(|s| (s.source_id.clone(), s.replica)).collect();
    assert_eq!(order[0], ("a".into(), 1));
    assert_eq!(order[5], ("b".into(), 3));
    for s in &a {
        assert!(s.shift <= cfg.max_shift);
        assert!(s.features.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    let other = generate(&pts, &AugmentConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn generate_rejects_bad_inputs() {
    assert_eq!(generate(&[], &AugmentConfig::default()).unwrap_err(), AugmentError::NoLabeled);
    let mut p = patient("u", &[0], 1);
    p.gold = None;
    assert!(matches!(generate(&[p], &AugmentConfig::default()), Err(AugmentError::MissingGold(_))));
    let cfg = AugmentConfig { a_mid: 1, ..Default::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn dump_has_metadata_columns() {
    let s = series(&[0, 1], 2);
    let text = write_synthetic(&[s], &["f1".into(), "f2".into()]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# synthetic v1 p=2");
    assert_eq!(lines[1], "source_id,replica,shift,window,t,y,f1,f2");
    assert_eq!(lines[3], "a,0,0,1,2,1,2,3");
}

fn brute_len(t: usize, l: usize, a: usize) -> usize {
    // count windows by walking the visits
    let mut n = 0;
    let mut filled = 0;
    for _ in l..t {
        if filled == 0 {
            n += 1;
        }
        filled = (filled + 1) % a;
    }
    n
}

#[test]
fn length_law_exhaustive() {
    for t in 1..=12 {
        for l in 0..t {
            for a in 1..=4 {
                let s = series(&vec![0; t], 1);
                let out = aggregate_windows(&truncate_shift(&s, l).unwrap(), a).unwrap();
                assert_eq!(out.len(), brute_len(t, l, a), "T={t} L={l} A={a}");
                assert_eq!(out.len(), (t - l).div_ceil(a));
            }
        }
    }
}

proptest! {
    #[test]
    fn monotone_labels_stay_monotone(t in 1usize..20, onset in 0usize..25, l in 0usize..20, a in 1usize..5) {
        let gold: Vec<u8> = (0..t).map(|u| u8::from(u >= onset)).collect();
        let s = series(&gold, 1);
        let l = l.min(t - 1);
        let out = aggregate_windows(&truncate_shift(&s, l).unwrap(), a).unwrap();
        prop_assert!(out.gold.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn aggregation_preserves_totals(t in 1usize..15, a in 1usize..5) {
        let s = series(&vec![0; t], 2);
        let out = aggregate_windows(&s, a).unwrap();
        let before: f64 = s.features.iter().sum();
        let after: f64 = out.features.iter().sum();
        prop_assert_eq!(before, after);
    }
}
