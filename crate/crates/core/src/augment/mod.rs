//! Synthetic shifted replicas of labeled patients: visit-phase truncation,
//! visit-frequency aggregation and count noise.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use thiserror::Error;

use crate::data::PatientSeries;
use crate::numerics::Tensor;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("empty truncation: shift {shift} on a series of length {len}")]
    EmptyTruncation { len: usize, shift: usize },
    #[error("window size must be >= 1")]
    ZeroWindow,
    #[error("patient {0}: gold labels required")]
    MissingGold(String),
    #[error("no labeled patients to augment")]
    NoLabeled,
    #[error("augment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Replicas per labeled patient.
    pub replicas: usize,
    /// Center of the window-size cycle `{a_mid - 1, a_mid, a_mid + 1}`.
    pub a_mid: usize,
    pub max_shift: usize,
    pub noise_sd: f64,
    pub keep_prob: f64,
    pub seed: u64,
    /// Floor-length aggregation with endpoint labels instead of ceil with window max.
    pub legacy_floor: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            replicas: 2,
            a_mid: 2,
            max_shift: 7,
            noise_sd: 0.05,
            keep_prob: 0.9,
            seed: 0,
            legacy_floor: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.into()));
        if self.replicas == 0 {
            return bad("replicas must be >= 1");
        }
        if self.a_mid < 2 {
            return bad("a_mid must be >= 2");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return bad("keep_prob must lie in [0, 1]");
        }
        Ok(())
    }

    /// Window size for replica `k` (1-based).
    pub fn window_for(&self, k: usize) -> usize {
        self.a_mid - 1 + (k - 1) % 3
    }
}

/// A synthetic replica derived from one labeled patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub source_id: String,
    /// Replica index, 1-based.
    pub replica: usize,
    pub shift: usize,
    pub window: usize,
    /// `T x p` counts, row-major.
    pub features: Vec<f64>,
    pub p: usize,
    pub gold: Vec<u8>,
}

impl SyntheticSeries {
    /// Unmodified copy of a labeled patient.
    pub fn from_patient(series: &PatientSeries) -> Result<Self, AugmentError> {
        let gold = series
            .gold
            .clone()
            .ok_or_else(|| AugmentError::MissingGold(series.id.clone()))?;
        Ok(Self {
            source_id: series.id.clone(),
            replica: 0,
            shift: 0,
            window: 1,
            features: series.features.clone(),
            p: series.p,
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn visit(&self, t: usize) -> &[f64] {
        &self.features[t * self.p..(t + 1) * self.p]
    }

    pub fn feature_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.p, self.features.clone())
    }
}

/// Drops the first `shift` visits.
pub fn truncate_shift(series: &SyntheticSeries, shift: usize) -> Result<SyntheticSeries, AugmentError> {
    let len = series.len();
    if shift >= len {
        return Err(AugmentError::EmptyTruncation { len, shift });
    }
    Ok(SyntheticSeries {
        shift: series.shift + shift,
        features: series.features[shift * series.p..].to_vec(),
        gold: series.gold[shift..].to_vec(),
        ..series.clone()
    })
}

/// Sums features over consecutive windows of `window` visits; the label of a
/// window is the maximum gold label inside it. The last window may be short.
pub fn aggregate_windows(series: &SyntheticSeries, window: usize) -> Result<SyntheticSeries, AugmentError> {
    if window == 0 {
        return Err(AugmentError::ZeroWindow);
    }
    let len = series.len();
    let n = len.div_ceil(window);
    let bounds: Vec<(usize, usize)> = (0..n).map(|t| (t * window, ((t + 1) * window).min(len))).collect();
    Ok(pool(series, window, &bounds, |g| g.iter().copied().max().unwrap_or(0)))
}

/// Floor-length aggregation: `floor(T / A)` full windows (at least one), each
/// labeled by its last visit; trailing visits that do not fill a window are dropped.
pub fn aggregate_windows_floor(series: &SyntheticSeries, window: usize) -> Result<SyntheticSeries, AugmentError> {
    if window == 0 {
        return Err(AugmentError::ZeroWindow);
    }
    let len = series.len();
    let n = (len / window).max(1);
    let bounds: Vec<(usize, usize)> = (0..n).map(|t| (t * window, ((t + 1) * window).min(len))).collect();
    Ok(pool(series, window, &bounds, |g| *g.last().unwrap_or(&0)))
}

fn pool(series: &SyntheticSeries, window: usize, bounds: &[(usize, usize)], label: impl Fn(&[u8]) -> u8) -> SyntheticSeries {
    let p = series.p;
    let mut features = vec![0.0; bounds.len() * p];
    let mut gold = Vec::with_capacity(bounds.len());
    for (t, &(a, b)) in bounds.iter().enumerate() {
        let row = &mut features[t * p..(t + 1) * p];
        for u in a..b {
            for (o, x) in row.iter_mut().zip(series.visit(u)) {
                *o += x;
            }
        }
        gold.push(label(&series.gold[a..b]));
    }
    SyntheticSeries {
        window: series.window * window,
        features,
        gold,
        ..series.clone()
    }
}

/// Count noise: every entry becomes `δ · (x + ε)` with `ε ~ N(mean, sd)` and
/// `δ ~ Bernoulli(keep_prob)`, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountNoise {
    pub mean: f64,
    pub sd: f64,
    pub keep_prob: f64,
}

impl CountNoise {
    pub fn new(sd: f64, keep_prob: f64) -> Self {
        Self { mean: 1.0, sd, keep_prob }
    }
}

pub fn perturb_counts<R: Rng + ?Sized>(
    series: &SyntheticSeries,
    noise: CountNoise,
    rng: &mut R,
) -> Result<SyntheticSeries, AugmentError> {
    let normal = Normal::new(noise.mean, noise.sd).map_err(|e| AugmentError::Config(e.to_string()))?;
    let keep = Bernoulli::new(noise.keep_prob).map_err(|e| AugmentError::Config(e.to_string()))?;
    let features = series
        .features
        .iter()
        .map(|&x| {
            let eps = normal.sample(rng);
            let delta = if keep.sample(rng) { 1.0 } else { 0.0 };
            (delta * (x + eps)).max(0.0)
        })
        .collect();
    Ok(SyntheticSeries {
        features,
        ..series.clone()
    })
}

/// `replicas` synthetic series per labeled patient, ordered by (patient, replica).
pub fn generate(labeled: &[PatientSeries], cfg: &AugmentConfig) -> Result<Vec<SyntheticSeries>, AugmentError> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(AugmentError::NoLabeled);
    }
    let noise = CountNoise::new(cfg.noise_sd, cfg.keep_prob);
    let mut out = Vec::with_capacity(labeled.len() * cfg.replicas);
    for (i, patient) in labeled.iter().enumerate() {
        let base = SyntheticSeries::from_patient(patient)?;
        for k in 1..=cfg.replicas {
            let mut rng = rng::stream(cfg.seed, &[i as u64, k as u64]);
            let limit = cfg.max_shift.min(base.len().saturating_sub(1));
            let shifted = truncate_shift(&base, rng.gen_range(0..=limit))?;
            let window = cfg.window_for(k);
            let pooled = if cfg.legacy_floor {
                aggregate_windows_floor(&shifted, window)?
            } else {
                aggregate_windows(&shifted, window)?
            };
            let mut replica = perturb_counts(&pooled, noise, &mut rng)?;
            replica.replica = k;
            out.push(replica);
        }
    }
    Ok(out)
}

/// Cohort-style text dump with replica metadata columns.
pub fn write_synthetic(set: &[SyntheticSeries], feature_names: &[String]) -> String {
    let p = feature_names.len();
    let mut out = format!("# synthetic v1 p={p}\nsource_id,replica,shift,window,t,y,{}\n", feature_names.join(","));
    for s in set {
        for t in 0..s.len() {
            let vals: Vec<String> = s.visit(t).iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.source_id,
                s.replica,
                s.shift,
                s.window,
                t + 1,
                s.gold[t],
                vals.join(",")
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests;
