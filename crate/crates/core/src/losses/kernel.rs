use super::LossError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Gaussian bandwidth in visits.
    pub h: f64,
    pub w_min: f64,
    /// Silver labels at or above this value count as positive visits.
    pub kappa_thr: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            h: 2.0,
            w_min: 0.1,
            kappa_thr: 0.5,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(LossError::Config(format!("kernel bandwidth must be > 0, got {}", self.h)));
        }
        if !(self.w_min >= 0.0 && self.w_min.is_finite()) {
            return Err(LossError::Config(format!("w_min must be >= 0, got {}", self.w_min)));
        }
        if !(self.kappa_thr > 0.0 && self.kappa_thr < 1.0) {
            return Err(LossError::Config(format!("kappa_thr must lie in (0, 1), got {}", self.kappa_thr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Positive iff the label equals 1.
    Gold,
    /// Positive iff the label is at least `kappa_thr`.
    Silver,
}

/// `w_t = w_min + exp(-d(t)² / 2h²)` where `d(t)` is the distance from visit
/// `t` to the nearest positive visit; with no positives every weight is `w_min`.
pub fn kernel_weights(labels: &[f64], rule: LabelRule, cfg: &KernelConfig) -> Vec<f64> {
    let positive = |y: f64| match rule {
        LabelRule::Gold => y >= 1.0,
        LabelRule::Silver => y >= cfg.kappa_thr,
    };
    let n = labels.len();
    // nearest positive on each side in two sweeps
    let mut dist = vec![f64::INFINITY; n];
    let mut last = None;
    for t in 0..n {
        if positive(labels[t]) {
            last = Some(t);
        }
        if let Some(u) = last {
            dist[t] = (t - u) as f64;
        }
    }
    last = None;
    for t in (0..n).rev() {
        if positive(labels[t]) {
            last = Some(t);
        }
        if let Some(u) = last {
            dist[t] = dist[t].min((u - t) as f64);
        }
    }
    let denom = 2.0 * cfg.h * cfg.h;
    dist.iter().map(|d| cfg.w_min + (-d * d / denom).exp()).collect()
}

pub fn gold_weights(gold: &[u8], cfg: &KernelConfig) -> Vec<f64> {
    let labels: Vec<f64> = gold.iter().map(|&y| f64::from(y)).collect();
    kernel_weights(&labels, LabelRule::Gold, cfg)
}

pub fn silver_weights(silver: &[f64], cfg: &KernelConfig) -> Vec<f64> {
    kernel_weights(silver, LabelRule::Silver, cfg)
}
