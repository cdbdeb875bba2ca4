//! Longitudinal silver-standard labels from surrogate counts.

use super::{Cohort, DataError, PatientSeries};
use crate::numerics::expit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilverConfig {
    /// Temperature; smaller values sharpen labels toward 0/1.
    pub tau: f64,
    /// Weight of the utilization normalizer.
    pub alpha: f64,
    /// Per-visit counts (recurrent phenotypes) instead of running sums.
    pub relapse: bool,
}

impl Default for SilverConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.2,
            relapse: false,
        }
    }
}

impl SilverConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.alpha >= 0.0) {
            return Err(DataError::Invalid {
                patient: "-".into(),
                msg: format!("silver config requires tau > 0 and alpha >= 0, got {self:?}"),
            });
        }
        Ok(())
    }
}

fn inputs(series: &PatientSeries) -> Result<(&[f64], &[f64]), DataError> {
    let c = series
        .surrogate_counts
        .as_deref()
        .ok_or_else(|| DataError::MissingSurrogate(series.id.clone()))?;
    let u = series
        .utilization
        .as_deref()
        .ok_or_else(|| DataError::MissingUtilization(series.id.clone()))?;
    Ok((c, u))
}

fn label(count: f64, util: f64, cfg: &SilverConfig) -> f64 {
    expit(((1.0 + count).ln() - cfg.alpha * (1.0 + util).ln()) / cfg.tau)
}

/// Silver labels from running sums of surrogate counts and utilization,
/// summed from the first recorded visit.
pub fn silver_cumulative(series: &PatientSeries, cfg: &SilverConfig) -> Result<Vec<f64>, DataError> {
    let (c, u) = inputs(series)?;
    let (mut cs, mut us) = (0.0, 0.0);
    Ok(c.iter()
        .zip(u)
        .map(|(ci, ui)| {
            cs += ci;
            us += ui;
            label(cs, us, cfg)
        })
        .collect())
}

/// Silver labels from per-visit counts.
pub fn silver_recurrent(series: &PatientSeries, cfg: &SilverConfig) -> Result<Vec<f64>, DataError> {
    let (c, u) = inputs(series)?;
    Ok(c.iter().zip(u).map(|(&ci, &ui)| label(ci, ui, cfg)).collect())
}

/// Populates silver labels for every patient, labeled or not.
pub fn attach_silver(mut cohort: Cohort, cfg: &SilverConfig) -> Result<Cohort, DataError> {
    cfg.validate()?;
    for s in &mut cohort.patients {
        let silver = if cfg.relapse {
            silver_recurrent(s, cfg)?
        } else {
            silver_cumulative(s, cfg)?
        };
        s.silver = Some(silver);
    }
    Ok(cohort)
}
