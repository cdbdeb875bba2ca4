//! Visit-level discrimination metrics, cumulative-curve areas and onset times.

mod curves;

pub use curves::{parse_curves, write_curves, PredictionCurve};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need both classes, found {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {what} has {found}, expected {expected}")]
    Length {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("degenerate null: reference area is {0}")]
    DegenerateNull(f64),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Probabilities entering the cumulative product are clamped to this distance from 0 and 1.
pub const CURVE_CLAMP: f64 = 1e-7;

/// `cum_t = 1 - Π_{k ≤ t} (1 - p_k)`
pub fn cumulative_curve(p: &[f64]) -> Vec<f64> {
    let mut survive = 1.0;
    p.iter()
        .map(|&x| {
            survive *= 1.0 - x.clamp(CURVE_CLAMP, 1.0 - CURVE_CLAMP);
            1.0 - survive
        })
        .collect()
}

/// Area between gold label curves and cumulative predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    /// Mean over patients of `(1/T) Σ_t |Y_t - cum_t|`.
    pub normalized: f64,
    /// Mean over patients of `Σ_t |Y_t - cum_t|`.
    pub raw: f64,
}

pub fn abc_cdf(cums: &[Vec<f64>], gold: &[Vec<u8>]) -> Result<Area, EvalError> {
    if cums.len() != gold.len() {
        return Err(EvalError::Length {
            what: "curves".into(),
            expected: gold.len(),
            found: cums.len(),
        });
    }
    if cums.is_empty() {
        return Err(EvalError::Precondition("no patients".into()));
    }
    let (mut norm, mut raw) = (0.0, 0.0);
    for (i, (c, y)) in cums.iter().zip(gold).enumerate() {
        if c.len() != y.len() || c.is_empty() {
            return Err(EvalError::Length {
                what: format!("curve {i}"),
                expected: y.len(),
                found: c.len(),
            });
        }
        let s: f64 = c.iter().zip(y).map(|(&a, &b)| (f64::from(b) - a).abs()).sum();
        raw += s;
        norm += s / c.len() as f64;
    }
    let n = cums.len() as f64;
    Ok(Area {
        normalized: norm / n,
        raw: raw / n,
    })
}

/// Fractional reduction of the area relative to a reference model.
pub fn abc_gain(method: f64, null: f64) -> Result<f64, EvalError> {
    if !(null > 0.0) {
        return Err(EvalError::DegenerateNull(null));
    }
    Ok((null - method) / null)
}

/// How the reference model's constant per-visit probability is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prevalence {
    /// Fraction of positive visits.
    Visit,
    /// Fraction of patients with any positive visit.
    Patient,
}

pub fn prevalence(gold: &[Vec<u8>], unit: Prevalence) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Precondition("empty evaluation split".into()));
    }
    Ok(match unit {
        Prevalence::Visit => {
            let visits: usize = gold.iter().map(Vec::len).sum();
            if visits == 0 {
                return Err(EvalError::Precondition("no visits".into()));
            }
            gold.iter().flatten().filter(|&&y| y == 1).count() as f64 / visits as f64
        }
        Prevalence::Patient => gold.iter().filter(|g| g.contains(&1)).count() as f64 / gold.len() as f64,
    })
}

/// Cumulative curves of the constant-prevalence reference model.
pub fn null_curves(gold: &[Vec<u8>], unit: Prevalence) -> Result<Vec<Vec<f64>>, EvalError> {
    let rate = prevalence(gold, unit)?;
    Ok(gold.iter().map(|g| cumulative_curve(&vec![rate; g.len()])).collect())
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize), EvalError> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

fn check_pair(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length {
            what: "scores".into(),
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Precondition("NaN score".into()));
    }
    Ok(())
}

/// Mann-Whitney estimate of the ROC area; tied pairs count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_pair(scores, labels)?;
    let (np, nn) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the pair credit, kept integral
    let mut credit: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k] == 1).count() as u128;
        let neg = group.len() as u128 - pos;
        credit += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(credit as f64 / (2.0 * np as f64 * nn as f64))
}

/// F1 of the rule `score >= cutoff` at the most sensitive cutoff whose
/// specificity reaches `spec_target`. Among cutoffs of equal sensitivity the
/// largest is taken, so no negative is admitted without a positive gained.
pub fn f1_at_specificity(scores: &[f64], labels: &[u8], spec_target: f64) -> Result<(f64, f64), EvalError> {
    check_pair(scores, labels)?;
    if !(0.0..=1.0).contains(&spec_target) {
        return Err(EvalError::Precondition(format!("specificity target {spec_target} outside [0, 1]")));
    }
    let (np, nn) = class_counts(labels)?;
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y != 1).map(|(&s, _)| s).collect();
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let specificity = |c: f64| neg.partition_point(|&s| s < c) as f64 / nn as f64;
    candidates.push(f64::INFINITY);
    let loosest = candidates
        .into_iter()
        .find(|&c| specificity(c) >= spec_target)
        .expect("an infinite cutoff has full specificity");
    let cutoff = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| y == 1 && s >= loosest)
        .map(|(&s, _)| s)
        .min_by(f64::total_cmp)
        .unwrap_or(loosest);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        if s >= cutoff {
            if y == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / np as f64;
        2.0 * precision * recall / (precision + recall)
    };
    Ok((f1, cutoff))
}

fn check_open_unit(name: &str, x: f64) -> Result<(), EvalError> {
    if !(x > 0.0 && x < 1.0) {
        return Err(EvalError::Precondition(format!("{name} must lie in (0, 1), got {x}")));
    }
    Ok(())
}

/// First visit (1-based) whose probability strictly exceeds `threshold`.
pub fn onset_from_curve(p: &[f64], threshold: f64) -> Result<Option<usize>, EvalError> {
    check_open_unit("threshold", threshold)?;
    Ok(p.iter().position(|&x| x > threshold).map(|t| t + 1))
}

/// Smallest threshold whose false-positive rate under the rule
/// `score > threshold` is at most `target_fpr` on the negative scores.
/// Candidates are midpoints between consecutive distinct scores and the
/// largest score.
pub fn threshold_for_fpr(negative_scores: &[f64], target_fpr: f64) -> Result<f64, EvalError> {
    check_open_unit("target FPR", target_fpr)?;
    if negative_scores.is_empty() {
        return Err(EvalError::Precondition("no negative patients".into()));
    }
    let mut s = negative_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let fpr = |c: f64| (s.len() - s.partition_point(|&x| x <= c)) as f64 / n;
    let mut distinct = s.clone();
    distinct.dedup();
    let mut candidates: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    candidates.push(*distinct.last().expect("nonempty"));
    Ok(candidates
        .into_iter()
        .find(|&c| fpr(c) <= target_fpr)
        .expect("the largest score admits no false positives"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub spec_target: f64,
    pub prevalence: Prevalence,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            spec_target: 0.95,
            prevalence: Prevalence::Visit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub auc: f64,
    pub f1: f64,
    pub cutoff: f64,
    pub abc_cdf: f64,
    pub abc_gain: f64,
    pub abc_cdf_raw: f64,
    pub abc_gain_raw: f64,
    pub n_patients: usize,
    pub n_visits: usize,
}

const FIELDS: [&str; 9] = [
    "auc",
    "f1",
    "cutoff",
    "abc_cdf",
    "abc_gain",
    "abc_cdf_raw",
    "abc_gain_raw",
    "n_patients",
    "n_visits",
];

impl MetricReport {
    fn values(&self) -> [String; 9] {
        [
            format!("{}", self.auc),
            format!("{}", self.f1),
            format!("{}", self.cutoff),
            format!("{}", self.abc_cdf),
            format!("{}", self.abc_gain),
            format!("{}", self.abc_cdf_raw),
            format!("{}", self.abc_gain_raw),
            self.n_patients.to_string(),
            self.n_visits.to_string(),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_text(&self) -> String {
        FIELDS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn csv_header() -> String {
        FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// All metrics for per-visit probabilities against gold labels.
pub fn evaluate(probs: &[Vec<f64>], gold: &[Vec<u8>], cfg: &EvalConfig) -> Result<MetricReport, EvalError> {
    if probs.len() != gold.len() {
        return Err(EvalError::Length {
            what: "predictions".into(),
            expected: gold.len(),
            found: probs.len(),
        });
    }
    let scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let labels: Vec<u8> = gold.iter().flatten().copied().collect();
    let auc = auc(&scores, &labels)?;
    let (f1, cutoff) = f1_at_specificity(&scores, &labels, cfg.spec_target)?;
    let cums: Vec<Vec<f64>> = probs.iter().map(|p| cumulative_curve(p)).collect();
    let method = abc_cdf(&cums, gold)?;
    let null = abc_cdf(&null_curves(gold, cfg.prevalence)?, gold)?;
    Ok(MetricReport {
        auc,
        f1,
        cutoff,
        abc_cdf: method.normalized,
        abc_gain: abc_gain(method.normalized, null.normalized)?,
        abc_cdf_raw: method.raw,
        abc_gain_raw: abc_gain(method.raw, null.raw)?,
        n_patients: gold.len(),
        n_visits: labels.len(),
    })
}
