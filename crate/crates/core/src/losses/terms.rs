//! Per-patient loss terms built on a tape.

use super::LossError;
use crate::numerics::{Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), LossError> {
    if expected != found {
        return Err(LossError::Length { what, expected, found });
    }
    Ok(())
}

/// `-Σ_t w_t [y_t log p_t + (1 - y_t) log(1 - p_t)] / Σ_t w_t` for per-visit
/// probabilities `p` and (possibly soft) targets.
pub fn weighted_ce(tape: &mut Tape, p: Var, targets: &[f64], weights: &[f64]) -> Result<Var, LossError> {
    let n = tape.value(p).numel();
    check_len("targets", n, targets.len())?;
    check_len("weights", n, weights.len())?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(LossError::Config("kernel weights must have a positive sum".into()));
    }
    let pos: Vec<f64> = targets.iter().zip(weights).map(|(y, w)| w * y / total).collect();
    let neg: Vec<f64> = targets.iter().zip(weights).map(|(y, w)| w * (1.0 - y) / total).collect();
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = tape.log(pc);
    let q = tape.one_minus(pc);
    let log_q = tape.log(q);
    let cp = tape.constant(Tensor::vector(pos));
    let cn = tape.constant(Tensor::vector(neg));
    let a = tape.mul(log_p, cp)?;
    let b = tape.mul(log_q, cn)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.scale(s, -1.0))
}

/// `(1 / (T - 1)) Σ_t max(p_t - p_{t+1}, 0)`; zero for a single visit.
pub fn monotone_drop(tape: &mut Tape, p: Var) -> Result<Var, LossError> {
    let t = tape.value(p).numel();
    if t < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let head = tape.slice_rows(p, 0, t - 1)?;
    let tail = tape.slice_rows(p, 1, t)?;
    let drop = tape.sub(head, tail)?;
    let drop = tape.relu(drop);
    let s = tape.sum(drop);
    Ok(tape.scale(s, 1.0 / (t - 1) as f64))
}

/// `(1 / (T - 1)) Σ_t ‖F_t - F_{t+1}‖₂` over the rows of a `T x q` matrix.
pub fn smoothness(tape: &mut Tape, reps: Var) -> Result<Var, LossError> {
    let t = tape.value(reps).rows();
    if t < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let head = tape.slice_rows(reps, 0, t - 1)?;
    let tail = tape.slice_rows(reps, 1, t)?;
    let diff = tape.sub(head, tail)?;
    let norms = tape.l2_norm(diff)?;
    let s = tape.sum(norms);
    Ok(tape.scale(s, 1.0 / (t - 1) as f64))
}

/// Margin hinge between every visit of a real and a synthetic series,
/// normalized by the number of visit pairs. Same-label pairs are pulled within
/// `margin`; different-label pairs are pushed at least `margin` apart.
pub fn contrast(
    tape: &mut Tape,
    real: Var,
    real_gold: &[u8],
    synth: Var,
    synth_gold: &[u8],
    margin: f64,
) -> Result<Var, LossError> {
    let (n, m) = (tape.value(real).rows(), tape.value(synth).rows());
    check_len("real gold", n, real_gold.len())?;
    check_len("synthetic gold", m, synth_gold.len())?;
    let mut sign = Vec::with_capacity(n * m);
    for &y in real_gold {
        for &ys in synth_gold {
            sign.push(if y == ys { 1.0 } else { -1.0 });
        }
    }
    let dist = tape.pairwise_dist(real, synth)?;
    let excess = tape.shift(dist, -margin);
    let sign = tape.constant(Tensor::matrix(n, m, sign));
    let signed = tape.mul(excess, sign)?;
    let hinge = tape.relu(signed);
    let s = tape.sum(hinge);
    Ok(tape.scale(s, 1.0 / (n * m) as f64))
}
