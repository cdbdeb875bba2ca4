use super::{NumericsError, Tape, Tensor, Var};

/// Compares an analytic gradient against central differences.
///
/// Returns `max_i |g_i - fd_i| / max(1, |fd_i|)`.
pub fn grad_check_with<V, G>(value: V, grad: G, theta: &Tensor, eps: f64) -> Result<f64, NumericsError>
where
    V: Fn(&Tensor) -> Result<f64, NumericsError>,
    G: Fn(&Tensor) -> Result<Tensor, NumericsError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(NumericsError::InvalidArgument(format!(
            "finite-difference step {eps} outside (0, 1e-2]"
        )));
    }
    let f0 = value(theta)?;
    if !f0.is_finite() {
        return Err(NumericsError::NonFinite(format!("f(theta) = {f0}")));
    }
    let analytic = grad(theta)?;
    if analytic.numel() != theta.numel() {
        return Err(NumericsError::ShapeMismatch {
            op: "grad_check",
            lhs: analytic.shape().to_vec(),
            rhs: theta.shape().to_vec(),
        });
    }
    let mut probe = theta.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.numel() {
        let x = theta.data()[i];
        probe.data_mut()[i] = x + eps;
        let fp = value(&probe)?;
        probe.data_mut()[i] = x - eps;
        let fm = value(&probe)?;
        probe.data_mut()[i] = x;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(NumericsError::NonFinite(format!("f near coordinate {i}")));
        }
        let fd = (fp - fm) / (2.0 * eps);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradient check for a scalar function built on a tape from a single leaf.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericsError>,
{
    let value = |t: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.param(t.clone());
        let y = f(&mut tape, x)?;
        Ok(tape.scalar(y))
    };
    let grad = |t: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.param(t.clone());
        let y = f(&mut tape, x)?;
        let mut g = tape.backward(y)?;
        Ok(g.take(x).unwrap_or_else(|| Tensor::zeros(t.shape())))
    };
    grad_check_with(value, grad, theta, eps)
}
