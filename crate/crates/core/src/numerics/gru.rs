//! Fused GRU sequence kernel with hand-written backpropagation through time.

use super::tape::{expit, Var};
use super::tensor::{gemv, gemv_t_acc, Tensor};

#[derive(Debug)]
pub(crate) struct GruCache {
    pub inputs: [Var; 5],
    hidden: usize,
    /// Per processed step, in processing order.
    steps: Vec<StepCache>,
}

#[derive(Debug)]
struct StepCache {
    t: usize,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `U_n h + b_hn`, needed for the reset-gate adjoint.
    hn: Vec<f64>,
}

pub(crate) fn forward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    b_ih: &Tensor,
    b_hh: &Tensor,
    inputs: [Var; 5],
    reverse: bool,
) -> (Tensor, GruCache) {
    let (len, input) = (x.rows(), x.cols());
    let hidden = w_hh.cols();
    let mut out = vec![0.0; len * hidden];
    let mut steps = Vec::with_capacity(len);
    let mut h = vec![0.0; hidden];
    let mut gi = vec![0.0; 3 * hidden];
    let mut gh = vec![0.0; 3 * hidden];

    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for &t in &order {
        gemv(w_ih.data(), x.row(t), b_ih.data(), &mut gi, input);
        gemv(w_hh.data(), &h, b_hh.data(), &mut gh, hidden);
        let mut r = vec![0.0; hidden];
        let mut z = vec![0.0; hidden];
        let mut n = vec![0.0; hidden];
        let hn = gh[2 * hidden..].to_vec();
        let mut h_new = vec![0.0; hidden];
        for k in 0..hidden {
            r[k] = expit(gi[k] + gh[k]);
            z[k] = expit(gi[hidden + k] + gh[hidden + k]);
            n[k] = (gi[2 * hidden + k] + r[k] * hn[k]).tanh();
            h_new[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        out[t * hidden..(t + 1) * hidden].copy_from_slice(&h_new);
        steps.push(StepCache {
            t,
            h_prev: std::mem::replace(&mut h, h_new),
            r,
            z,
            n,
            hn,
        });
    }
    let cache = GruCache {
        inputs,
        hidden,
        steps,
    };
    (Tensor::matrix(len, hidden, out), cache)
}

/// Returns adjoints for `(x, w_ih, w_hh, b_ih, b_hh)`.
pub(crate) fn backward(
    cache: &GruCache,
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    g_out: &Tensor,
) -> [Tensor; 5] {
    let hidden = cache.hidden;
    let input = x.cols();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw_ih = vec![0.0; 3 * hidden * input];
    let mut dw_hh = vec![0.0; 3 * hidden * hidden];
    let mut db_ih = vec![0.0; 3 * hidden];
    let mut db_hh = vec![0.0; 3 * hidden];
    let mut carry = vec![0.0; hidden];
    let mut dgi = vec![0.0; 3 * hidden];
    let mut dgh = vec![0.0; 3 * hidden];

    for step in cache.steps.iter().rev() {
        let t = step.t;
        let mut dh_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let dh = g_out.get2(t, k) + carry[k];
            let (r, z, n) = (step.r[k], step.z[k], step.n[k]);
            let dn = dh * (1.0 - z);
            let dz = dh * (step.h_prev[k] - n);
            dh_prev[k] = dh * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * step.hn[k];
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            dgi[k] = dar;
            dgi[hidden + k] = daz;
            dgi[2 * hidden + k] = dan;
            dgh[k] = dar;
            dgh[hidden + k] = daz;
            dgh[2 * hidden + k] = dan * r;
        }
        let xt = x.row(t);
        for (row, &d) in dgi.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (o, xv) in dw_ih[row * input..(row + 1) * input].iter_mut().zip(xt) {
                *o += d * xv;
            }
        }
        for (row, &d) in dgh.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (o, hv) in dw_hh[row * hidden..(row + 1) * hidden]
                .iter_mut()
                .zip(&step.h_prev)
            {
                *o += d * hv;
            }
        }
        for k in 0..3 * hidden {
            db_ih[k] += dgi[k];
            db_hh[k] += dgh[k];
        }
        let dxt = &mut dx.data_mut()[t * input..(t + 1) * input];
        gemv_t_acc(w_ih.data(), &dgi, dxt, 3 * hidden, input);
        gemv_t_acc(w_hh.data(), &dgh, &mut dh_prev, 3 * hidden, hidden);
        carry = dh_prev;
    }
    [
        dx,
        Tensor::matrix(3 * hidden, input, dw_ih),
        Tensor::matrix(3 * hidden, hidden, dw_hh),
        Tensor::vector(db_ih),
        Tensor::vector(db_hh),
    ]
}
