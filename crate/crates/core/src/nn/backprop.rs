//! Forward and backward passes over flat parameter slices, generic in the scalar.

use crate::dataset::{Dataset, Regularizer};

use super::params::Architecture;
use super::scalar::Scalar;
use super::LOG_CLAMP;

/// Reusable activation buffers; `acts[0]` is the input, `acts[l]` the output
/// of hidden layer `l`.
pub(crate) struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let dims = arch.dims();
        Workspace {
            acts: dims[..dims.len() - 1].iter().map(|&d| vec![T::zero(); d]).collect(),
            delta: Vec::with_capacity(dims.iter().copied().max().unwrap_or(0)),
            delta_prev: Vec::with_capacity(dims.iter().copied().max().unwrap_or(0)),
        }
    }
}

/// Class probabilities `[p0, p1]` for one input; fills the workspace for a
/// subsequent [`backward`].
pub(crate) fn forward<T: Scalar>(arch: &Architecture, theta: &[T], x: &[f64], ws: &mut Workspace<T>) -> [T; 2] {
    for (a, &v) in ws.acts[0].iter_mut().zip(x) {
        *a = T::constant(v);
    }
    let n_layers = arch.num_layers();
    let mut offset = 0;
    let mut logits = [T::zero(); 2];
    for (l, (n_in, n_out)) in arch.layer_shapes().enumerate() {
        let w = &theta[offset..offset + n_in * n_out];
        let b = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let last = l + 1 == n_layers;
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut z = b[o];
            for (wi, ai) in row.iter().zip(&ws.acts[l]) {
                z += *wi * *ai;
            }
            if last {
                logits[o] = z;
            } else {
                ws.acts[l + 1][o] = if z.re() > 0.0 { z } else { T::zero() };
            }
        }
    }
    softmax2(logits)
}

pub(crate) fn softmax2<T: Scalar>(z: [T; 2]) -> [T; 2] {
    // Shifting by a constant leaves softmax and all its derivatives unchanged.
    let m = T::constant(z[0].re().max(z[1].re()));
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Accumulates `∂/∂θ` into `grad` given `d_logit1 = ∂obj/∂z1` for the last
/// forward pass. For a two-way softmax `∂obj/∂z0 = -∂obj/∂z1` whenever the
/// objective depends on the logits only through the probabilities.
pub(crate) fn backward<T: Scalar>(
    arch: &Architecture,
    theta: &[T],
    d_logit1: T,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) {
    ws.delta.clear();
    ws.delta.push(-d_logit1);
    ws.delta.push(d_logit1);

    let shapes: Vec<(usize, usize)> = arch.layer_shapes().collect();
    let mut end = theta.len();
    for l in (0..shapes.len()).rev() {
        let (n_in, n_out) = shapes[l];
        let b_start = end - n_out;
        let w_start = b_start - n_in * n_out;
        end = w_start;
        let input = &ws.acts[l];
        for o in 0..n_out {
            let d = ws.delta[o];
            let g_row = &mut grad[w_start + o * n_in..w_start + (o + 1) * n_in];
            for (g, a) in g_row.iter_mut().zip(input) {
                *g += d * *a;
            }
            grad[b_start + o] += d;
        }
        if l == 0 {
            break;
        }
        ws.delta_prev.clear();
        ws.delta_prev.resize(n_in, T::zero());
        let w = &theta[w_start..b_start];
        for o in 0..n_out {
            let d = ws.delta[o];
            for (i, dp) in ws.delta_prev.iter_mut().enumerate() {
                *dp += w[o * n_in + i] * d;
            }
        }
        for (dp, a) in ws.delta_prev.iter_mut().zip(input) {
            if a.re() <= 0.0 {
                *dp = T::zero();
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
    }
}

/// Mean cross-entropy plus `gamma` times the fairness penalty; when `grad` is
/// given, its exact gradient is accumulated into it.
///
/// The penalty is `1 - mean(p1)` over the rows selected by `reg`, or zero
/// when none are selected. `gamma == 0` skips the penalty entirely.
pub(crate) fn objective<T: Scalar>(
    arch: &Architecture,
    theta: &[T],
    data: &Dataset,
    reg: Regularizer,
    gamma: f64,
    mut grad: Option<&mut [T]>,
) -> T {
    let n = data.len() as f64;
    let reg_rows = if gamma == 0.0 {
        0
    } else {
        data.labels()
            .iter()
            .zip(data.sensitive())
            .filter(|(&y, &a)| reg.applies(y, a))
            .count()
    };
    let reg_weight = T::constant(if reg_rows > 0 { gamma / reg_rows as f64 } else { 0.0 });
    let n_const = T::constant(n);

    let mut ws = Workspace::new(arch);
    let mut ce_sum = T::zero();
    let mut p1_sum = T::zero();
    for i in 0..data.len() {
        let [p0, p1] = forward(arch, theta, data.row(i), &mut ws);
        let y = data.labels()[i];
        let a = data.sensitive()[i];

        let p_y = if y == 1 { p1 } else { p0 };
        let mut d_logit1 = T::zero();
        if p_y.re() < LOG_CLAMP {
            ce_sum += T::constant(-LOG_CLAMP.ln());
        } else if p_y.re() > 1.0 - LOG_CLAMP {
            ce_sum += T::constant(-(1.0 - LOG_CLAMP).ln());
        } else {
            ce_sum += -p_y.ln();
            // d(-ln p_y)/dz1 is p1 - 1 = -p0 for y = 1 and p1 for y = 0.
            d_logit1 = (if y == 1 { -p0 } else { p1 }) / n_const;
        }

        if reg_rows > 0 && reg.applies(y, a) {
            p1_sum += p1;
            d_logit1 = d_logit1 - reg_weight * p1 * p0;
        }

        if let Some(g) = grad.as_deref_mut() {
            backward(arch, theta, d_logit1, &mut ws, g);
        }
    }

    let ce = ce_sum / n_const;
    if reg_rows > 0 {
        let penalty = T::constant(1.0) - p1_sum / T::constant(reg_rows as f64);
        ce + T::constant(gamma) * penalty
    } else {
        ce
    }
}
