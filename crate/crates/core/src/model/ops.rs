//! Dense building blocks with hand-written derivatives.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2, Axis};

use crate::numeric::order_free_sum;

pub(crate) const LN_EPS: f64 = 1e-5;
pub(crate) const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `x w^T` for a weight stored as `out x in`.
///
/// With `fixed_order` the product is a plain triple loop, so each output
/// element is the same sequence of operations no matter how many rows `x`
/// has or where a row sits.
pub(crate) fn matmul_t(x: ArrayView2<f64>, w: ArrayView2<f64>, fixed_order: bool) -> Array2<f64> {
    if !fixed_order {
        return x.dot(&w.t());
    }
    let (n, k) = x.dim();
    let m = w.nrows();
    debug_assert_eq!(w.ncols(), k);
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        let xi = x.row(i);
        for o in 0..m {
            let wo = w.row(o);
            let mut acc = 0.0;
            for j in 0..k {
                acc += xi[j] * wo[j];
            }
            out[[i, o]] = acc;
        }
    }
    out
}

pub(crate) fn add_bias(y: &mut Array2<f64>, b: &[f64]) {
    for mut row in y.rows_mut() {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

/// `dW += dy^T x`, `db += colsum(dy)`; returns `dy w`.
pub(crate) fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    mut dw: ArrayViewMut2<f64>,
    db: Option<&mut [f64]>,
) -> Array2<f64> {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut dw);
    if let Some(db) = db {
        for (d, s) in db.iter_mut().zip(dy.sum_axis(Axis(0))) {
            *d += s;
        }
    }
    dy.dot(&w)
}

pub(crate) struct NormCache {
    pub xhat: Array2<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: &[f64], b: &[f64]) -> (Array2<f64>, NormCache) {
    let (n, h) = x.dim();
    let mut xhat = Array2::zeros((n, h));
    let mut y = Array2::zeros((n, h));
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / h as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..h {
            let xh = (row[j] - mean) * r;
            xhat[[i, j]] = xh;
            y[[i, j]] = xh * g[j] + b[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Array2<f64> {
    let (n, h) = dy.dim();
    let mut dx = Array2::zeros((n, h));
    let mut dxhat = vec![0.0; h];
    for i in 0..n {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..h {
            let d = dy[[i, j]];
            let xh = cache.xhat[[i, j]];
            dg[j] += d * xh;
            db[j] += d;
            dxhat[j] = d * g[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh;
        }
        mean_d /= h as f64;
        mean_dx /= h as f64;
        let r = cache.rstd[i];
        for j in 0..h {
            dx[[i, j]] = r * (dxhat[j] - mean_d - cache.xhat[[i, j]] * mean_dx);
        }
    }
    dx
}

/// Row-wise RMS normalization of a `n x d` block with gain `g`.
/// Returns the output and the per-row inverse RMS.
pub(crate) fn rms_norm(x: ArrayView2<f64>, g: &[f64]) -> (Array2<f64>, Vec<f64>) {
    let (n, d) = x.dim();
    let mut y = Array2::zeros((n, d));
    let mut inv = Vec::with_capacity(n);
    for i in 0..n {
        let ms = x.row(i).iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (ms + RMS_EPS).sqrt();
        inv.push(r);
        for j in 0..d {
            y[[i, j]] = x[[i, j]] * r * g[j];
        }
    }
    (y, inv)
}

pub(crate) fn rms_norm_backward(
    x: ArrayView2<f64>,
    inv: &[f64],
    g: &[f64],
    dy: ArrayView2<f64>,
    dg: &mut [f64],
) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let r = inv[i];
        let mut dot = 0.0;
        for j in 0..d {
            dg[j] += dy[[i, j]] * x[[i, j]] * r;
            dot += dy[[i, j]] * g[j] * x[[i, j]];
        }
        let c = r * r * r * dot / d as f64;
        for j in 0..d {
            dx[[i, j]] = r * dy[[i, j]] * g[j] - c * x[[i, j]];
        }
    }
    dx
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

pub(crate) fn silu_grad(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

/// Row softmax in place. `fixed_order` sums the exponentials in sorted order.
pub(crate) fn softmax_rows(s: &mut Array2<f64>, fixed_order: bool) {
    let mut buf = Vec::new();
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = if fixed_order {
            buf.clear();
            buf.extend(row.iter().copied());
            order_free_sum(&mut buf)
        } else {
            row.sum()
        };
        row.mapv_inplace(|v| v / total);
    }
}

/// `p v` where the reduction runs over the rows of `v` (the context axis).
pub(crate) fn weighted_values(
    p: ArrayView2<f64>,
    v: ArrayView2<f64>,
    fixed_order: bool,
) -> Array2<f64> {
    if !fixed_order {
        return p.dot(&v);
    }
    let (n, m) = p.dim();
    let d = v.ncols();
    let mut out = Array2::zeros((n, d));
    let mut terms = vec![0.0; m];
    for i in 0..n {
        for c in 0..d {
            for j in 0..m {
                terms[j] = p[[i, j]] * v[[j, c]];
            }
            out[[i, c]] = order_free_sum(&mut terms);
        }
    }
    out
}
