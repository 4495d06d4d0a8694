//! Reverse-mode gradients through the whole network.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use super::ops::{
    gelu_grad, layer_norm_backward, linear_backward, rms_norm_backward, silu, silu_grad,
};
use super::{BlockVariant, Model, TokenBatch};
use crate::error::{Error, Result};

/// A gradient with the same flat layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(n_params: usize) -> Self {
        Self {
            grad: vec![0.0; n_params],
        }
    }

    pub fn n_params(&self) -> usize {
        self.grad.len()
    }
}

/// Disjoint mutable slices for `a` and `b` with `a` before `b`.
fn pair<'a>(
    g: &'a mut [f64],
    a: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

fn mat_mut(g: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), g).expect("layout shape")
}

/// `y = x W^T + b` backward with `W` at `w` and `b` at `b` in the flat vector.
#[allow(clippy::too_many_arguments)]
fn linear(
    model: &Model,
    grad: &mut [f64],
    x: ArrayView2<f64>,
    w: &Range<usize>,
    b: &Range<usize>,
    out: usize,
    inp: usize,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let (gw, gb) = pair(grad, w, b);
    linear_backward(
        x,
        model.mat(w, out, inp),
        dy,
        mat_mut(gw, out, inp),
        Some(gb),
    )
}

impl Model {
    /// Add `scale * d(sum of per-query losses)/d(params)` into `grad` and
    /// return `scale * sum of per-query losses`.
    ///
    /// Row `i` of `targets` is the target distribution of query `i`.
    pub fn accumulate_gradient(
        &self,
        batch: &TokenBatch,
        targets: ArrayView2<f64>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let cfg = &self.config;
        let n_q = batch.n_query();
        if targets.dim() != (n_q, cfg.bins) {
            return Err(Error::data(format!(
                "targets have shape {:?}, expected ({n_q}, {})",
                targets.dim(),
                cfg.bins
            )));
        }
        if grad.len() != self.n_params() {
            return Err(Error::data(
                "gradient buffer does not match the parameter count",
            ));
        }
        let cache = self.forward_cached(batch)?;
        let n_ctx = batch.n_context();
        let n = n_ctx + n_q;
        let (h, f, heads, dh) = (cfg.hidden, cfg.ffn, cfg.heads, cfg.head_dim());
        let att_scale = 1.0 / (dh as f64).sqrt();
        let lay = &self.layout;

        let mut loss = 0.0;
        let mut dlogits = Array2::zeros((n_q, cfg.bins));
        for i in 0..n_q {
            let mass: f64 = targets.row(i).sum();
            for l in 0..cfg.bins {
                let (p, a) = (cache.probs[[i, l]], targets[[i, l]]);
                if a > 0.0 {
                    loss -= a * p.ln();
                }
                dlogits[[i, l]] = scale * (p * mass - a);
            }
        }
        loss *= scale;

        let dhf = linear(
            self,
            grad,
            cache.hf.view(),
            &lay.head_w,
            &lay.head_b,
            cfg.bins,
            h,
            dlogits.view(),
        );
        let dxq = {
            let (gg, gb) = pair(grad, &lay.final_norm.0, &lay.final_norm.1);
            layer_norm_backward(&dhf, &cache.final_norm, self.p(&lay.final_norm.0), gg, gb)
        };
        let mut dx = Array2::zeros((n, h));
        dx.slice_mut(s![n_ctx.., ..]).assign(&dxq);

        for (bl, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // feed-forward branch
            let dact = linear(self, grad, c.act.view(), &bl.w2, &bl.b2, h, f, dx.view());
            let (dx_mid, dh_ffn) = match cfg.variant {
                BlockVariant::Standard => {
                    let du1 = ndarray::Zip::from(&dact)
                        .and(&c.u1)
                        .map_collect(|d, u| d * gelu_grad(*u));
                    let dh2 = linear(self, grad, c.h2.view(), &bl.w1, &bl.b1, f, h, du1.view());
                    let norm2 = c
                        .norm2
                        .as_ref()
                        .expect("standard block keeps its second norm");
                    let (gg, gb) = pair(grad, &bl.norm2.0, &bl.norm2.1);
                    let back = layer_norm_backward(&dh2, norm2, self.p(&bl.norm2.0), gg, gb);
                    (&dx + &back, None)
                }
                BlockVariant::Parallel => {
                    let du1 = ndarray::Zip::from(&dact)
                        .and(&c.u1)
                        .and(&c.u3)
                        .map_collect(|d, a, b| d * b * silu_grad(*a));
                    let du3 = ndarray::Zip::from(&dact)
                        .and(&c.u1)
                        .map_collect(|d, a| d * silu(*a));
                    let mut dh = linear(self, grad, c.h2.view(), &bl.w1, &bl.b1, f, h, du1.view());
                    dh += &linear(self, grad, c.h2.view(), &bl.w3, &bl.b3, f, h, du3.view());
                    (dx.clone(), Some(dh))
                }
            };

            // attention branch
            let dconcat = linear(
                self,
                grad,
                c.attn.view(),
                &bl.wo,
                &bl.bo,
                h,
                h,
                dx_mid.view(),
            );
            let mut dq = Array2::zeros((n, h));
            let mut dk = Array2::zeros((n_ctx, h));
            let mut dv = Array2::zeros((n_ctx, h));
            for hd in 0..heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let p = &c.probs[hd];
                let d_o = dconcat.slice(cols);
                let vh = c.v.slice(cols);
                let dp = d_o.dot(&vh.t());
                dv.slice_mut(cols).assign(&p.t().dot(&d_o));
                let mut ds = Array2::zeros(p.dim());
                for i in 0..n {
                    let dot: f64 = (0..n_ctx).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                    for j in 0..n_ctx {
                        ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * att_scale;
                    }
                }
                let dqh = ds.dot(&c.k.slice(cols));
                let dkh = ds.t().dot(&c.q.slice(cols));
                match cfg.variant {
                    BlockVariant::Standard => {
                        dq.slice_mut(cols).assign(&dqh);
                        dk.slice_mut(cols).assign(&dkh);
                    }
                    BlockVariant::Parallel => {
                        let gq = self.p(&bl.q_gain);
                        let gk = self.p(&bl.k_gain);
                        let dqr = rms_norm_backward(
                            c.q_raw.slice(cols),
                            &c.q_inv[hd],
                            gq,
                            dqh.view(),
                            &mut grad[bl.q_gain.clone()],
                        );
                        let dkr = rms_norm_backward(
                            c.k_raw.slice(cols),
                            &c.k_inv[hd],
                            gk,
                            dkh.view(),
                            &mut grad[bl.k_gain.clone()],
                        );
                        dq.slice_mut(cols).assign(&dqr);
                        dk.slice_mut(cols).assign(&dkr);
                    }
                }
            }
            let h1_ctx = c.h1.slice(s![..n_ctx, ..]);
            let mut dh1 = linear(self, grad, c.h1.view(), &bl.wq, &bl.bq, h, h, dq.view());
            let dk_in = linear(self, grad, h1_ctx, &bl.wk, &bl.bk, h, h, dk.view());
            let dv_in = linear(self, grad, h1_ctx, &bl.wv, &bl.bv, h, h, dv.view());
            {
                let mut ctx_rows = dh1.slice_mut(s![..n_ctx, ..]);
                ctx_rows += &dk_in;
                ctx_rows += &dv_in;
            }
            if let Some(dh) = dh_ffn {
                dh1 += &dh;
            }
            let (gg, gb) = pair(grad, &bl.norm1.0, &bl.norm1.1);
            let back = layer_norm_backward(&dh1, &c.norm1, self.p(&bl.norm1.0), gg, gb);
            dx = &dx_mid + &back;
        }

        // embeddings
        {
            let gw = &mut grad[lay.embed_x.clone()];
            ndarray::linalg::general_mat_mul(
                1.0,
                &dx.t(),
                &batch.features,
                1.0,
                &mut mat_mut(gw, h, cfg.d_max),
            );
        }
        for i in 0..n {
            let row = dx.row(i);
            if i < n_ctx {
                let t = batch.context_time[i];
                let e = usize::from(batch.context_event[i]);
                let gt = &mut grad[lay.embed_time.clone()];
                for j in 0..h {
                    gt[j] += row[j] * t;
                }
                let ge =
                    &mut grad[lay.embed_event.start + e * h..lay.embed_event.start + (e + 1) * h];
                for j in 0..h {
                    ge[j] += row[j];
                }
            } else {
                let e = usize::from(batch.query_indicator[i - n_ctx]);
                let gq =
                    &mut grad[lay.embed_query.start + e * h..lay.embed_query.start + (e + 1) * h];
                for j in 0..h {
                    gq[j] += row[j];
                }
            }
        }
        Ok(loss)
    }

    /// Mean per-query loss and its gradient for one batch.
    pub fn loss_and_gradient(
        &self,
        batch: &TokenBatch,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, GradientBundle)> {
        let n_q = batch.n_query();
        if n_q == 0 {
            return Err(Error::data("no queries to score"));
        }
        let mut g = GradientBundle::zeros(self.n_params());
        let loss = self.accumulate_gradient(batch, targets, 1.0 / n_q as f64, &mut g.grad)?;
        Ok((loss, g))
    }

    /// Mean per-query loss without gradients.
    pub fn loss(&self, batch: &TokenBatch, targets: ArrayView2<f64>) -> Result<f64> {
        let probs = self.forward(batch)?;
        if targets.dim() != probs.dim() {
            return Err(Error::data("targets do not match the prediction shape"));
        }
        let mut total = 0.0;
        for (p, a) in probs.iter().zip(targets.iter()) {
            if *a > 0.0 {
                total -= a * p.ln();
            }
        }
        Ok(total / probs.nrows() as f64)
    }
}
