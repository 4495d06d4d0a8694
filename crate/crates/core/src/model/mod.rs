//! The in-context transformer with a histogram head.
//!
//! Context tokens embed `(x, t, delta)` and attend to every context token.
//! Query tokens embed `(x*, delta~*)` and attend to context tokens only, so a
//! query's prediction depends on the context and on nothing else in the
//! batch. No positional information enters any token.
//!
//! Parameters live in one flat `Vec<f64>`; [`Layout`] names the slices.

mod backward;
pub mod checkpoint;
mod loss;
mod ops;

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, RngStream};
use crate::timewarp::{
    bin_upper_times, fit_transform, make_binner, Binner, TimeTransform, TransformKind,
};

pub use backward::GradientBundle;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, OptimizerState};
pub use loss::{nll_loss, ppsd, sce_loss, target_distribution, LossKind};

use ops::{
    add_bias, gelu, layer_norm, matmul_t, rms_norm, silu, softmax_rows, weighted_values, NormCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// Pre-norm attention then pre-norm GELU feed-forward.
    Standard,
    /// One shared norm feeding attention with RMS query-key normalization
    /// and a SwiGLU feed-forward in parallel.
    Parallel,
}

impl BlockVariant {
    pub fn code(self) -> u8 {
        match self {
            Self::Standard => 0,
            Self::Parallel => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Standard),
            1 => Some(Self::Parallel),
            _ => None,
        }
    }
}

/// Upper bound on every model size field.
pub const MAX_DIM: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_max: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub bins: usize,
    pub ffn: usize,
    pub seed: u64,
    pub variant: BlockVariant,
    pub transform: TransformKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_max: 20,
            hidden: 64,
            layers: 3,
            heads: 2,
            bins: 64,
            ffn: 128,
            seed: 0,
            variant: BlockVariant::Standard,
            transform: TransformKind::LogNormalToNormal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0
            || self.hidden == 0
            || self.layers == 0
            || self.heads == 0
            || self.ffn == 0
        {
            return Err(Error::config("model sizes must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        let dims = [
            self.d_max,
            self.hidden,
            self.layers,
            self.heads,
            self.bins,
            self.ffn,
        ];
        if dims.iter().any(|&v| v > MAX_DIM) {
            return Err(Error::config(format!(
                "model sizes are capped at {MAX_DIM}"
            )));
        }
        if self.bins < 2 {
            return Err(Error::config(format!(
                "need at least 2 bins, got {}",
                self.bins
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockLayout {
    pub norm1: (Range<usize>, Range<usize>),
    /// Unused by the parallel variant.
    pub norm2: (Range<usize>, Range<usize>),
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    /// RMS gains for queries and keys (parallel variant only).
    pub q_gain: Range<usize>,
    pub k_gain: Range<usize>,
    /// GELU: `w1`, `b1` in; SwiGLU: gate `w1`, `b1` and value `w3`, `b3`.
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w3: Range<usize>,
    pub b3: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub(crate) embed_x: Range<usize>,
    pub(crate) embed_time: Range<usize>,
    pub(crate) embed_event: Range<usize>,
    pub(crate) embed_query: Range<usize>,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) final_norm: (Range<usize>, Range<usize>),
    pub(crate) head_w: Range<usize>,
    pub(crate) head_b: Range<usize>,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, f) = (cfg.hidden, cfg.ffn);
        let parallel = cfg.variant == BlockVariant::Parallel;
        let mut a = Alloc(0);
        let embed_x = a.take(h * cfg.d_max);
        let embed_time = a.take(h);
        let embed_event = a.take(2 * h);
        let embed_query = a.take(2 * h);
        let blocks = (0..cfg.layers)
            .map(|_| {
                let norm1 = (a.take(h), a.take(h));
                let norm2 = if parallel {
                    (0..0, 0..0)
                } else {
                    (a.take(h), a.take(h))
                };
                let wq = a.take(h * h);
                let bq = a.take(h);
                let wk = a.take(h * h);
                let bk = a.take(h);
                let wv = a.take(h * h);
                let bv = a.take(h);
                let wo = a.take(h * h);
                let bo = a.take(h);
                let dh = cfg.head_dim();
                let (q_gain, k_gain) = if parallel {
                    (a.take(dh), a.take(dh))
                } else {
                    (0..0, 0..0)
                };
                let w1 = a.take(f * h);
                let b1 = a.take(f);
                let (w3, b3) = if parallel {
                    (a.take(f * h), a.take(f))
                } else {
                    (0..0, 0..0)
                };
                let w2 = a.take(h * f);
                let b2 = a.take(h);
                BlockLayout {
                    norm1,
                    norm2,
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                    q_gain,
                    k_gain,
                    w1,
                    b1,
                    w3,
                    b3,
                    w2,
                    b2,
                }
            })
            .collect();
        let final_norm = (a.take(h), a.take(h));
        let head_w = a.take(cfg.bins * h);
        let head_b = a.take(cfg.bins);
        Self {
            embed_x,
            embed_time,
            embed_event,
            embed_query,
            blocks,
            final_norm,
            head_w,
            head_b,
            total: a.0,
        }
    }
}

/// How the output head starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    /// All-zero head: every query starts at the uniform histogram.
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    layout: Layout,
    /// Fixed-order reductions: predictions are bit-identical under context
    /// permutation and under adding or removing other queries.
    pub deterministic: bool,
}

/// Embedded tokens plus the inputs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// Padded, scaled covariates, context rows first (`N x d_max`).
    pub features: Array2<f64>,
    /// Context times in normalized model space, in `[-1, 1]`.
    pub context_time: Vec<f64>,
    pub context_event: Vec<bool>,
    pub query_indicator: Vec<bool>,
    pub tokens: Array2<f64>,
}

impl TokenBatch {
    pub fn n_context(&self) -> usize {
        self.context_time.len()
    }

    pub fn n_query(&self) -> usize {
        self.query_indicator.len()
    }

    pub fn is_query(&self, token: usize) -> bool {
        token >= self.n_context()
    }
}

pub(crate) struct BlockCache {
    pub norm1: NormCache,
    pub h1: Array2<f64>,
    pub q_raw: Array2<f64>,
    pub k_raw: Array2<f64>,
    /// Per-head inverse RMS of raw queries / keys (parallel variant).
    pub q_inv: Vec<Vec<f64>>,
    pub k_inv: Vec<Vec<f64>>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    pub attn: Array2<f64>,
    pub norm2: Option<NormCache>,
    pub h2: Array2<f64>,
    pub u1: Array2<f64>,
    pub u3: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    pub final_norm: NormCache,
    pub hf: Array2<f64>,
    pub probs: Array2<f64>,
}

fn normal_fill(params: &mut [f64], range: Range<usize>, std: f64, rng: &mut RngStream) {
    for p in &mut params[range] {
        *p = std * rng.normal();
    }
}

/// Normalize a model-space time into `[-1, 1]` over the binner range.
pub fn time_feature(binner: &Binner, z: f64) -> f64 {
    let z = binner.clamp(z);
    2.0 * (z - binner.lower()) / (binner.upper() - binner.lower()) - 1.0
}

impl Model {
    pub fn new(config: ModelConfig, head: HeadInit) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = RngStream::new(config.seed, label::INIT);
        let (h, f) = (config.hidden as f64, config.ffn as f64);
        let depth = (2.0 * config.layers as f64).sqrt();
        normal_fill(&mut params, layout.embed_x.clone(), 1.0, &mut rng);
        normal_fill(&mut params, layout.embed_time.clone(), 1.0, &mut rng);
        normal_fill(&mut params, layout.embed_event.clone(), 1.0, &mut rng);
        normal_fill(&mut params, layout.embed_query.clone(), 1.0, &mut rng);
        for b in &layout.blocks {
            for r in [&b.norm1.0, &b.norm2.0, &b.q_gain, &b.k_gain] {
                params[r.clone()].fill(1.0);
            }
            for w in [&b.wq, &b.wk, &b.wv, &b.w1, &b.w3] {
                normal_fill(&mut params, w.clone(), 1.0 / h.sqrt(), &mut rng);
            }
            normal_fill(
                &mut params,
                b.wo.clone(),
                1.0 / (h.sqrt() * depth),
                &mut rng,
            );
            normal_fill(
                &mut params,
                b.w2.clone(),
                1.0 / (f.sqrt() * depth),
                &mut rng,
            );
        }
        params[layout.final_norm.0.clone()].fill(1.0);
        if head == HeadInit::Random {
            normal_fill(&mut params, layout.head_w.clone(), 1.0 / h.sqrt(), &mut rng);
            normal_fill(&mut params, layout.head_b.clone(), 0.1, &mut rng);
        }
        Ok(Self {
            config,
            params,
            layout,
            deterministic: false,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::config(format!(
                "{} parameters given, the configuration needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self {
            config,
            params,
            layout,
            deterministic: false,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    pub(crate) fn mat(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[r.clone()]).expect("layout shape")
    }

    /// Build context and query tokens.
    ///
    /// `context_z` are context times already mapped into model space; they
    /// are clamped to the binner range and rescaled to `[-1, 1]`.
    pub fn embed_tokens(
        &self,
        context_x: ArrayView2<f64>,
        context_z: &[f64],
        context_event: &[bool],
        query_x: ArrayView2<f64>,
        query_indicator: &[bool],
        binner: &Binner,
    ) -> Result<TokenBatch> {
        let n_ctx = context_x.nrows();
        let n_q = query_x.nrows();
        if context_z.len() != n_ctx || context_event.len() != n_ctx {
            return Err(Error::data(
                "context times/events do not match the context rows",
            ));
        }
        if query_indicator.len() != n_q {
            return Err(Error::data("one query indicator per query row is required"));
        }
        let d = context_x.ncols();
        if n_q > 0 && query_x.ncols() != d {
            return Err(Error::data("query and context covariate widths differ"));
        }
        let d_max = self.config.d_max;
        if d > d_max {
            return Err(Error::data(format!(
                "{d} covariates exceed the model's capacity of {d_max}; reduce the feature count"
            )));
        }
        if context_x
            .iter()
            .chain(query_x.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::data("covariates must be finite"));
        }
        let n = n_ctx + n_q;
        let scale = 1.0 / (d.max(1) as f64).sqrt();
        let mut features = Array2::zeros((n, d_max));
        features
            .slice_mut(s![..n_ctx, ..d])
            .assign(&context_x.mapv(|v| v * scale));
        if n_q > 0 {
            features
                .slice_mut(s![n_ctx.., ..d])
                .assign(&query_x.mapv(|v| v * scale));
        }
        let context_time: Vec<f64> = context_z.iter().map(|&z| time_feature(binner, z)).collect();
        let mut batch = TokenBatch {
            features,
            context_time,
            context_event: context_event.to_vec(),
            query_indicator: query_indicator.to_vec(),
            tokens: Array2::zeros((0, 0)),
        };
        self.refresh_tokens(&mut batch);
        Ok(batch)
    }

    /// Recompute `batch.tokens` from its stored inputs with the current
    /// embedding parameters.
    pub fn refresh_tokens(&self, batch: &mut TokenBatch) {
        let n_ctx = batch.n_context();
        let n = batch.features.nrows();
        let (h, d_max) = (self.config.hidden, self.config.d_max);
        let mut tokens = matmul_t(
            batch.features.view(),
            self.mat(&self.layout.embed_x, h, d_max),
            self.deterministic,
        );
        let wt = self.p(&self.layout.embed_time);
        let ev = self.p(&self.layout.embed_event);
        let qi = self.p(&self.layout.embed_query);
        for i in 0..n {
            let mut row = tokens.row_mut(i);
            if i < n_ctx {
                let e = usize::from(batch.context_event[i]);
                for j in 0..h {
                    row[j] += wt[j] * batch.context_time[i] + ev[e * h + j];
                }
            } else {
                let e = usize::from(batch.query_indicator[i - n_ctx]);
                for j in 0..h {
                    row[j] += qi[e * h + j];
                }
            }
        }
        batch.tokens = tokens;
    }

    /// Per-query histograms, `n_q x L`, rows on the probability simplex.
    pub fn forward(&self, batch: &TokenBatch) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch)?.probs)
    }

    pub(crate) fn forward_cached(&self, batch: &TokenBatch) -> Result<ForwardCache> {
        let n_ctx = batch.n_context();
        if n_ctx == 0 {
            return Err(Error::data(
                "the context is empty; there is nothing to condition on",
            ));
        }
        let cfg = &self.config;
        let det = self.deterministic;
        let (h, f, heads, dh) = (cfg.hidden, cfg.ffn, cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = batch.tokens.clone();
        let mut blocks = Vec::with_capacity(cfg.layers);
        for bl in &self.layout.blocks {
            let (h1, norm1) = layer_norm(&x, self.p(&bl.norm1.0), self.p(&bl.norm1.1));
            let ctx = h1.slice(s![..n_ctx, ..]);
            let mut q_raw = matmul_t(h1.view(), self.mat(&bl.wq, h, h), det);
            add_bias(&mut q_raw, self.p(&bl.bq));
            let mut k_raw = matmul_t(ctx, self.mat(&bl.wk, h, h), det);
            add_bias(&mut k_raw, self.p(&bl.bk));
            let mut v = matmul_t(ctx, self.mat(&bl.wv, h, h), det);
            add_bias(&mut v, self.p(&bl.bv));

            let (mut q, mut k) = (q_raw.clone(), k_raw.clone());
            let (mut q_inv, mut k_inv) = (Vec::new(), Vec::new());
            if cfg.variant == BlockVariant::Parallel {
                for hd in 0..heads {
                    let cols = s![.., hd * dh..(hd + 1) * dh];
                    let (qn, qi) = rms_norm(q_raw.slice(cols), self.p(&bl.q_gain));
                    let (kn, ki) = rms_norm(k_raw.slice(cols), self.p(&bl.k_gain));
                    q.slice_mut(cols).assign(&qn);
                    k.slice_mut(cols).assign(&kn);
                    q_inv.push(qi);
                    k_inv.push(ki);
                }
            }

            let mut concat = Array2::zeros((x.nrows(), h));
            let mut probs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut sc = matmul_t(q.slice(cols), k.slice(cols), det);
                sc.mapv_inplace(|v| v * scale);
                softmax_rows(&mut sc, det);
                let o = weighted_values(sc.view(), v.slice(cols), det);
                concat.slice_mut(cols).assign(&o);
                probs.push(sc);
            }
            let mut attn_out = matmul_t(concat.view(), self.mat(&bl.wo, h, h), det);
            add_bias(&mut attn_out, self.p(&bl.bo));

            let (x_mid, norm2, h2) = match cfg.variant {
                BlockVariant::Standard => {
                    let x_mid = &x + &attn_out;
                    let (h2, n2) = layer_norm(&x_mid, self.p(&bl.norm2.0), self.p(&bl.norm2.1));
                    (x_mid, Some(n2), h2)
                }
                BlockVariant::Parallel => (&x + &attn_out, None, h1.clone()),
            };
            let mut u1 = matmul_t(h2.view(), self.mat(&bl.w1, f, h), det);
            add_bias(&mut u1, self.p(&bl.b1));
            let (u3, act) = match cfg.variant {
                BlockVariant::Standard => (Array2::zeros((0, 0)), u1.mapv(gelu)),
                BlockVariant::Parallel => {
                    let mut u3 = matmul_t(h2.view(), self.mat(&bl.w3, f, h), det);
                    add_bias(&mut u3, self.p(&bl.b3));
                    let act = ndarray::Zip::from(&u1)
                        .and(&u3)
                        .map_collect(|a, b| silu(*a) * b);
                    (u3, act)
                }
            };
            let mut ff = matmul_t(act.view(), self.mat(&bl.w2, h, f), det);
            add_bias(&mut ff, self.p(&bl.b2));
            x = &x_mid + &ff;
            blocks.push(BlockCache {
                norm1,
                h1,
                q_raw,
                k_raw,
                q_inv,
                k_inv,
                q,
                k,
                v,
                probs,
                attn: concat,
                norm2,
                h2,
                u1,
                u3,
                act,
            });
        }
        let xq = x.slice(s![n_ctx.., ..]).to_owned();
        let (hf, final_norm) = layer_norm(
            &xq,
            self.p(&self.layout.final_norm.0),
            self.p(&self.layout.final_norm.1),
        );
        let mut logits = matmul_t(hf.view(), self.mat(&self.layout.head_w, cfg.bins, h), det);
        add_bias(&mut logits, self.p(&self.layout.head_b));
        softmax_rows(&mut logits, det);
        Ok(ForwardCache {
            blocks,
            final_norm,
            hf,
            probs: logits,
        })
    }

    /// Fit the transform and binner on the context, then return histograms
    /// for `query_x` with the given indicators.
    pub fn predict_histograms(
        &self,
        context: &crate::data::SurvivalData,
        query_x: ArrayView2<f64>,
        query_indicator: &[bool],
    ) -> Result<(Array2<f64>, TimeTransform, Binner)> {
        if context.is_empty() {
            return Err(Error::data(
                "the context is empty; there is nothing to condition on",
            ));
        }
        let transform = fit_transform(self.config.transform, &context.times)?;
        let binner = make_binner(&transform, self.config.bins)?;
        let z: Vec<f64> = context
            .times
            .iter()
            .map(|&t| transform.forward(t))
            .collect();
        let batch = self.embed_tokens(
            context.x.view(),
            &z,
            &context.events,
            query_x,
            query_indicator,
            &binner,
        )?;
        Ok((self.forward(&batch)?, transform, binner))
    }

    /// Survival curves `n_q x |grid|` for event queries (`delta~* = 1`).
    pub fn predict_survival(
        &self,
        context: &crate::data::SurvivalData,
        query_x: ArrayView2<f64>,
        grid: &[f64],
    ) -> Result<Array2<f64>> {
        let indicators = vec![true; query_x.nrows()];
        let (hist, transform, binner) = self.predict_histograms(context, query_x, &indicators)?;
        let edges = bin_upper_times(&binner, &transform);
        Ok(histograms_to_survival(&hist, &edges, grid))
    }
}

/// Right-continuous step survival on `grid`: `S(t) = sum_{l > k} q_l` with
/// `k = #{l : edge_l <= t}`.
pub fn histograms_to_survival(
    hist: &Array2<f64>,
    upper_edges: &[f64],
    grid: &[f64],
) -> Array2<f64> {
    let ks: Vec<usize> = grid
        .iter()
        .map(|&t| upper_edges.partition_point(|&e| e <= t))
        .collect();
    let mut out = Array2::zeros((hist.nrows(), grid.len()));
    for (i, row) in hist.rows().into_iter().enumerate() {
        let row = row.to_vec();
        for (j, &k) in ks.iter().enumerate() {
            out[[i, j]] = ppsd(&row, k);
        }
    }
    out
}
