use ndarray::{Array2, Axis};
use survpfn::model::{BlockVariant, HeadInit, Model, ModelConfig};
use survpfn::timewarp::{fit_transform, make_binner, Binner, TransformKind};
use survpfn::RngStream;

/// A random model with a random context and query set.
pub struct ModelCase {
    pub model: Model,
    pub cx: Array2<f64>,
    pub z: Vec<f64>,
    pub events: Vec<bool>,
    pub qx: Array2<f64>,
    pub indicators: Vec<bool>,
    pub binner: Binner,
}

pub fn random_model_case(seed: u64) -> ModelCase {
    let mut r = RngStream::new(seed, 0x3D3D);
    let heads = [1, 2, 4][r.below(3) as usize];
    let cfg = ModelConfig {
        d_max: r.int_inclusive(1, 6),
        hidden: heads * r.int_inclusive(2, 4),
        layers: r.int_inclusive(1, 3),
        heads,
        bins: r.int_inclusive(2, 24),
        ffn: r.int_inclusive(4, 24),
        seed,
        variant: if r.bernoulli(0.5) {
            BlockVariant::Standard
        } else {
            BlockVariant::Parallel
        },
        transform: if r.bernoulli(0.5) {
            TransformKind::LogNormalToNormal
        } else {
            TransformKind::TimeToQuantile
        },
    };
    let d = r.int_inclusive(1, cfg.d_max);
    let (n_ctx, n_q) = (r.int_inclusive(2, 24), r.int_inclusive(1, 6));
    let cx = Array2::from_shape_fn((n_ctx, d), |_| r.normal());
    let qx = Array2::from_shape_fn((n_q, d), |_| r.normal());
    let times: Vec<f64> = (0..n_ctx).map(|_| r.log_uniform(0.05, 20.0)).collect();
    let events = (0..n_ctx).map(|_| r.bernoulli(0.6)).collect();
    let indicators = (0..n_q).map(|_| r.bernoulli(0.5)).collect();
    let tr = fit_transform(cfg.transform, &times).unwrap();
    let binner = make_binner(&tr, cfg.bins).unwrap();
    let z = times.iter().map(|&t| tr.forward(t)).collect();
    ModelCase {
        model: Model::new(cfg, HeadInit::Random).unwrap(),
        cx,
        z,
        events,
        qx,
        indicators,
        binner,
    }
}

impl ModelCase {
    /// Histograms for the queries `queries` with the context rows in `order`.
    pub fn histograms(&self, order: &[usize], queries: &[usize]) -> Array2<f64> {
        let cx = self.cx.select(Axis(0), order);
        let z: Vec<f64> = order.iter().map(|&i| self.z[i]).collect();
        let ev: Vec<bool> = order.iter().map(|&i| self.events[i]).collect();
        let qx = self.qx.select(Axis(0), queries);
        let ind: Vec<bool> = queries.iter().map(|&i| self.indicators[i]).collect();
        let batch = self
            .model
            .embed_tokens(cx.view(), &z, &ev, qx.view(), &ind, &self.binner)
            .unwrap();
        self.model.forward(&batch).unwrap()
    }

    pub fn identity(&self) -> (Vec<usize>, Vec<usize>) {
        (
            (0..self.cx.nrows()).collect(),
            (0..self.qx.nrows()).collect(),
        )
    }
}
