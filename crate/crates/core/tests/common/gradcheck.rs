//! Central finite differences against the analytic gradient.

use ndarray::Array2;
use survpfn::model::{
    target_distribution, BlockVariant, HeadInit, LossKind, Model, ModelConfig, TokenBatch,
};
use survpfn::timewarp::{fit_lognormal2normal, make_binner};
use survpfn::RngStream;

pub fn setup(variant: BlockVariant, loss: LossKind, seed: u64) -> (Model, TokenBatch, Array2<f64>) {
    let cfg = ModelConfig {
        d_max: 4,
        hidden: 16,
        layers: 2,
        heads: 2,
        bins: 8,
        ffn: 32,
        seed,
        variant,
        ..Default::default()
    };
    let model = Model::new(cfg, HeadInit::Random).unwrap();
    let mut r = RngStream::new(seed, 77);
    let (n_ctx, n_q, d) = (6, 2, 4);
    let cx = Array2::from_shape_fn((n_ctx, d), |_| r.normal());
    let qx = Array2::from_shape_fn((n_q, d), |_| r.normal());
    let times: Vec<f64> = (0..n_ctx).map(|_| r.log_uniform(0.2, 5.0)).collect();
    let events: Vec<bool> = (0..n_ctx).map(|_| r.bernoulli(0.6)).collect();
    let tr = fit_lognormal2normal(&times).unwrap();
    let binner = make_binner(&tr, 8).unwrap();
    let z: Vec<f64> = times.iter().map(|&t| tr.forward(t)).collect();
    let batch = model
        .embed_tokens(cx.view(), &z, &events, qx.view(), &[true, false], &binner)
        .unwrap();
    let mut targets = Array2::zeros((n_q, 8));
    for i in 0..n_q {
        let a = target_distribution(loss, r.log_uniform(0.2, 5.0), &tr, &binner);
        targets.row_mut(i).assign(&ndarray::Array1::from(a));
    }
    (model, batch, targets)
}

/// Embedding weights feed the tokens, so re-embed after every change.
pub fn loss_at(model: &Model, batch: &TokenBatch, targets: &Array2<f64>) -> f64 {
    let mut b = batch.clone();
    model.refresh_tokens(&mut b);
    model.loss(&b, targets.view()).unwrap()
}

pub fn max_relative_error(variant: BlockVariant, loss: LossKind, seed: u64) -> f64 {
    let (model, batch, targets) = setup(variant, loss, seed);
    let (l0, g) = model.loss_and_gradient(&batch, targets.view()).unwrap();
    assert!((l0 - loss_at(&model, &batch, &targets)).abs() < 1e-12);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for i in 0..model.n_params() {
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = loss_at(&m, &batch, &targets);
        m.params[i] = orig - h;
        let down = loss_at(&m, &batch, &targets);
        m.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (g.grad[i] - fd).abs() / g.grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
