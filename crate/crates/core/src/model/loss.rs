use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::normal_cdf;
use crate::timewarp::{bin_index, Binner, TimeTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    /// Cross-entropy against a Gaussian-smoothed target; `sigma` is in
    /// model-space units.
    Sce {
        sigma: f64,
    },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Nll => Ok(()),
            Self::Sce { sigma } if *sigma > 0.0 && sigma.is_finite() => Ok(()),
            Self::Sce { sigma } => Err(Error::config(format!(
                "smoothing sigma must be positive, got {sigma}"
            ))),
        }
    }
}

/// `-log q_l` for a 1-based bin.
pub fn nll_loss(pred: &[f64], bin: usize) -> f64 {
    assert!(
        (1..=pred.len()).contains(&bin),
        "bin {bin} outside 1..={}",
        pred.len()
    );
    -pred[bin - 1].ln()
}

/// Bin masses of `N(mu, sigma^2)` with `mu = g(r)` clamped into the binner
/// range. The first and last bins absorb the tails, then the vector is
/// renormalized.
fn smoothed_target(r: f64, sigma: f64, transform: &TimeTransform, binner: &Binner) -> Vec<f64> {
    let mu = binner.clamp(transform.forward(r));
    let edges = binner.edges();
    let l = binner.bins();
    let cdf = |z: f64| normal_cdf((z - mu) / sigma);
    let mut a: Vec<f64> = (0..l)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { cdf(edges[i]) };
            let hi = if i + 1 == l { 1.0 } else { cdf(edges[i + 1]) };
            (hi - lo).max(0.0)
        })
        .collect();
    let total: f64 = a.iter().sum();
    a.iter_mut().for_each(|v| *v /= total);
    a
}

/// Target distribution over bins for raw time `r`.
pub fn target_distribution(
    kind: LossKind,
    r: f64,
    transform: &TimeTransform,
    binner: &Binner,
) -> Vec<f64> {
    match kind {
        LossKind::Nll => {
            let mut a = vec![0.0; binner.bins()];
            a[bin_index(binner, transform, r) - 1] = 1.0;
            a
        }
        LossKind::Sce { sigma } => smoothed_target(r, sigma, transform, binner),
    }
}

/// `-sum_l a_l log q_l` with the smoothed target of raw time `r`.
pub fn sce_loss(
    pred: &[f64],
    r: f64,
    sigma: f64,
    transform: &TimeTransform,
    binner: &Binner,
) -> f64 {
    assert!(sigma > 0.0, "smoothing sigma must be positive");
    let a = smoothed_target(r, sigma, transform, binner);
    -a.iter()
        .zip(pred)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, q)| w * q.ln())
        .sum::<f64>()
}

/// Tail mass `sum_{l > k} q_l`: survival past the right edge of bin `k`.
///
/// `k = 0` returns exactly 1 and `k = L` exactly 0; in between the running
/// tail sum only grows as `k` decreases, so the result is nonincreasing.
pub fn ppsd(pred: &[f64], k: usize) -> f64 {
    let l = pred.len();
    assert!(k <= l, "bin index {k} outside 0..={l}");
    if k == 0 {
        return 1.0;
    }
    let tail: f64 = pred[k..].iter().rev().sum();
    tail.min(1.0)
}
