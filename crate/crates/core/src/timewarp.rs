//! Context-fitted monotone time transforms and the L-bin discretizer.
//!
//! Bins are right-closed: bin `l` (1-based) holds model-space values in
//! `(z_{l-1}, z_l]`. Values at or below `z_0` go to bin 1, values above
//! `z_L` go to bin `L`. Under this convention the tail sum over bins
//! `k+1..=L` is exactly `P(T > tau_k)` for the raw bin edge `tau_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model-space half-width of the `lognormal2normal` bin range.
pub const LOGNORMAL_RANGE: f64 = 5.0;
const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[serde(rename = "lognormal2normal")]
    LogNormalToNormal,
    #[serde(rename = "time2quantile")]
    TimeToQuantile,
}

impl TransformKind {
    pub fn code(self) -> u8 {
        match self {
            Self::LogNormalToNormal => 0,
            Self::TimeToQuantile => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::LogNormalToNormal),
            1 => Some(Self::TimeToQuantile),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TimeTransform {
    #[serde(rename = "lognormal2normal")]
    LogNormal { mu: f64, sigma: f64 },
    /// Knots `a_0 = 0 < a_1 < ... < a_K` with CDF values `q_0 = 0 < ... < q_K = 1`.
    #[serde(rename = "time2quantile")]
    Quantile { knots: Vec<f64>, cdf: Vec<f64> },
}

/// Moment-matched lognormal: `sigma^2 = ln(1 + s^2/m^2)`, `mu = ln m - sigma^2/2`.
pub fn fit_lognormal2normal(times: &[f64]) -> Result<TimeTransform> {
    if times.len() < 2 {
        return Err(Error::data("lognormal2normal needs at least two times"));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::data("times must be finite and nonnegative"));
    }
    let n = times.len() as f64;
    let m = times.iter().sum::<f64>() / n;
    if m <= 0.0 {
        return Err(Error::data(format!("mean time {m} must be positive")));
    }
    // sample variance, n - 1 divisor
    let s2 = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma2 = (s2 / (m * m)).ln_1p();
    let sigma = sigma2.sqrt().max(SIGMA_FLOOR);
    Ok(TimeTransform::LogNormal {
        mu: m.ln() - 0.5 * sigma2,
        sigma,
    })
}

/// Piecewise-linear empirical CDF through the unique observed times.
pub fn fit_time2quantile(times: &[f64]) -> Result<TimeTransform> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::data("times must be finite and nonnegative"));
    }
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.last().is_none_or(|&t| t <= 0.0) {
        return Err(Error::data(
            "time2quantile needs at least one positive time",
        ));
    }
    let n = sorted.len() as f64;
    let mut knots = vec![0.0];
    let mut cdf = vec![0.0];
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == t {
            j += 1;
        }
        if t > 0.0 {
            knots.push(t);
            cdf.push(j as f64 / n);
        }
        i = j;
    }
    *cdf.last_mut().expect("nonempty") = 1.0;
    Ok(TimeTransform::Quantile { knots, cdf })
}

pub fn fit_transform(kind: TransformKind, times: &[f64]) -> Result<TimeTransform> {
    match kind {
        TransformKind::LogNormalToNormal => fit_lognormal2normal(times),
        TransformKind::TimeToQuantile => fit_time2quantile(times),
    }
}

/// Linear interpolation on a strictly increasing abscissa, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    // first index with xs[j] >= x; flat runs in `xs` resolve to their left end
    let j = xs.partition_point(|&v| v < x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    if x == x1 {
        return ys[j];
    }
    ys[j - 1] + (x - x0) / (x1 - x0) * (ys[j] - ys[j - 1])
}

impl TimeTransform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Self::LogNormal { .. } => TransformKind::LogNormalToNormal,
            Self::Quantile { .. } => TransformKind::TimeToQuantile,
        }
    }

    /// Raw time to model space. `lognormal2normal` sends `t = 0` to `-inf`.
    pub fn forward(&self, t: f64) -> f64 {
        match self {
            Self::LogNormal { mu, sigma } => (t.ln() - mu) / sigma,
            Self::Quantile { knots, cdf } => interp(knots, cdf, t),
        }
    }

    /// Model space back to raw time.
    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Self::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
            Self::Quantile { knots, cdf } => interp(cdf, knots, z),
        }
    }

    /// Model-space interval the binner spans for this kind.
    pub fn model_range(&self) -> (f64, f64) {
        match self {
            Self::LogNormal { .. } => (-LOGNORMAL_RANGE, LOGNORMAL_RANGE),
            Self::Quantile { .. } => (0.0, 1.0),
        }
    }
}

/// `L` equal-width bins over the model-space range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binner {
    edges: Vec<f64>,
}

pub fn make_binner(transform: &TimeTransform, bins: usize) -> Result<Binner> {
    Binner::uniform(transform.model_range(), bins)
}

impl Binner {
    pub fn uniform((lo, hi): (f64, f64), bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::config(format!("need at least 2 bins, got {bins}")));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|l| lo + width * l as f64).collect();
        edges[bins] = hi;
        Ok(Self { edges })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.bins()]
    }

    pub fn width(&self) -> f64 {
        (self.upper() - self.lower()) / self.bins() as f64
    }

    /// 1-based bin of a model-space value, clamped to `1..=L`.
    pub fn bin_of(&self, z: f64) -> usize {
        if z.is_nan() {
            return 1;
        }
        let l = self.edges.partition_point(|&e| e < z);
        l.clamp(1, self.bins())
    }

    /// Clamp a model-space value into `[z_0, z_L]`.
    pub fn clamp(&self, z: f64) -> f64 {
        z.clamp(self.lower(), self.upper())
    }
}

/// `kappa(t)`: the bin containing `g(t)`.
pub fn bin_index(binner: &Binner, transform: &TimeTransform, t: f64) -> usize {
    binner.bin_of(transform.forward(t))
}

/// Raw-time right edges `g^{-1}(z_l)` for `l = 1..=L`.
pub fn bin_upper_times(binner: &Binner, transform: &TimeTransform) -> Vec<f64> {
    binner.edges()[1..]
        .iter()
        .map(|&z| transform.inverse(z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lognormal_closed_forms() {
        // two times with mean 2 and sample sd 1
        let a = 2.0 - 0.5f64.sqrt();
        let b = 2.0 + 0.5f64.sqrt();
        let tr = fit_lognormal2normal(&[a, b]).unwrap();
        let TimeTransform::LogNormal { mu, sigma } = tr else {
            unreachable!()
        };
        assert!((sigma * sigma - 1.25f64.ln()).abs() < 1e-12);
        assert!((sigma * sigma - 0.223_143_551_314_209_7).abs() < 1e-12);
        assert!((mu - (2f64.ln() - 0.5 * 1.25f64.ln())).abs() < 1e-12);
        assert!((mu - 0.581_575_404_719_070_4).abs() < 1e-9);
        let expected = (2f64.ln() - mu) / sigma;
        assert!((tr.forward(2.0) - expected).abs() < 1e-12);
        assert!((tr.forward(2.0) - 0.236_190_363_5).abs() < 1e-9);
    }

    #[test]
    fn lognormal_median_maps_to_zero() {
        let tr = fit_lognormal2normal(&[1.0, 3.0, 7.0]).unwrap();
        let TimeTransform::LogNormal { mu, .. } = tr else {
            unreachable!()
        };
        assert!(tr.forward(mu.exp()).abs() < 1e-15);
    }

    #[test]
    fn lognormal_round_trip() {
        let tr = fit_lognormal2normal(&[0.5, 2.0, 9.0]).unwrap();
        for t in [0.1, 1.0, 50.0] {
            assert!((tr.inverse(tr.forward(t)) - t).abs() <= 1e-9 * t.max(1.0));
        }
    }

    #[test]
    fn lognormal_constant_sample_floors_sigma() {
        let tr = fit_lognormal2normal(&[3.0, 3.0, 3.0]).unwrap();
        let TimeTransform::LogNormal { sigma, .. } = tr else {
            unreachable!()
        };
        assert_eq!(sigma, SIGMA_FLOOR);
    }

    #[test]
    fn lognormal_rejects_bad_input() {
        assert!(fit_lognormal2normal(&[1.0]).is_err());
        assert!(fit_lognormal2normal(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn quantile_knots_and_interpolation() {
        let tr = fit_time2quantile(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let TimeTransform::Quantile { knots, cdf } = &tr else {
            unreachable!()
        };
        assert_eq!(knots, &vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cdf, &vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((tr.forward(2.5) - 0.625).abs() < 1e-15);
        assert_eq!(tr.forward(4.0), 1.0);
        assert_eq!(tr.forward(1e6), 1.0);
        assert_eq!(tr.forward(0.0), 0.0);
    }

    #[test]
    fn quantile_duplicates_collapse() {
        let tr = fit_time2quantile(&[2.0, 2.0, 5.0, 1.0]).unwrap();
        let TimeTransform::Quantile { knots, cdf } = &tr else {
            unreachable!()
        };
        assert_eq!(knots, &vec![0.0, 1.0, 2.0, 5.0]);
        assert_eq!(cdf, &vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn quantile_rejects_all_zero() {
        assert!(fit_time2quantile(&[0.0, 0.0]).is_err());
        assert!(fit_time2quantile(&[]).is_err());
    }

    #[test]
    fn binner_edges() {
        let tr = fit_time2quantile(&[1.0, 2.0]).unwrap();
        let b = make_binner(&tr, 4).unwrap();
        assert_eq!(b.edges(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let ln = fit_lognormal2normal(&[1.0, 2.0]).unwrap();
        let b = make_binner(&ln, 10).unwrap();
        assert_eq!(b.bins(), 10);
        assert_eq!(b.lower(), -5.0);
        assert_eq!(b.upper(), 5.0);
        assert!((b.width() - 1.0).abs() < 1e-15);
        assert!(make_binner(&ln, 1).is_err());
    }

    #[test]
    fn bin_index_examples() {
        let tr = fit_time2quantile(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = make_binner(&tr, 4).unwrap();
        assert_eq!(bin_index(&b, &tr, 2.5), 3);
        assert_eq!(bin_index(&b, &tr, 0.0), 1);
        assert_eq!(bin_index(&b, &tr, 10.0), 4);
    }

    #[test]
    fn lognormal_zero_time_goes_to_first_bin() {
        let tr = fit_lognormal2normal(&[1.0, 2.0]).unwrap();
        let b = make_binner(&tr, 8).unwrap();
        assert_eq!(bin_index(&b, &tr, 0.0), 1);
    }

    #[test]
    fn raw_upper_edges() {
        let tr = fit_time2quantile(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = make_binner(&tr, 4).unwrap();
        assert_eq!(bin_upper_times(&b, &tr), vec![1.0, 2.0, 3.0, 4.0]);
        let ln = fit_lognormal2normal(&[1.0, 2.0, 8.0]).unwrap();
        let edges = bin_upper_times(&make_binner(&ln, 16).unwrap(), &ln);
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bin_membership_matches_raw_edges() {
        let tr = fit_time2quantile(&[0.4, 1.3, 2.2, 2.9, 3.7, 5.5, 8.0]).unwrap();
        let b = make_binner(&tr, 10).unwrap();
        let upper = bin_upper_times(&b, &tr);
        for k in 1..200 {
            let t = k as f64 * 0.04;
            let l = bin_index(&b, &tr, t);
            let lower = if l == 1 { 0.0 } else { upper[l - 2] };
            assert!(lower < t && t <= upper[l - 1] + 1e-12, "t={t} in bin {l}");
        }
    }
}
