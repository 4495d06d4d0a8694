//! Survival evaluation metrics.
//!
//! Curves are right-continuous step functions on a grid: the value at `u` is
//! the value at the last grid time `<= u`, and 1 before the first grid time.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, sorted_copy};

/// Lower bound on the censoring survival used in IPCW weights.
pub const CENSOR_WEIGHT_FLOOR: f64 = 0.05;
pub const DCAL_BINS: usize = 10;
/// Quantile of training-side observed times used as the default IBS horizon.
pub const HORIZON_QUANTILE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Step evaluation of `values` on `grid` at `u`.
pub fn step_at(grid: &[f64], values: &[f64], u: f64) -> f64 {
    let k = grid.partition_point(|&g| g <= u);
    if k == 0 {
        1.0
    } else {
        values[k - 1]
    }
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::data(
                "a curve needs matching nonempty times and values",
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times[0] < 0.0 {
            return Err(Error::data(
                "curve times must be nonnegative and strictly increasing",
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) || values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::data(
                "curve values must lie in [0, 1] and not increase",
            ));
        }
        Ok(Self { times, values })
    }

    pub fn at(&self, u: f64) -> f64 {
        step_at(&self.times, &self.values, u)
    }
}

/// Product-limit estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmEstimate {
    /// Distinct times with at least one event.
    pub times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// `S(times[j])`, after the drop at `times[j]`.
    pub survival: Vec<f64>,
}

impl KmEstimate {
    pub fn survival_at(&self, t: f64) -> f64 {
        step_at(&self.times, &self.survival, t)
    }

    /// `int_0^tau S(u) du`.
    pub fn restricted_mean(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_s = 1.0;
        for (&t, &s) in self.times.iter().zip(&self.survival) {
            if t >= tau {
                break;
            }
            area += prev_s * (t - prev_t);
            prev_t = t;
            prev_s = s;
        }
        area + prev_s * (tau - prev_t).max(0.0)
    }
}

pub fn km_estimate(times: &[f64], events: &[bool]) -> Result<KmEstimate> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::data(
            "Kaplan-Meier needs matching nonempty times and events",
        ));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut km = KmEstimate {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        survival: Vec::new(),
    };
    let mut s = 1.0;
    let mut remaining = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut d = 0;
        while j < order.len() && times[order[j]] == t {
            d += usize::from(events[order[j]]);
            j += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / remaining as f64;
            km.times.push(t);
            km.at_risk.push(remaining);
            km.events.push(d);
            km.survival.push(s);
        }
        remaining -= j - i;
        i = j;
    }
    Ok(km)
}

/// Kaplan-Meier of the censoring distribution (censorings as events).
pub fn censoring_km(times: &[f64], events: &[bool]) -> Result<KmEstimate> {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    km_estimate(times, &flipped)
}

/// Harrell's C: over pairs with `delta_i = 1` and `t_i < t_j`, the share with
/// `risk_i > risk_j`. Risk ties earn nothing. `None` without comparable pairs.
pub fn concordance_index(risk: &[f64], times: &[f64], events: &[bool]) -> Result<Option<f64>> {
    let n = risk.len();
    if times.len() != n || events.len() != n {
        return Err(Error::data("risk, times and events must have equal length"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut comparable, mut concordant) = (0u64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        if !events[i] {
            continue;
        }
        // j with t_j > t_i: skip the block tied with t_i
        let start = pos + order[pos..].partition_point(|&k| times[k] <= times[i]);
        for &j in &order[start..] {
            comparable += 1;
            if risk[i] > risk[j] {
                concordant += 1;
            }
        }
    }
    Ok((comparable > 0).then(|| concordant as f64 / comparable as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierScore {
    pub value: f64,
    /// Some censoring survival value hit [`CENSOR_WEIGHT_FLOOR`].
    pub floored: bool,
}

/// IPCW Brier score at `u` for curves `surv` on `grid`.
pub fn brier_at(
    surv: &Array2<f64>,
    grid: &[f64],
    times: &[f64],
    events: &[bool],
    censor_km: &KmEstimate,
    u: f64,
) -> BrierScore {
    let mut floored = false;
    let mut weight = |t: f64| {
        let g = censor_km.survival_at(t);
        if g < CENSOR_WEIGHT_FLOOR {
            floored = true;
        }
        g.max(CENSOR_WEIGHT_FLOOR)
    };
    let g_u = weight(u);
    let mut total = 0.0;
    for i in 0..times.len() {
        let s = step_at(grid, surv.row(i).as_slice().expect("standard layout"), u);
        if times[i] <= u && events[i] {
            total += s * s / weight(times[i]);
        } else if times[i] > u {
            total += (1.0 - s) * (1.0 - s) / g_u;
        }
    }
    BrierScore {
        value: total / times.len() as f64,
        floored,
    }
}

/// `(1 / tau) int_0^tau BS(u) du` by the trapezoid rule over
/// `{0} U {grid points <= tau} U {tau}`.
pub fn integrated_brier(
    surv: &Array2<f64>,
    grid: &[f64],
    times: &[f64],
    events: &[bool],
    censor_km: &KmEstimate,
    tau: f64,
) -> Result<BrierScore> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::data(format!(
            "IBS horizon must be positive, got {tau}"
        )));
    }
    check_curves(surv, grid, times.len())?;
    if events.len() != times.len() {
        return Err(Error::data("times and events must have equal length"));
    }
    let mut nodes = vec![0.0];
    nodes.extend(grid.iter().copied().filter(|&g| g > 0.0 && g < tau));
    nodes.push(tau);
    let mut floored = false;
    let scores: Vec<f64> = nodes
        .iter()
        .map(|&u| {
            let b = brier_at(surv, grid, times, events, censor_km, u);
            floored |= b.floored;
            b.value
        })
        .collect();
    let area: f64 = nodes
        .windows(2)
        .zip(scores.windows(2))
        .map(|(u, b)| 0.5 * (b[0] + b[1]) * (u[1] - u[0]))
        .sum();
    Ok(BrierScore {
        value: area / tau,
        floored,
    })
}

fn check_curves(surv: &Array2<f64>, grid: &[f64], n: usize) -> Result<()> {
    if surv.dim() != (n, grid.len()) {
        return Err(Error::data(format!(
            "survival matrix is {:?}, expected ({n}, {})",
            surv.dim(),
            grid.len()
        )));
    }
    if surv.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "survival predictions contain non-finite values",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCalibration {
    pub statistic: f64,
    pub bin_mass: Vec<f64>,
}

/// Chi-square uniformity statistic of `S_i(t_i)` over 10 equal bins.
///
/// An event adds 1 to the bin holding `S_i(t_i)`; a censored subject spreads
/// its unit mass uniformly over `[0, S_i(t_i)]`.
pub fn d_calibration(surv_at_time: &[f64], events: &[bool]) -> Result<DCalibration> {
    let n = surv_at_time.len();
    if events.len() != n || n == 0 {
        return Err(Error::data("D-calibration needs matching nonempty inputs"));
    }
    if surv_at_time.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::data("survival probabilities must lie in [0, 1]"));
    }
    let nb = DCAL_BINS;
    let width = 1.0 / nb as f64;
    let mut mass = vec![0.0; nb];
    for (&s, &e) in surv_at_time.iter().zip(events) {
        if e {
            mass[((s * nb as f64) as usize).min(nb - 1)] += 1.0;
        } else if s <= 0.0 {
            mass[0] += 1.0;
        } else {
            for (b, m) in mass.iter_mut().enumerate() {
                let lo = b as f64 * width;
                let overlap = (s.min(lo + width) - lo).max(0.0);
                *m += overlap / s;
            }
        }
    }
    let expected = n as f64 / nb as f64;
    let statistic = mass.iter().map(|o| (o - expected).powi(2) / expected).sum();
    Ok(DCalibration {
        statistic,
        bin_mass: mass,
    })
}

/// Jackknife pseudo-values of the KM restricted mean at the largest
/// observed time: `n RM - (n - 1) RM^(-i)`.
pub fn restricted_mean_pseudo_values(times: &[f64], events: &[bool]) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 2 {
        return Err(Error::data("pseudo-values need at least two subjects"));
    }
    let tau = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let full = km_estimate(times, events)?.restricted_mean(tau);
    let mut out = Vec::with_capacity(n);
    let mut t_minus = Vec::with_capacity(n - 1);
    let mut e_minus = Vec::with_capacity(n - 1);
    for i in 0..n {
        t_minus.clear();
        e_minus.clear();
        for j in (0..n).filter(|&j| j != i) {
            t_minus.push(times[j]);
            e_minus.push(events[j]);
        }
        let loo = km_estimate(&t_minus, &e_minus)?.restricted_mean(tau);
        out.push(n as f64 * full - (n - 1) as f64 * loo);
    }
    Ok(out)
}

/// Weighted MAE against pseudo-observations. Events use `t_i` with weight 1;
/// censored subjects use the restricted-mean pseudo-value with weight
/// `1 - S_KM(t_i)`. `None` when all weights vanish.
pub fn mae_po(
    pred_median: &[f64],
    times: &[f64],
    events: &[bool],
    km: &KmEstimate,
) -> Result<Option<f64>> {
    let n = times.len();
    if pred_median.len() != n || events.len() != n {
        return Err(Error::data(
            "predictions, times and events must have equal length",
        ));
    }
    if pred_median.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("predicted median times must be finite"));
    }
    let pseudo = if events.iter().all(|e| *e) {
        Vec::new()
    } else {
        restricted_mean_pseudo_values(times, events)?
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let (target, w) = if events[i] {
            (times[i], 1.0)
        } else {
            (pseudo[i], 1.0 - km.survival_at(times[i]))
        };
        num += w * (pred_median[i] - target).abs();
        den += w;
    }
    Ok((den > 0.0).then(|| num / den))
}

/// Two-group log-rank chi-square: observed `(t, delta)` against predicted
/// medians taken as uncensored.
pub fn log_rank(obs_times: &[f64], obs_events: &[bool], predicted: &[f64]) -> Result<f64> {
    if obs_times.is_empty() || predicted.is_empty() || obs_times.len() != obs_events.len() {
        return Err(Error::data("log-rank needs two nonempty samples"));
    }
    let mut pooled: Vec<(f64, bool, bool)> = obs_times
        .iter()
        .zip(obs_events)
        .map(|(&t, &e)| (t, e, true))
        .chain(predicted.iter().map(|&t| (t, true, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut n1, mut n) = (obs_times.len() as f64, pooled.len() as f64);
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let (mut d, mut d1, mut leave, mut leave1) = (0.0, 0.0, 0.0, 0.0);
        while i < pooled.len() && pooled[i].0 == t {
            let (_, e, first) = pooled[i];
            if e {
                d += 1.0;
                if first {
                    d1 += 1.0;
                }
            }
            leave += 1.0;
            if first {
                leave1 += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            o_minus_e += d1 - d * n1 / n;
            if n > 1.0 {
                var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n1 -= leave1;
    }
    Ok(if var > 0.0 {
        o_minus_e * o_minus_e / var
    } else {
        0.0
    })
}

/// `inf{u : S(u) <= 1/2}` over the grid, or the last grid time.
pub fn median_survival_time(curve: &SurvivalCurve) -> f64 {
    median_from_values(&curve.times, &curve.values)
}

pub fn median_from_values(grid: &[f64], values: &[f64]) -> f64 {
    values
        .iter()
        .position(|&s| s <= 0.5)
        .map_or(grid[grid.len() - 1], |k| grid[k])
}

/// Default IBS horizon from training-side observed times.
pub fn default_horizon(train_times: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(train_times), HORIZON_QUANTILE)
}

/// Per-split metric values; `None` serializes as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct MetricReport {
    pub ibs: Option<f64>,
    pub ci: Option<f64>,
    pub dcal: Option<f64>,
    pub mae: Option<f64>,
    pub logrank: Option<f64>,
    pub ibs_weight_floored: bool,
}

impl MetricReport {
    pub const NAMES: [&'static str; 5] = ["ibs", "ci", "dcal", "mae", "logrank"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ibs" => self.ibs,
            "ci" => self.ci,
            "dcal" => self.dcal,
            "mae" => self.mae,
            "logrank" => self.logrank,
            _ => None,
        }
    }

    /// Whether larger values are better for the named metric.
    pub fn higher_is_better(name: &str) -> bool {
        name == "ci"
    }
}

/// All five metrics for test-side predictions `surv` (`n_test x |grid|`).
///
/// Only the censoring KM and the IBS horizon come from the training side.
pub fn evaluate(
    surv: &Array2<f64>,
    grid: &[f64],
    train_times: &[f64],
    train_events: &[bool],
    test_times: &[f64],
    test_events: &[bool],
    horizon: Option<f64>,
) -> Result<MetricReport> {
    check_curves(surv, grid, test_times.len())?;
    if grid.is_empty() || test_times.is_empty() {
        return Err(Error::data("evaluation needs a nonempty grid and test set"));
    }
    let censor_km = censoring_km(train_times, train_events)?;
    let tau = horizon.unwrap_or_else(|| default_horizon(train_times));
    let ibs = integrated_brier(surv, grid, test_times, test_events, &censor_km, tau)?;

    let medians: Vec<f64> = surv
        .rows()
        .into_iter()
        .map(|r| median_from_values(grid, r.as_slice().expect("standard layout")))
        .collect();
    let risk: Vec<f64> = medians.iter().map(|m| -m).collect();
    let ci = concordance_index(&risk, test_times, test_events)?;

    let own: Vec<f64> = (0..test_times.len())
        .map(|i| {
            step_at(
                grid,
                surv.row(i).as_slice().expect("standard layout"),
                test_times[i],
            )
            .clamp(0.0, 1.0)
        })
        .collect();
    let dcal = d_calibration(&own, test_events)?;

    let km = km_estimate(test_times, test_events)?;
    let mae = if test_times.len() >= 2 {
        mae_po(&medians, test_times, test_events, &km)?
    } else {
        None
    };
    let logrank = log_rank(test_times, test_events, &medians)?;
    Ok(MetricReport {
        ibs: Some(ibs.value),
        ci,
        dcal: Some(dcal.statistic),
        mae,
        logrank: Some(logrank),
        ibs_weight_floored: ibs.floored,
    })
}
