#![allow(dead_code)]

pub mod gradcheck;
pub mod model;
pub mod oracle;

use ndarray::Array2;
use survpfn::RngStream;

/// A random right-censored dataset with ties plus random step curves.
pub struct MetricCase {
    pub grid: Vec<f64>,
    pub surv: Array2<f64>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub train_times: Vec<f64>,
    pub train_events: Vec<bool>,
    pub tau: f64,
}

pub fn random_metric_case(seed: u64, n: usize) -> MetricCase {
    let mut r = RngStream::new(seed, 0xC0FFEE);
    // one decimal place forces ties
    let draw = |r: &mut RngStream| (r.uniform_range(0.1, 10.0) * 10.0).round() / 10.0;
    let times: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
    let events: Vec<bool> = (0..n).map(|_| r.bernoulli(0.65)).collect();
    let train_times: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
    let train_events: Vec<bool> = (0..n).map(|_| r.bernoulli(0.65)).collect();
    let mut grid: Vec<f64> = train_times.clone();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let m = grid.len();
    let mut surv = Array2::zeros((n, m));
    for i in 0..n {
        let mut s = 1.0;
        for j in 0..m {
            if r.bernoulli(0.3) {
                s *= r.uniform();
            }
            surv[[i, j]] = s;
        }
    }
    let tau = r.uniform_range(3.0, 9.5);
    MetricCase {
        grid,
        surv,
        times,
        events,
        train_times,
        train_events,
        tau,
    }
}

pub fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Largest absolute gap between each metric and its brute-force oracle on
/// one random case, keyed by metric name.
pub fn metric_gaps(seed: u64, n: usize) -> Vec<(&'static str, f64)> {
    use survpfn::metrics::*;
    let c = random_metric_case(seed, n);
    let km = km_estimate(&c.times, &c.events).unwrap();
    let km_gap = c
        .times
        .iter()
        .chain(&[0.0, 5.55, 20.0])
        .map(|&t| (km.survival_at(t) - oracle::km_at(&c.times, &c.events, t)).abs())
        .fold(0.0, f64::max);

    let medians: Vec<f64> = c
        .surv
        .rows()
        .into_iter()
        .map(|r| median_from_values(&c.grid, r.as_slice().unwrap()))
        .collect();
    let risk: Vec<f64> = medians.iter().map(|m| -m).collect();
    let ci = concordance_index(&risk, &c.times, &c.events).unwrap();
    let ci_o = oracle::concordance(&risk, &c.times, &c.events);
    let ci_gap = match (ci, ci_o) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };

    let ckm = censoring_km(&c.train_times, &c.train_events).unwrap();
    let ibs = integrated_brier(&c.surv, &c.grid, &c.times, &c.events, &ckm, c.tau).unwrap();
    let ibs_o = oracle::ibs(
        &rows(&c.surv),
        &c.grid,
        &c.times,
        &c.events,
        &c.train_times,
        &c.train_events,
        c.tau,
    );

    let own: Vec<f64> = (0..n)
        .map(|i| step_at(&c.grid, c.surv.row(i).as_slice().unwrap(), c.times[i]))
        .collect();
    let d = d_calibration(&own, &c.events).unwrap();

    let mae = mae_po(&medians, &c.times, &c.events, &km).unwrap();
    let mae_o = oracle::mae_po(&medians, &c.times, &c.events);
    let mae_gap = match (mae, mae_o) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let lr = log_rank(&c.times, &c.events, &medians).unwrap();

    vec![
        ("km", km_gap),
        ("ci", ci_gap),
        ("ibs", (ibs.value - ibs_o).abs()),
        ("dcal", (d.statistic - oracle::dcal(&own, &c.events)).abs()),
        ("mae", mae_gap),
        (
            "logrank",
            (lr - oracle::log_rank(&c.times, &c.events, &medians)).abs(),
        ),
    ]
}
