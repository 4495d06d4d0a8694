//! Prior-quality diagnostics: conditional mutual information between latent
//! event and censoring times, observed-time dispersion and entropy, and
//! percentile bands of corpus survival curves.
//!
//! The information estimators quantize `X` into k-means cells on
//! standardized covariates and use plug-in entropies with the Miller–Madow
//! correction `(m - 1) / 2n` (`m` = occupied bins); see
//! [`estimate_cmi`] for how the joint table is corrected.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::km_estimate;
use crate::numeric::{median, quantile_sorted, sorted_copy};
use crate::prior::{CensoringKind, PriorFamily, TaskSample};
use crate::rng::{label, RngStream};

pub const CELLS: usize = 8;
pub const TIME_BINS: usize = 8;
pub const MIN_ROWS: usize = 64;
pub const CV_FLOOR: f64 = 1e-12;
const KMEANS_ITERS: usize = 100;

/// Rows sorted lexicographically so that results do not depend on row order.
fn canonical_order(x: ArrayView2<f64>, extra: &[&[f64]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .chain(extra.iter().map(|v| v[a].total_cmp(&v[b])))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Columns centred and scaled to unit population variance; constant
/// columns are dropped.
fn standardize(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let keep: Vec<(usize, f64, f64)> = x
        .columns()
        .into_iter()
        .enumerate()
        .filter_map(|(j, c)| {
            let mean = c.sum() / n;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (sd > 1e-12).then_some((j, mean, sd))
        })
        .collect();
    Array2::from_shape_fn((x.nrows(), keep.len()), |(i, k)| {
        let (j, mean, sd) = keep[k];
        (x[[i, j]] - mean) / sd
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns one cell label per
/// row; fewer than `k` cells appear when there are fewer distinct rows.
pub fn kmeans(x: ArrayView2<f64>, k: usize, rng: &RngStream) -> Vec<usize> {
    let n = x.nrows();
    if n == 0 || k == 0 || x.ncols() == 0 {
        return vec![0; n];
    }
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut r = rng.clone();
    let mut centers = vec![rows[r.below(n as u64) as usize].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        if d2.iter().all(|&d| d == 0.0) {
            break;
        }
        let c = r.categorical(&d2);
        centers.push(rows[c].clone());
        for (d, p) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        rows.iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq_dist(p, ctr);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..KMEANS_ITERS {
        let dim = rows[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..centers.len() {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Bin index of each value among `bins` quantile bins of `values`. Ties
/// always share a bin.
fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let sorted = sorted_copy(values);
    let cuts: Vec<f64> = (1..bins)
        .map(|j| quantile_sorted(&sorted, j as f64 / bins as f64))
        .collect();
    values
        .iter()
        .map(|v| cuts.partition_point(|c| c < v))
        .collect()
}

/// Plug-in entropy of the counts and the number of occupied bins.
fn plugin_entropy(counts: &[usize]) -> (f64, usize, usize) {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return (0.0, 0, 0);
    }
    let nf = n as f64;
    let mut h = 0.0;
    let mut occupied = 0;
    for &c in counts.iter().filter(|&&c| c > 0) {
        let p = c as f64 / nf;
        h -= p * p.ln();
        occupied += 1;
    }
    (h, occupied, n)
}

/// Miller–Madow corrected plug-in entropy.
fn entropy_mm(counts: &[usize]) -> f64 {
    let (h, m, n) = plugin_entropy(counts);
    if n == 0 {
        return 0.0;
    }
    h + (m as f64 - 1.0) / (2.0 * n as f64)
}

fn bin_counts(keys: impl IntoIterator<Item = usize>, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for k in keys {
        counts[k] += 1;
    }
    counts
}

/// Miller–Madow corrected `I(A; B)` for labels in `0..bins`.
///
/// The joint support is taken as the product of the occupied marginal
/// supports, so the correction is `-(m_a - 1)(m_b - 1) / 2n`. Counting only
/// occupied joint bins under-corrects badly when the expected joint count
/// is a handful of rows.
fn mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let (ha, ma, n) = plugin_entropy(&bin_counts(a.iter().copied(), bins));
    let (hb, mb, _) = plugin_entropy(&bin_counts(b.iter().copied(), bins));
    let (hab, _, _) = plugin_entropy(&bin_counts(
        a.iter().zip(b).map(|(x, y)| x * bins + y),
        bins * bins,
    ));
    if n == 0 {
        return 0.0;
    }
    let correction = (ma as f64 - 1.0) * (mb as f64 - 1.0) / (2.0 * n as f64);
    ha + hb - hab - correction
}

fn check_rows(n: usize, others: &[usize]) -> Result<()> {
    if n < MIN_ROWS {
        return Err(Error::data(format!(
            "information estimates need at least {MIN_ROWS} rows, got {n}"
        )));
    }
    if others.iter().any(|&m| m != n) {
        return Err(Error::data(
            "covariates and time vectors have different lengths",
        ));
    }
    Ok(())
}

/// k-means cells of the standardized covariates, computed in canonical row
/// order and returned in the caller's order.
fn cells(x: ArrayView2<f64>, extra: &[&[f64]], rng: &RngStream) -> Vec<usize> {
    let order = canonical_order(x, extra);
    let z = standardize(x.select(ndarray::Axis(0), &order).view());
    let sorted_labels = kmeans(z.view(), CELLS, &rng.derive(label::KMEANS));
    let mut labels = vec![0; order.len()];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = sorted_labels[pos];
    }
    labels
}

fn group_by_cell(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// `I(E; C | X)` in nats: a `p(cell)`-weighted sum of within-cell mutual
/// information between 8 within-cell quantile bins of `E` and of `C`.
/// Identical covariate rows collapse to one cell, which gives the
/// unconditional estimate.
pub fn estimate_cmi(e: &[f64], c: &[f64], x: ArrayView2<f64>, rng: &RngStream) -> Result<f64> {
    check_rows(x.nrows(), &[e.len(), c.len()])?;
    let labels = cells(x, &[e, c], rng);
    let n = e.len() as f64;
    let mut total = 0.0;
    for g in group_by_cell(&labels) {
        let ge: Vec<f64> = g.iter().map(|&i| e[i]).collect();
        let gc: Vec<f64> = g.iter().map(|&i| c[i]).collect();
        let mi = mutual_information(
            &quantile_bins(&ge, TIME_BINS),
            &quantile_bins(&gc, TIME_BINS),
            TIME_BINS,
        );
        total += g.len() as f64 / n * mi;
    }
    Ok(total)
}

/// `E_X[H(T | X)]` in nats, with `T` quantized into global quantile bins.
pub fn conditional_entropy(t: &[f64], x: ArrayView2<f64>, rng: &RngStream) -> Result<f64> {
    check_rows(x.nrows(), &[t.len()])?;
    let labels = cells(x, &[t], rng);
    let bins = quantile_bins(t, TIME_BINS);
    let n = t.len() as f64;
    Ok(group_by_cell(&labels)
        .into_iter()
        .map(|g| {
            g.len() as f64 / n * entropy_mm(&bin_counts(g.iter().map(|&i| bins[i]), TIME_BINS))
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub log10_cv: f64,
    /// The mean was zero or the CV fell below the floor.
    pub floored: bool,
}

/// `log10(sd(T) / |mean(T)|)` with the `n - 1` standard deviation.
pub fn observed_dispersion(t: &[f64]) -> Result<Dispersion> {
    if t.len() < 2 {
        return Err(Error::data("dispersion needs at least two times"));
    }
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let denom = mean.abs();
    let mut floored = denom < CV_FLOOR;
    let cv = sd / denom.max(CV_FLOOR);
    floored |= cv < CV_FLOOR;
    Ok(Dispersion {
        log10_cv: cv.max(CV_FLOOR).log10(),
        floored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub p10: Vec<f64>,
    pub p25: Vec<f64>,
    pub p50: Vec<f64>,
    pub p75: Vec<f64>,
    pub p90: Vec<f64>,
}

impl Band {
    pub const LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

    fn from_curves(curves: &[Vec<f64>], points: usize) -> Self {
        let mut out: [Vec<f64>; 5] = Default::default();
        for j in 0..points {
            let col = sorted_copy(&curves.iter().map(|c| c[j]).collect::<Vec<_>>());
            for (o, &p) in out.iter_mut().zip(&Self::LEVELS) {
                o.push(quantile_sorted(&col, p));
            }
        }
        let [p10, p25, p50, p75, p90] = out;
        Self {
            p10,
            p25,
            p50,
            p75,
            p90,
        }
    }

    pub fn levels(&self) -> [&[f64]; 5] {
        [&self.p10, &self.p25, &self.p50, &self.p75, &self.p90]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBands {
    /// Normalized time in `[0, 1]` (fraction of each task's max observed time).
    pub grid: Vec<f64>,
    pub event: Band,
    pub censor: Band,
    pub km: Band,
}

fn empirical_survival(values: &[f64], t: f64) -> f64 {
    values.iter().filter(|&&v| v > t).count() as f64 / values.len() as f64
}

/// Pointwise percentile bands of `P(E > t)`, `P(C > t)` and the observed KM
/// curve over a corpus, each task on its own time axis rescaled by its
/// largest observed time.
pub fn curve_bands(tasks: &[TaskSample], grid: &[f64]) -> Result<CurveBands> {
    if tasks.len() < 10 {
        return Err(Error::data(format!(
            "curve bands need at least 10 tasks, got {}",
            tasks.len()
        )));
    }
    if grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::data("band grid must lie in [0, 1]"));
    }
    let per_task: Vec<[Vec<f64>; 3]> = tasks
        .par_iter()
        .map(|task| {
            let d = &task.context;
            let t_max = d.times.iter().copied().fold(0.0, f64::max);
            let km = km_estimate(&d.times, &d.events)?;
            let at =
                |f: &dyn Fn(f64) -> f64| grid.iter().map(|&u| f(u * t_max)).collect::<Vec<_>>();
            Ok([
                at(&|t| empirical_survival(&task.context_latents.event, t)),
                at(&|t| empirical_survival(&task.context_latents.censor, t)),
                at(&|t| km.survival_at(t)),
            ])
        })
        .collect::<Result<_>>()?;
    let pick = |k: usize| per_task.iter().map(|c| c[k].clone()).collect::<Vec<_>>();
    Ok(CurveBands {
        grid: grid.to_vec(),
        event: Band::from_curves(&pick(0), grid.len()),
        censor: Band::from_curves(&pick(1), grid.len()),
        km: Band::from_curves(&pick(2), grid.len()),
    })
}

/// Per-task diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDiagnostics {
    pub family: PriorFamily,
    pub censoring: CensoringKind,
    pub censoring_rate: f64,
    pub log10_cv: f64,
    pub cv_floored: bool,
    pub conditional_entropy: f64,
    pub cmi: f64,
}

pub fn diagnose_task(task: &TaskSample, rng: &RngStream) -> Result<TaskDiagnostics> {
    let d = &task.context;
    let disp = observed_dispersion(&d.times)?;
    Ok(TaskDiagnostics {
        family: task.summary.family,
        censoring: task.summary.censoring,
        censoring_rate: d.censoring_rate(),
        log10_cv: disp.log10_cv,
        cv_floored: disp.floored,
        conditional_entropy: conditional_entropy(&d.times, d.x.view(), rng)?,
        cmi: estimate_cmi(
            &task.context_latents.event,
            &task.context_latents.censor,
            d.x.view(),
            rng,
        )?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDiagnostics {
    pub tasks: Vec<TaskDiagnostics>,
    pub cmi_median: f64,
    pub cmi_p95: f64,
    /// Task counts per censoring-rate decile `[0, .1), ..., [.9, 1]`.
    pub censoring_deciles: [usize; 10],
    pub bands: Option<CurveBands>,
}

pub fn decile_counts(rates: &[f64]) -> [usize; 10] {
    let mut out = [0; 10];
    for &r in rates {
        out[((r * 10.0).floor() as usize).min(9)] += 1;
    }
    out
}

/// Diagnostics for a corpus; task `i` seeds its k-means from
/// `rng.derive(i)`. Bands are computed when there are at least 10 tasks.
pub fn diagnose_corpus(
    tasks: &[TaskSample],
    rng: &RngStream,
    band_points: usize,
) -> Result<PriorDiagnostics> {
    if tasks.is_empty() {
        return Err(Error::data("diagnostics need at least one task"));
    }
    let per: Vec<TaskDiagnostics> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| diagnose_task(t, &rng.derive(i as u64)))
        .collect::<Result<_>>()?;
    let cmi = sorted_copy(&per.iter().map(|d| d.cmi).collect::<Vec<_>>());
    let rates: Vec<f64> = per.iter().map(|d| d.censoring_rate).collect();
    let bands = if tasks.len() >= 10 && band_points >= 2 {
        let grid: Vec<f64> = (0..band_points)
            .map(|j| j as f64 / (band_points - 1) as f64)
            .collect();
        Some(curve_bands(tasks, &grid)?)
    } else {
        None
    };
    Ok(PriorDiagnostics {
        cmi_median: median(&cmi),
        cmi_p95: quantile_sorted(&cmi, 0.95),
        censoring_deciles: decile_counts(&rates),
        tasks: per,
        bands,
    })
}

/// Long-format band table: `u, curve, p10, p25, p50, p75, p90`.
pub fn bands_csv(b: &CurveBands) -> Result<String> {
    let err = |e: csv::Error| Error::format("CSV output", e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["u", "curve", "p10", "p25", "p50", "p75", "p90"])
        .map_err(err)?;
    for (name, band) in [("event", &b.event), ("censor", &b.censor), ("km", &b.km)] {
        for (j, u) in b.grid.iter().enumerate() {
            let mut rec = vec![u.to_string(), name.to_owned()];
            rec.extend(band.levels().iter().map(|l| l[j].to_string()));
            w.write_record(&rec).map_err(err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format("CSV output", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Per-task table: one row per task with the scalar diagnostics.
pub fn tasks_csv(d: &PriorDiagnostics) -> Result<String> {
    let err = |e: csv::Error| Error::format("CSV output", e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task",
        "family",
        "censoring",
        "censoring_rate",
        "log10_cv",
        "conditional_entropy",
        "cmi",
    ])
    .map_err(err)?;
    for (i, t) in d.tasks.iter().enumerate() {
        w.write_record([
            i.to_string(),
            t.family.as_str().to_owned(),
            t.censoring.as_str().to_owned(),
            t.censoring_rate.to_string(),
            t.log10_cv.to_string(),
            t.conditional_entropy.to_string(),
            t.cmi.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format("CSV output", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}
