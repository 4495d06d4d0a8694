//! Benchmark protocol: CSV ingestion and preprocessing, seeded splits,
//! evaluation grids, per-metric ranking with failures, and bootstrap
//! confidence intervals for median ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalData;
use crate::error::{io_at, Error, Result};
use crate::metrics::{evaluate, km_estimate, MetricReport};
use crate::model::{decode_checkpoint, Model};
use crate::numeric::{median, quantile_sorted, sorted_copy};
use crate::rng::{label, RngStream};

/// Offset used when a model needs its first grid point strictly before the
/// earliest training time.
pub const GRID_SHIFT: f64 = 1e-5;
pub const DEFAULT_BOOTSTRAP: usize = 10_000;

const MISSING_TOKENS: [&str; 5] = ["", "NA", "NaN", "nan", "?"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.values {
            ColumnValues::Numeric(_) => ColumnKind::Numeric,
            ColumnValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn has_missing(&self) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v.iter().any(Option::is_none),
            ColumnValues::Categorical(v) => v.iter().any(Option::is_none),
        }
    }

    fn is_missing(&self, row: usize) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].is_none(),
            ColumnValues::Categorical(v) => v[row].is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub missing: bool,
}

/// Raw tabular survival data before preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub name: String,
    pub columns: Vec<Column>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

/// Optional `<name>.meta.json` next to a dataset CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sidecar {
    pub categorical: Vec<String>,
}

impl SurvivalDataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn metadata(&self) -> Vec<ColumnMeta> {
        self.columns
            .iter()
            .map(|c| ColumnMeta {
                name: c.name.clone(),
                kind: c.kind(),
                missing: c.has_missing(),
            })
            .collect()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            categorical: self
                .columns
                .iter()
                .filter(|c| c.kind() == ColumnKind::Categorical)
                .map(|c| c.name.clone())
                .collect(),
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

pub fn load_dataset(path: &Path) -> Result<SurvivalDataset> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    let meta = sidecar_path(path);
    let sidecar = if meta.exists() {
        serde_json::from_str(&fs::read_to_string(&meta).map_err(|e| io_at(&meta, e))?)
            .map_err(|e| Error::format("dataset sidecar", format!("{}: {e}", meta.display())))?
    } else {
        Sidecar::default()
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset_csv(&name, &text, &sidecar)
}

fn parse_event(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "1.0" | "true" | "TRUE" | "True" => Some(true),
        "0" | "0.0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

/// Parse CSV text with reserved `time` and `event` columns. Every other
/// column is a feature; those named in `sidecar.categorical` are kept as
/// strings.
pub fn parse_dataset_csv(name: &str, text: &str, sidecar: &Sidecar) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format("dataset CSV", e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |col: &str| header.iter().position(|h| h == col);
    let (Some(t_col), Some(e_col)) = (find("time"), find("event")) else {
        return Err(Error::data(
            "dataset CSV must have `time` and `event` columns",
        ));
    };
    let mut seen = BTreeSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(Error::data(format!("duplicate column `{dup}`")));
    }
    for c in &sidecar.categorical {
        if find(c).is_none_or(|i| i == t_col || i == e_col) {
            return Err(Error::data(format!(
                "sidecar names unknown feature column `{c}`"
            )));
        }
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&i| i != t_col && i != e_col)
        .collect();
    let mut numeric: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    let mut cats: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    let is_cat: Vec<bool> = (0..header.len())
        .map(|i| sidecar.categorical.contains(&header[i]))
        .collect();
    let (mut times, mut events) = (Vec::new(), Vec::new());
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::format("dataset CSV", format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::data(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let t: f64 = rec[t_col].parse().map_err(|_| {
            Error::data(format!("row {row}: time `{}` is not a number", &rec[t_col]))
        })?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::data(format!(
                "row {row}: time {t} must be finite and nonnegative"
            )));
        }
        let e = parse_event(&rec[e_col]).ok_or_else(|| {
            Error::data(format!("row {row}: event `{}` must be 0 or 1", &rec[e_col]))
        })?;
        times.push(t);
        events.push(e);
        for &i in &feature_idx {
            let field = &rec[i];
            let missing = MISSING_TOKENS.contains(&field);
            if is_cat[i] {
                cats[i].push((!missing).then(|| field.to_owned()));
            } else if missing {
                numeric[i].push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::data(format!(
                        "row {row}: column `{}` value `{field}` is not numeric",
                        header[i]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "row {row}: column `{}` is not finite",
                        header[i]
                    )));
                }
                numeric[i].push(Some(v));
            }
        }
    }
    if times.is_empty() {
        return Err(Error::data("dataset has no rows"));
    }
    let columns = feature_idx
        .into_iter()
        .map(|i| Column {
            name: header[i].clone(),
            values: if is_cat[i] {
                ColumnValues::Categorical(std::mem::take(&mut cats[i]))
            } else {
                ColumnValues::Numeric(std::mem::take(&mut numeric[i]))
            },
        })
        .collect();
    Ok(SurvivalDataset {
        name: name.to_owned(),
        columns,
        times,
        events,
    })
}

/// Serialize back to CSV (features, then `time`, `event`). Missing values
/// are written as empty fields.
pub fn write_dataset_csv(ds: &SurvivalDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = ds.columns.iter().map(|c| c.name.as_str()).collect();
    header.extend(["time", "event"]);
    let io = |e: csv::Error| Error::format("dataset CSV", e.to_string());
    w.write_record(&header).map_err(io)?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds
            .columns
            .iter()
            .map(|c| match &c.values {
                ColumnValues::Numeric(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                ColumnValues::Categorical(v) => v[r].clone().unwrap_or_default(),
            })
            .collect();
        rec.push(ds.times[r].to_string());
        rec.push(u8::from(ds.events[r]).to_string());
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format("dataset CSV", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Which side of a split a set of rows belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Train,
    Test,
}

/// Row indices tagged with their side. Anything that fits statistics
/// refuses `Side::Test`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSet {
    pub rows: Vec<usize>,
    pub side: Side,
}

impl RowSet {
    pub fn require_train(&self, what: &str) -> Result<()> {
        match self.side {
            Side::Train => Ok(()),
            Side::Test => Err(Error::Leakage(format!("{what} fitted on test rows"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: RowSet,
    pub test: RowSet,
}

/// Seeded uniform shuffle, then the first `floor(n * fraction)` rows train.
pub fn split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n_train = (n as f64 * fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::data(format!(
            "splitting {n} rows at {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, label::SPLIT).shuffle(&mut idx);
    let test = idx.split_off(n_train);
    Ok(Split {
        train: RowSet {
            rows: idx,
            side: Side::Train,
        },
        test: RowSet {
            rows: test,
            side: Side::Test,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ColumnPlan {
    Numeric {
        fill: f64,
        mean: f64,
        sd: f64,
    },
    Categorical {
        levels: Vec<String>,
        fill: Option<String>,
    },
}

/// Imputation and standardization statistics from training rows.
///
/// Feature layout: each column in order (numeric: one standardized value,
/// categorical: one indicator per level), then one missing indicator for
/// every column that has missing values anywhere in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    plans: Vec<ColumnPlan>,
    indicators: Vec<usize>,
}

impl Preprocessor {
    pub fn fit(ds: &SurvivalDataset, train: &RowSet) -> Result<Self> {
        train.require_train("preprocessing")?;
        let mut plans = Vec::with_capacity(ds.columns.len());
        for col in &ds.columns {
            plans.push(match &col.values {
                ColumnValues::Numeric(v) => {
                    let seen: Vec<f64> = train.rows.iter().filter_map(|&r| v[r]).collect();
                    if seen.is_empty() {
                        ColumnPlan::Numeric {
                            fill: 0.0,
                            mean: 0.0,
                            sd: 1.0,
                        }
                    } else {
                        let fill = median(&seen);
                        let filled: Vec<f64> =
                            train.rows.iter().map(|&r| v[r].unwrap_or(fill)).collect();
                        let n = filled.len() as f64;
                        let mean = filled.iter().sum::<f64>() / n;
                        let var = if filled.len() > 1 {
                            filled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                        } else {
                            0.0
                        };
                        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                        ColumnPlan::Numeric { fill, mean, sd }
                    }
                }
                ColumnValues::Categorical(v) => {
                    // Levels describe the schema, so they come from every row;
                    // the fill value is a training statistic.
                    let levels: BTreeSet<&String> = v.iter().flatten().collect();
                    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
                    for &r in &train.rows {
                        if let Some(s) = &v[r] {
                            *counts.entry(s).or_default() += 1;
                        }
                    }
                    let mut fill: Option<(&String, usize)> = None;
                    for (k, c) in counts {
                        if fill.is_none_or(|(_, b)| c > b) {
                            fill = Some((k, c));
                        }
                    }
                    ColumnPlan::Categorical {
                        levels: levels.into_iter().cloned().collect(),
                        fill: fill.map(|(k, _)| k.clone()),
                    }
                }
            });
        }
        let indicators = (0..ds.columns.len())
            .filter(|&i| ds.columns[i].has_missing())
            .collect();
        Ok(Self { plans, indicators })
    }

    pub fn width(&self) -> usize {
        let base: usize = self
            .plans
            .iter()
            .map(|p| match p {
                ColumnPlan::Numeric { .. } => 1,
                ColumnPlan::Categorical { levels, .. } => levels.len(),
            })
            .sum();
        base + self.indicators.len()
    }

    pub fn transform(&self, ds: &SurvivalDataset, rows: &RowSet) -> Result<SurvivalData> {
        if self.plans.len() != ds.columns.len() {
            return Err(Error::data(
                "preprocessor was fitted on a different column set",
            ));
        }
        let w = self.width();
        let mut x = Array2::zeros((rows.rows.len(), w));
        for (i, &r) in rows.rows.iter().enumerate() {
            let mut j = 0;
            for (plan, col) in self.plans.iter().zip(&ds.columns) {
                match (plan, &col.values) {
                    (ColumnPlan::Numeric { fill, mean, sd }, ColumnValues::Numeric(v)) => {
                        x[[i, j]] = (v[r].unwrap_or(*fill) - mean) / sd;
                        j += 1;
                    }
                    (ColumnPlan::Categorical { levels, fill }, ColumnValues::Categorical(v)) => {
                        if let Some(s) = v[r].as_ref().or(fill.as_ref()) {
                            if let Ok(k) = levels.binary_search(s) {
                                x[[i, j + k]] = 1.0;
                            }
                        }
                        j += levels.len();
                    }
                    _ => return Err(Error::data(format!("column `{}` changed kind", col.name))),
                }
            }
            for &c in &self.indicators {
                x[[i, j]] = f64::from(u8::from(ds.columns[c].is_missing(r)));
                j += 1;
            }
        }
        let times = rows.rows.iter().map(|&r| ds.times[r]).collect();
        let events = rows.rows.iter().map(|&r| ds.events[r]).collect();
        SurvivalData::new(x, times, events)
    }
}

/// A preprocessed split.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub train: SurvivalData,
    pub test: SurvivalData,
}

pub fn prepare_split(ds: &SurvivalDataset, split: &Split) -> Result<PreparedSplit> {
    let pre = Preprocessor::fit(ds, &split.train)?;
    Ok(PreparedSplit {
        train: pre.transform(ds, &split.train)?,
        test: pre.transform(ds, &split.test)?,
    })
}

/// `K` evenly spaced quantiles of the uncensored training times,
/// deduplicated; `K` defaults to `ceil(sqrt(#events))`. With `shift`, the
/// first point becomes `max(min training time - 1e-5, 0)`.
pub fn quantile_grid(
    times: &[f64],
    events: &[bool],
    k: Option<usize>,
    shift: bool,
) -> Result<Vec<f64>> {
    if times.len() != events.len() {
        return Err(Error::data("times and events must have equal length"));
    }
    let uncensored: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    if uncensored.is_empty() {
        return Err(Error::data(
            "a quantile grid needs at least one uncensored training time",
        ));
    }
    let k = k.unwrap_or_else(|| (uncensored.len() as f64).sqrt().ceil() as usize);
    if k == 0 {
        return Err(Error::config("quantile grid size must be at least 1"));
    }
    let sorted = sorted_copy(&uncensored);
    let mut grid: Vec<f64> = if k == 1 {
        vec![quantile_sorted(&sorted, 0.5)]
    } else {
        (0..k)
            .map(|j| quantile_sorted(&sorted, j as f64 / (k - 1) as f64))
            .collect()
    };
    grid.dedup();
    if shift {
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        grid[0] = (min - GRID_SHIFT).max(0.0);
    }
    Ok(grid)
}

/// `{0} U unique(times)`, sorted.
pub fn continuous_grid(times: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::data(
            "a continuous grid needs at least one training time",
        ));
    }
    let mut grid = sorted_copy(times);
    grid.insert(0, 0.0);
    grid.dedup();
    Ok(grid)
}

/// Ranks of one (dataset, metric) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow {
    /// Per model; empty when the row is void.
    pub ranks: Vec<usize>,
    pub failed: Vec<bool>,
    /// Every model failed.
    pub void: bool,
}

/// Min-tied ranks of completed scores; failures (`None` or NaN) share the
/// worst completed rank plus one.
pub fn rank_models(scores: &[Option<f64>], higher_is_better: bool) -> RankRow {
    let failed: Vec<bool> = scores.iter().map(|s| s.is_none_or(f64::is_nan)).collect();
    if failed.iter().all(|f| *f) {
        return RankRow {
            ranks: Vec::new(),
            failed,
            void: true,
        };
    }
    let key = |v: f64| if higher_is_better { -v } else { v };
    let done: Vec<f64> = scores
        .iter()
        .zip(&failed)
        .filter(|(_, f)| !**f)
        .map(|(s, _)| key(s.unwrap()))
        .collect();
    let mut ranks: Vec<usize> = scores
        .iter()
        .zip(&failed)
        .map(|(s, f)| {
            if *f {
                0
            } else {
                1 + done.iter().filter(|&&o| o < key(s.unwrap())).count()
            }
        })
        .collect();
    let worst = ranks.iter().copied().max().unwrap_or(0);
    for (r, f) in ranks.iter_mut().zip(&failed) {
        if *f {
            *r = worst + 1;
        }
    }
    RankRow {
        ranks,
        failed,
        void: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianRank {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Observed median plus the 2.5/97.5 percentiles of `b` resampled medians.
///
/// Resample `k` uses `rng.derive(k)` and draws indices with `below(n)`.
pub fn bootstrap_median_rank(ranks: &[f64], b: usize, rng: &RngStream) -> Result<MedianRank> {
    if ranks.is_empty() {
        return Err(Error::data("bootstrap needs at least one rank"));
    }
    if b == 0 {
        return Err(Error::config("bootstrap needs at least one resample"));
    }
    let n = ranks.len();
    let mut buf = vec![0.0; n];
    let mut medians: Vec<f64> = (0..b as u64)
        .map(|k| {
            let mut r = rng.derive(k);
            for slot in buf.iter_mut() {
                *slot = ranks[r.below(n as u64) as usize];
            }
            median(&buf)
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    Ok(MedianRank {
        median: median(ranks),
        lo: quantile_sorted(&medians, 0.025),
        hi: quantile_sorted(&medians, 0.975),
    })
}

/// Marginal KM of the training side, repeated for every test row.
pub fn km_baseline(train: &SurvivalData, n_test: usize, grid: &[f64]) -> Result<Array2<f64>> {
    let km = km_estimate(&train.times, &train.events)?;
    let row: Vec<f64> = grid.iter().map(|&t| km.survival_at(t)).collect();
    Ok(Array2::from_shape_fn((n_test, grid.len()), |(_, j)| row[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelEntry {
    Km { name: String },
    Pfn { name: String, checkpoint: PathBuf },
}

impl ModelEntry {
    pub fn name(&self) -> &str {
        match self {
            Self::Km { name } | Self::Pfn { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchManifest {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub bootstrap: usize,
    pub datasets: Vec<DatasetEntry>,
    pub models: Vec<ModelEntry>,
}

impl Default for BenchManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: (0..10).collect(),
            train_fraction: 0.7,
            bootstrap: DEFAULT_BOOTSTRAP,
            datasets: Vec::new(),
            models: Vec::new(),
        }
    }
}

impl BenchManifest {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(
                "a bench manifest needs datasets, models and seeds",
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must lie in (0, 1)"));
        }
        if self.bootstrap == 0 {
            return Err(Error::config("bootstrap must be at least 1"));
        }
        let mut names = BTreeSet::new();
        if let Some(m) = self.models.iter().find(|m| !names.insert(m.name())) {
            return Err(Error::config(format!(
                "duplicate model name `{}`",
                m.name()
            )));
        }
        let mut names = BTreeSet::new();
        if let Some(d) = self
            .datasets
            .iter()
            .find(|d| !names.insert(d.name.as_str()))
        {
            return Err(Error::config(format!(
                "duplicate dataset name `{}`",
                d.name
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Resolve relative dataset and checkpoint paths against `base`.
    pub fn resolve(&mut self, base: &Path) {
        for d in &mut self.datasets {
            d.path = base.join(&d.path);
        }
        for m in &mut self.models {
            if let ModelEntry::Pfn { checkpoint, .. } = m {
                *checkpoint = base.join(&*checkpoint);
            }
        }
    }
}

/// A model ready to predict.
pub enum Predictor {
    KaplanMeier,
    Pfn(Box<Model>),
}

impl Predictor {
    pub fn load(entry: &ModelEntry, deterministic: bool) -> Result<Self> {
        match entry {
            ModelEntry::Km { .. } => Ok(Self::KaplanMeier),
            ModelEntry::Pfn { checkpoint, .. } => {
                let mut model =
                    decode_checkpoint(&fs::read(checkpoint).map_err(|e| io_at(checkpoint, e))?)?
                        .into_model()?;
                model.deterministic = deterministic;
                Ok(Self::Pfn(Box::new(model)))
            }
        }
    }

    /// Survival curves for the test rows on `grid`, conditioned on `train`.
    pub fn predict(
        &self,
        train: &SurvivalData,
        test: &SurvivalData,
        grid: &[f64],
    ) -> Result<Array2<f64>> {
        match self {
            Self::KaplanMeier => km_baseline(train, test.len(), grid),
            Self::Pfn(model) => {
                if train.dim() > model.config.d_max {
                    return Err(Error::data(format!(
                        "{} features after preprocessing exceed the model's capacity of {}",
                        train.dim(),
                        model.config.d_max
                    )));
                }
                model.predict_survival(train, test.x.view(), grid)
            }
        }
    }
}

/// Continuous grid, prediction and all metrics for one split.
pub fn evaluate_split(
    predictor: &Predictor,
    split: &PreparedSplit,
) -> Result<(Vec<f64>, Array2<f64>, MetricReport)> {
    let grid = continuous_grid(&split.train.times)?;
    let surv = predictor.predict(&split.train, &split.test, &grid)?;
    let report = evaluate(
        &surv,
        &grid,
        &split.train.times,
        &split.train.events,
        &split.test.times,
        &split.test.events,
        None,
    )?;
    Ok((grid, surv, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub dataset: String,
    pub seed: u64,
    pub model: String,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

/// One row of the aggregate rank table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub dataset: String,
    pub metric: String,
    pub model: String,
    pub score: Option<f64>,
    pub rank: Option<usize>,
    pub failed: bool,
    pub void: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub median_rank: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub jobs: Vec<JobReport>,
    pub ranks: Vec<RankEntry>,
    pub summary: Vec<ModelSummary>,
}

fn run_job(
    ds: &SurvivalDataset,
    seed: u64,
    fraction: f64,
    predictor: &Predictor,
) -> Result<MetricReport> {
    let s = split(ds.len(), fraction, seed)?;
    let prepared = prepare_split(ds, &s)?;
    Ok(evaluate_split(predictor, &prepared)?.2)
}

/// Run every (dataset, seed, model) job, rank models per (dataset, metric)
/// on seed-averaged scores, and bootstrap the pooled median ranks.
///
/// A model that fails on any seed of a dataset counts as failed there.
pub fn run_bench(
    manifest: &BenchManifest,
    workers: usize,
    deterministic: bool,
) -> Result<BenchReport> {
    use rayon::prelude::*;
    manifest.validate()?;
    let datasets: Vec<SurvivalDataset> = manifest
        .datasets
        .iter()
        .map(|d| {
            load_dataset(&d.path).map(|mut ds| {
                ds.name = d.name.clone();
                ds
            })
        })
        .collect::<Result<_>>()?;
    let predictors: Vec<std::result::Result<Predictor, String>> = manifest
        .models
        .iter()
        .map(|m| Predictor::load(m, deterministic).map_err(|e| e.to_string()))
        .collect();
    let jobs: Vec<(usize, u64, usize)> = (0..datasets.len())
        .flat_map(|d| {
            manifest
                .seeds
                .iter()
                .flat_map(move |&s| (0..manifest.models.len()).map(move |m| (d, s, m)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let outcomes: Vec<std::result::Result<MetricReport, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, s, m)| match &predictors[m] {
                Ok(p) => {
                    run_job(&datasets[d], s, manifest.train_fraction, p).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.clone()),
            })
            .collect()
    });
    let reports: Vec<JobReport> = jobs
        .iter()
        .zip(outcomes)
        .map(|(&(d, s, m), out)| JobReport {
            dataset: datasets[d].name.clone(),
            seed: s,
            model: manifest.models[m].name().to_owned(),
            metrics: out.as_ref().ok().cloned(),
            error: out.err(),
        })
        .collect();

    let n_models = manifest.models.len();
    let mut ranks = Vec::new();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); n_models];
    for ds in &datasets {
        for metric in MetricReport::NAMES {
            let scores: Vec<Option<f64>> = (0..n_models)
                .map(|m| {
                    let vals: Option<Vec<f64>> = reports
                        .iter()
                        .filter(|r| r.dataset == ds.name && r.model == manifest.models[m].name())
                        .map(|r| r.metrics.as_ref().and_then(|x| x.get(metric)))
                        .collect();
                    vals.filter(|v| !v.is_empty())
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            let row = rank_models(&scores, MetricReport::higher_is_better(metric));
            for m in 0..n_models {
                let rank = row.ranks.get(m).copied();
                if let Some(r) = rank {
                    pooled[m].push(r as f64);
                }
                ranks.push(RankEntry {
                    dataset: ds.name.clone(),
                    metric: metric.to_owned(),
                    model: manifest.models[m].name().to_owned(),
                    score: scores[m],
                    rank,
                    failed: row.failed[m],
                    void: row.void,
                });
            }
        }
    }
    let boot = RngStream::new(manifest.seed, label::BOOTSTRAP);
    let summary = (0..n_models)
        .filter(|&m| !pooled[m].is_empty())
        .map(|m| {
            let ci = bootstrap_median_rank(&pooled[m], manifest.bootstrap, &boot.derive(m as u64))?;
            Ok(ModelSummary {
                model: manifest.models[m].name().to_owned(),
                median_rank: ci.median,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BenchReport {
        jobs: reports,
        ranks,
        summary,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("CSV output", e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rank_table_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset", "metric", "model", "score", "rank", "failed", "void",
    ])
    .map_err(csv_err)?;
    for r in &report.ranks {
        w.write_record([
            r.dataset.clone(),
            r.metric.clone(),
            r.model.clone(),
            opt(r.score),
            r.rank.map(|x| x.to_string()).unwrap_or_default(),
            r.failed.to_string(),
            r.void.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::format("CSV output", e.to_string()))?,
    )
    .expect("utf-8"))
}

pub fn summary_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "median_rank", "ci_lo", "ci_hi"])
        .map_err(csv_err)?;
    for s in &report.summary {
        w.write_record([
            s.model.clone(),
            s.median_rank.to_string(),
            s.ci_lo.to_string(),
            s.ci_hi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::format("CSV output", e.to_string()))?,
    )
    .expect("utf-8"))
}

/// Survival matrix as CSV with grid times in the header row.
pub fn survival_csv(grid: &[f64], surv: &Array2<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(grid.iter().map(|g| g.to_string()))
        .map_err(csv_err)?;
    for row in surv.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::format("CSV output", e.to_string()))?,
    )
    .expect("utf-8"))
}
