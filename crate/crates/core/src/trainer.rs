//! Training on prior draws: query schedules, latent targets, AdamW, and
//! checkpoint selection by weighted integrated Brier score.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{continuous_grid, load_dataset, prepare_split, split};
use crate::data::SurvivalData;
use crate::error::{io_at, Error, Result};
use crate::metrics::{censoring_km, default_horizon, integrated_brier};
use crate::model::{
    decode_checkpoint, encode_checkpoint, target_distribution, Checkpoint, HeadInit, LossKind,
    Model, ModelConfig, OptimizerState, TokenBatch,
};
use crate::prior::simple::SimplePriorConfig;
use crate::prior::{sample_prior_task, PriorConfig, TaskSample};
use crate::rng::{label, RngStream};
use crate::timewarp::{fit_transform, make_binner, TimeTransform, TransformKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySchedule {
    /// Every query asks for the event-time distribution.
    EventOnly,
    /// Each query appears twice, once per indicator.
    Both,
    /// Indicator drawn with the context's event rate.
    Random,
}

/// One supervised query: `time` is `e*` when `indicator` is set, else `c*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryTarget {
    pub query: usize,
    pub indicator: bool,
    pub time: f64,
}

pub fn make_query_targets(
    schedule: QuerySchedule,
    task: &TaskSample,
    rng: &mut RngStream,
) -> Vec<QueryTarget> {
    let lat = &task.query_latents;
    let pick = |query: usize, indicator: bool| QueryTarget {
        query,
        indicator,
        time: if indicator {
            lat.event[query]
        } else {
            lat.censor[query]
        },
    };
    let n = task.n_query();
    match schedule {
        QuerySchedule::EventOnly => (0..n).map(|q| pick(q, true)).collect(),
        QuerySchedule::Both => (0..n)
            .flat_map(|q| [pick(q, false), pick(q, true)])
            .collect(),
        QuerySchedule::Random => {
            let rate = 1.0 - task.context.censoring_rate();
            (0..n).map(|q| pick(q, rng.bernoulli(rate))).collect()
        }
    }
}

/// Fit the time transform from context rows only.
pub fn fit_context_transform(kind: TransformKind, context: &SurvivalData) -> Result<TimeTransform> {
    fit_transform(kind, &context.times)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorChoice {
    /// The full synthetic prior.
    Dgp(PriorConfig),
    /// Single covariate, exponential events, uniform censoring.
    Simple(SimplePriorConfig),
}

impl Default for PriorChoice {
    fn default() -> Self {
        Self::Dgp(PriorConfig::default())
    }
}

impl PriorChoice {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Dgp(c) => c.validate(),
            Self::Simple(c) => c.validate(),
        }
    }

    pub fn sample(&self, n_ctx: usize, n_q: usize, rng: &RngStream) -> Result<TaskSample> {
        match self {
            Self::Dgp(cfg) => sample_prior_task(cfg, n_ctx, n_q, rng),
            Self::Simple(cfg) => cfg
                .sample(rng)
                .sample_task(n_ctx, n_q, &rng.derive(label::TASK)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub tasks_per_step: usize,
    pub queries_per_task: usize,
    /// Inclusive range; each step draws one context size uniformly.
    pub context_size: (usize, usize),
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub schedule: QuerySchedule,
    pub checkpoint_every: u64,
    pub keep_last: usize,
    pub deterministic: bool,
    pub model: ModelConfig,
    pub prior: PriorChoice,
    /// Dataset CSVs scored at each checkpoint (fixed 70/30 split, seed 0).
    pub validation: Vec<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 1000,
            tasks_per_step: 8,
            queries_per_task: 16,
            context_size: (32, 256),
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            loss: LossKind::Nll,
            schedule: QuerySchedule::Both,
            checkpoint_every: 200,
            keep_last: 10,
            deterministic: false,
            model: ModelConfig::default(),
            prior: PriorChoice::default(),
            validation: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks_per_step == 0 || self.queries_per_task == 0 {
            return Err(Error::config(
                "tasks_per_step and queries_per_task must be at least 1",
            ));
        }
        let (lo, hi) = self.context_size;
        if lo < 4 || hi > 2048 || lo > hi {
            return Err(Error::config(format!(
                "context_size ({lo}, {hi}) must satisfy 4 <= min <= max <= 2048"
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::config(
                "learning_rate must be positive and weight_decay nonnegative",
            ));
        }
        if self.checkpoint_every == 0 || self.keep_last == 0 {
            return Err(Error::config(
                "checkpoint_every and keep_last must be at least 1",
            ));
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.prior.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(n_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState {
                step: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let s = &mut self.state;
        s.step += 1;
        let t = s.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
            let step = (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + self.eps);
            params[i] -= self.learning_rate * (step + self.weight_decay * params[i]);
        }
    }
}

/// A task turned into model inputs.
pub struct PreparedTask {
    pub batch: TokenBatch,
    pub targets: Array2<f64>,
    pub transform: TimeTransform,
}

/// Build tokens and target distributions for one task. The transform and
/// binner see context rows only.
pub fn prepare_task(
    model: &Model,
    task: &TaskSample,
    targets: &[QueryTarget],
    loss: LossKind,
) -> Result<PreparedTask> {
    let transform = fit_context_transform(model.config.transform, &task.context)?;
    let binner = make_binner(&transform, model.config.bins)?;
    let z: Vec<f64> = task
        .context
        .times
        .iter()
        .map(|&t| transform.forward(t))
        .collect();
    let rows: Vec<usize> = targets.iter().map(|t| t.query).collect();
    let qx = task.query_x.select(ndarray::Axis(0), &rows);
    let indicators: Vec<bool> = targets.iter().map(|t| t.indicator).collect();
    let batch = model.embed_tokens(
        task.context.x.view(),
        &z,
        &task.context.events,
        qx.view(),
        &indicators,
        &binner,
    )?;
    let mut dist = Array2::zeros((targets.len(), model.config.bins));
    for (i, t) in targets.iter().enumerate() {
        dist.row_mut(i).assign(&Array1::from(target_distribution(
            loss, t.time, &transform, &binner,
        )));
    }
    Ok(PreparedTask {
        batch,
        targets: dist,
        transform,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u64,
    pub seed: u64,
    /// Tasks whose context could not be fitted (e.g. all times zero).
    pub skipped: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: AdamW,
    /// Number of completed steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = Model::new(cfg.model.clone(), HeadInit::Zero)?;
        model.deterministic = cfg.deterministic;
        let opt = AdamW::new(model.n_params(), cfg.learning_rate, cfg.weight_decay);
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
        })
    }

    pub fn resume(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.config != cfg.model {
            return Err(Error::config(
                "checkpoint model configuration differs from the run configuration",
            ));
        }
        let step = ck.step;
        let state = ck.optimizer.clone();
        let mut model = ck.into_model()?;
        model.deterministic = cfg.deterministic;
        let mut opt = AdamW::new(model.n_params(), cfg.learning_rate, cfg.weight_decay);
        if let Some(state) = state {
            opt.state = state;
        }
        Ok(Self {
            cfg,
            model,
            opt,
            step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.step, Some(self.opt.state.clone()))
    }

    /// Stream for step `step`; depends only on the run seed and the step.
    pub fn step_rng(&self, step: u64) -> RngStream {
        RngStream::new(self.cfg.seed, label::TASK).derive(step)
    }

    pub fn sample_step_tasks(&self, step: u64) -> Result<Vec<TaskSample>> {
        let rng = self.step_rng(step);
        let (lo, hi) = self.cfg.context_size;
        let n_ctx = rng.derive(label::SPLIT).int_inclusive(lo, hi);
        (0..self.cfg.tasks_per_step as u64)
            .into_par_iter()
            .map(|k| {
                self.cfg.prior.sample(
                    n_ctx,
                    self.cfg.queries_per_task,
                    &rng.derive2(label::TASK, k),
                )
            })
            .collect()
    }

    /// One AdamW step on the mean loss over every query target of `tasks`.
    pub fn train_on_tasks(
        &mut self,
        tasks: &[TaskSample],
        rng: &RngStream,
    ) -> Result<(f64, usize)> {
        let model = &self.model;
        let mut prepared = Vec::with_capacity(tasks.len());
        let mut skipped = 0;
        for (k, task) in tasks.iter().enumerate() {
            let targets = make_query_targets(
                self.cfg.schedule,
                task,
                &mut rng.derive2(label::TARGETS, k as u64),
            );
            match prepare_task(model, task, &targets, self.cfg.loss) {
                Ok(p) => prepared.push((k, p)),
                Err(Error::Data(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let total: usize = prepared.iter().map(|(_, p)| p.targets.nrows()).sum();
        if total == 0 {
            return Err(Error::numeric(format!(
                "step {}: no usable tasks",
                self.step
            )));
        }
        let scale = 1.0 / total as f64;
        let results: Vec<Result<(f64, Vec<f64>)>> = prepared
            .par_iter()
            .map(|(_, p)| {
                let mut g = vec![0.0; model.n_params()];
                let l = model.accumulate_gradient(&p.batch, p.targets.view(), scale, &mut g)?;
                Ok((l, g))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.n_params()];
        for ((k, _), r) in prepared.iter().zip(results) {
            let (l, g) = r?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    task_seed: tasks[*k].summary.seed,
                });
            }
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        self.opt.update(&mut self.model.params, &grad);
        Ok((loss, skipped))
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let start = Instant::now();
        let tasks = self.sample_step_tasks(self.step)?;
        let rng = self.step_rng(self.step);
        let (loss, skipped) = self.train_on_tasks(&tasks, &rng)?;
        let report = StepReport {
            step: self.step,
            loss,
            wall_ms: if self.cfg.deterministic {
                0
            } else {
                start.elapsed().as_millis() as u64
            },
            seed: self.cfg.seed,
            skipped,
        };
        self.step += 1;
        Ok(report)
    }
}

/// A validation dataset with its fixed split.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub name: String,
    pub train: SurvivalData,
    pub test: SurvivalData,
}

impl ValidationSet {
    /// Load, split 70/30 with seed 0 and preprocess a dataset CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let ds = load_dataset(path)?;
        let s = split(ds.len(), 0.7, 0)?;
        let p = prepare_split(&ds, &s)?;
        Ok(Self {
            name: ds.name,
            train: p.train,
            test: p.test,
        })
    }

    pub fn size(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// `sum sqrt(N_D) IBS_D / sum sqrt(N_D)`.
pub fn weighted_score(entries: &[(usize, f64)]) -> f64 {
    let (num, den) = entries.iter().fold((0.0, 0.0), |(n, d), &(size, ibs)| {
        let w = (size as f64).sqrt();
        (n + w * ibs, d + w)
    });
    num / den
}

/// IBS of `model` on one validation split, training side as context.
pub fn validation_ibs(model: &Model, set: &ValidationSet) -> Result<f64> {
    let grid = continuous_grid(&set.train.times)?;
    let surv = model.predict_survival(&set.train, set.test.x.view(), &grid)?;
    let ckm = censoring_km(&set.train.times, &set.train.events)?;
    let tau = default_horizon(&set.train.times);
    let ibs = integrated_brier(&surv, &grid, &set.test.times, &set.test.events, &ckm, tau)?;
    if !ibs.value.is_finite() {
        return Err(Error::numeric("validation IBS is not finite"));
    }
    Ok(ibs.value)
}

/// Weighted validation IBS; any failure scores `+inf`.
pub fn checkpoint_score(model: &Model, sets: &[ValidationSet]) -> f64 {
    let mut entries = Vec::with_capacity(sets.len());
    for s in sets {
        match validation_ibs(model, s) {
            Ok(v) => entries.push((s.size(), v)),
            Err(_) => return f64::INFINITY,
        }
    }
    weighted_score(&entries)
}

/// Index of the lowest weighted score; ties keep the earliest index.
pub fn select_by_score(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::config("no checkpoints to select from"));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_checkpoint(models: &[Model], sets: &[ValidationSet]) -> Result<usize> {
    if sets.is_empty() {
        return Err(Error::config(
            "checkpoint selection needs at least one validation dataset",
        ));
    }
    let scores: Vec<f64> = models.iter().map(|m| checkpoint_score(m, sets)).collect();
    select_by_score(&scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub final_step: u64,
    pub final_loss: f64,
    pub checkpoints: Vec<PathBuf>,
    pub best: Option<(u64, f64)>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:08}.spfn"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| io_at(path, e))?)
}

/// Run the configured number of steps, writing `train_log.jsonl`,
/// periodic checkpoints (last `keep_last` kept) and `best.spfn` when
/// validation sets are given.
pub fn run_training(
    trainer: &mut Trainer,
    out_dir: &Path,
    validation: &[ValidationSet],
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("train_log.jsonl"))?;
    let mut kept: Vec<PathBuf> = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    let mut last_loss = f64::NAN;
    while trainer.step < trainer.cfg.steps {
        let report = trainer.train_step()?;
        last_loss = report.loss;
        let line = serde_json::json!({
            "step": report.step,
            "loss": report.loss,
            "wall_ms": report.wall_ms,
            "seed": report.seed,
        });
        writeln!(log, "{line}")?;
        let done = trainer.step == trainer.cfg.steps;
        if trainer.step % trainer.cfg.checkpoint_every == 0 || done {
            let ck = trainer.checkpoint();
            let bytes = encode_checkpoint(&ck)?;
            let path = checkpoint_path(out_dir, trainer.step);
            fs::write(&path, &bytes)?;
            kept.push(path);
            while kept.len() > trainer.cfg.keep_last {
                fs::remove_file(kept.remove(0))?;
            }
            if !validation.is_empty() {
                let score = checkpoint_score(&trainer.model, validation);
                if best.is_none_or(|(_, b)| score < b) {
                    best = Some((trainer.step, score));
                    fs::write(out_dir.join("best.spfn"), &bytes)?;
                }
            }
        }
    }
    Ok(TrainOutcome {
        final_step: trainer.step,
        final_loss: last_loss,
        checkpoints: kept,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Latents;

    fn toy_task() -> TaskSample {
        let dgp = crate::prior::simple::SimpleDgp {
            beta: 1.0,
            rate: 1.0,
            censor_max: 2.0,
            seed: 1,
        };
        let mut t = dgp.sample_task(10, 2, &RngStream::new(0, 0)).unwrap();
        t.query_latents = Latents {
            event: vec![3.0, 7.0],
            censor: vec![1.0, 2.0],
        };
        t
    }

    #[test]
    fn schedules() {
        let task = toy_task();
        let mut r = RngStream::new(0, 0);
        let ev = make_query_targets(QuerySchedule::EventOnly, &task, &mut r);
        assert_eq!(
            ev.iter().map(|t| t.time).collect::<Vec<_>>(),
            vec![3.0, 7.0]
        );
        assert!(ev.iter().all(|t| t.indicator));
        let both = make_query_targets(QuerySchedule::Both, &task, &mut r);
        assert_eq!(
            both.iter().map(|t| t.indicator).collect::<Vec<_>>(),
            vec![false, true, false, true]
        );
        assert_eq!(
            both.iter().map(|t| t.time).collect::<Vec<_>>(),
            vec![1.0, 3.0, 2.0, 7.0]
        );
    }

    #[test]
    fn random_schedule_with_uncensored_context() {
        let mut task = toy_task();
        task.context.events.iter_mut().for_each(|e| *e = true);
        let mut r = RngStream::new(4, 4);
        let t = make_query_targets(QuerySchedule::Random, &task, &mut r);
        assert!(t.iter().all(|q| q.indicator));
    }

    #[test]
    fn weighted_score_example() {
        let s = weighted_score(&[(4, 0.2), (16, 0.1)]);
        assert!((s - 0.8 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn selection_ties_and_failures() {
        assert_eq!(select_by_score(&[0.3, 0.3, 0.3]).unwrap(), 0);
        assert_eq!(select_by_score(&[f64::INFINITY, 0.4, 0.2]).unwrap(), 2);
        assert_eq!(select_by_score(&[0.5]).unwrap(), 0);
    }

    #[test]
    fn adamw_first_step_moves_by_learning_rate() {
        let mut opt = AdamW::new(2, 0.1, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.update(&mut p, &[2.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_toml_round_trip() {
        let text = r#"
            seed = 3
            steps = 5
            context_size = [8, 16]
            schedule = "random"
            [loss]
            kind = "sce"
            sigma = 0.1
            [model]
            hidden = 8
            heads = 2
            [prior]
            kind = "simple"
        "#;
        let cfg = TrainConfig::from_toml(text).unwrap();
        assert_eq!(cfg.context_size, (8, 16));
        assert_eq!(cfg.loss, LossKind::Sce { sigma: 0.1 });
        assert!(matches!(cfg.prior, PriorChoice::Simple(_)));
        let back = TrainConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_toml("context_size = [2, 8]").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }
}
