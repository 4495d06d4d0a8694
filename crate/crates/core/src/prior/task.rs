use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{apply_censoring, calibrate_censoring_rate, CensoringKind, DgpSpec, PriorFamily};
use crate::data::SurvivalData;
use crate::error::{Error, Result};
use crate::rng::{label, RngStream};
use crate::tabular::{gen_conditional, gen_unconditional};

/// The three independent streams a task consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStreams {
    pub covariates: RngStream,
    pub event: RngStream,
    pub censor: RngStream,
}

impl TaskStreams {
    pub fn from_task_rng(rng: &RngStream) -> Self {
        Self {
            covariates: rng.derive(label::COVARIATES),
            event: rng.derive(label::EVENT),
            censor: rng.derive(label::CENSOR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub event: Vec<f64>,
    pub censor: Vec<f64>,
}

/// What a task records about the draw that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub family: PriorFamily,
    pub via_kitchen_sink: bool,
    pub censoring: CensoringKind,
    pub target_censor_rate: f64,
    pub censor_scale: f64,
    pub probe_censor_rate: f64,
    pub t_max: f64,
    pub seed: u64,
}

/// One synthetic task: observed context plus query covariates with their
/// latent event and censoring times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub context: SurvivalData,
    /// Latent times behind each context row.
    pub context_latents: Latents,
    pub query_x: Array2<f64>,
    pub query_latents: Latents,
    pub summary: SpecSummary,
}

impl TaskSample {
    pub fn n_context(&self) -> usize {
        self.context.len()
    }

    pub fn n_query(&self) -> usize {
        self.query_x.nrows()
    }

    /// Check `t = min(e, c)`, `delta = 1[e <= c]` and time validity.
    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        let n = self.n_context();
        let q = self.n_query();
        if self.context_latents.event.len() != n || self.context_latents.censor.len() != n {
            return Err(Error::data("context latents do not match the context size"));
        }
        if self.query_latents.event.len() != q || self.query_latents.censor.len() != q {
            return Err(Error::data("query latents do not match the query count"));
        }
        if self.query_x.ncols() != self.context.dim() {
            return Err(Error::data("query and context covariate widths differ"));
        }
        for i in 0..n {
            let (e, c) = (
                self.context_latents.event[i],
                self.context_latents.censor[i],
            );
            if self.context.times[i] != e.min(c) || self.context.events[i] != (e <= c) {
                return Err(Error::data(format!(
                    "context row {i} disagrees with its latent times"
                )));
            }
        }
        let all = self
            .context_latents
            .event
            .iter()
            .chain(&self.context_latents.censor)
            .chain(&self.query_latents.event)
            .chain(&self.query_latents.censor);
        if all.clone().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::data("latent times must be finite and nonnegative"));
        }
        if self.query_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("query covariates must be finite"));
        }
        Ok(())
    }
}

/// Event times for the rows of `x` from the spec's event generator.
pub fn event_times(spec: &DgpSpec, x: &Array2<f64>, rng: &RngStream) -> Result<Vec<f64>> {
    let head = &spec.event;
    let hidden = gen_conditional(&head.mlp, x, head.kind.hidden_width(), &rng.derive(1))?;
    head.times(&hidden, spec.t_max, &rng.derive(2))
}

pub fn sample_task(
    spec: &DgpSpec,
    n_ctx: usize,
    n_q: usize,
    rng: &RngStream,
) -> Result<TaskSample> {
    sample_task_with_streams(spec, n_ctx, n_q, &TaskStreams::from_task_rng(rng))
}

pub fn sample_task_with_streams(
    spec: &DgpSpec,
    n_ctx: usize,
    n_q: usize,
    streams: &TaskStreams,
) -> Result<TaskSample> {
    if n_ctx == 0 || n_q == 0 {
        return Err(Error::config(
            "a task needs at least one context row and one query",
        ));
    }
    let n = n_ctx + n_q;
    let x = gen_unconditional(&spec.covariates, n, spec.dim, &streams.covariates)?;
    let events = event_times(spec, &x, &streams.event)?;
    let raw_censor = apply_censoring(spec, &x, &events, &streams.censor)?;

    let calibration = calibrate_censoring_rate(
        spec,
        spec.target_censor_rate,
        &RngStream::new(spec.seed, label::CALIBRATION),
        spec.calibration_rows,
    )?;
    let censors: Vec<f64> = raw_censor.iter().map(|c| c * calibration.scale).collect();
    if censors.iter().any(|c| !c.is_finite()) {
        return Err(Error::numeric("scaled censoring time overflowed"));
    }

    let times: Vec<f64> = events[..n_ctx]
        .iter()
        .zip(&censors[..n_ctx])
        .map(|(e, c)| e.min(*c))
        .collect();
    let flags: Vec<bool> = events[..n_ctx]
        .iter()
        .zip(&censors[..n_ctx])
        .map(|(e, c)| e <= c)
        .collect();
    let context = SurvivalData::new(x.slice(s![..n_ctx, ..]).to_owned(), times, flags)?;
    let task = TaskSample {
        context,
        context_latents: Latents {
            event: events[..n_ctx].to_vec(),
            censor: censors[..n_ctx].to_vec(),
        },
        query_x: x.slice(s![n_ctx.., ..]).to_owned(),
        query_latents: Latents {
            event: events[n_ctx..].to_vec(),
            censor: censors[n_ctx..].to_vec(),
        },
        summary: SpecSummary {
            family: spec.family,
            via_kitchen_sink: spec.via_kitchen_sink,
            censoring: spec.censoring.kind(),
            target_censor_rate: spec.target_censor_rate,
            censor_scale: calibration.scale,
            probe_censor_rate: calibration.achieved_rate,
            t_max: spec.t_max,
            seed: spec.seed,
        },
    };
    task.validate()?;
    Ok(task)
}
