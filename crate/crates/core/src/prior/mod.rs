//! Identifiable right-censored data-generating processes.
//!
//! [`sample_dgp`] draws a [`DgpSpec`]; [`sample_task`] turns a spec into a
//! [`TaskSample`] holding an observed context set, query covariates and the
//! latent event/censoring times used as training targets. Event and
//! censoring times come from separate networks and separate random streams,
//! so `E` and `C` are independent given `X` by construction.

mod bernstein;
mod calibrate;
mod censoring;
mod mixture;
pub mod simple;
mod task;

pub use bernstein::{sample_survdist_time, BernsteinMap};
pub use calibrate::{calibrate_censoring_rate, calibrate_scale, CensorCalibration, RATE_TOLERANCE};
pub use censoring::apply_censoring;
pub use mixture::{sample_mixture_time, weibull_inverse_cdf, MixtureComponent, MixtureRow};
pub use task::{
    event_times, sample_task, sample_task_with_streams, Latents, SpecSummary, TaskSample,
    TaskStreams,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, RngStream};
use crate::tabular::{sample_mlp_spec, GeneratorRanges, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    Naive,
    SurvivalDistribution,
    Mixture,
    KitchenSink,
}

impl PriorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::SurvivalDistribution => "survival_distribution",
            Self::Mixture => "mixture",
            Self::KitchenSink => "kitchen_sink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringKind {
    Uniform,
    Random,
    Administrative,
    ConditionalIndependent,
}

impl CensoringKind {
    pub const ALL: [CensoringKind; 4] = [
        Self::Uniform,
        Self::Random,
        Self::Administrative,
        Self::ConditionalIndependent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Random => "random",
            Self::Administrative => "administrative",
            Self::ConditionalIndependent => "conditional_independent",
        }
    }
}

/// Relative weights over the four prior families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyWeights {
    pub naive: f64,
    pub survival_distribution: f64,
    pub mixture: f64,
    pub kitchen_sink: f64,
}

impl Default for FamilyWeights {
    fn default() -> Self {
        Self {
            naive: 0.0,
            survival_distribution: 0.0,
            mixture: 0.0,
            kitchen_sink: 1.0,
        }
    }
}

impl FamilyWeights {
    pub fn only(family: PriorFamily) -> Self {
        let mut w = Self {
            naive: 0.0,
            survival_distribution: 0.0,
            mixture: 0.0,
            kitchen_sink: 0.0,
        };
        match family {
            PriorFamily::Naive => w.naive = 1.0,
            PriorFamily::SurvivalDistribution => w.survival_distribution = 1.0,
            PriorFamily::Mixture => w.mixture = 1.0,
            PriorFamily::KitchenSink => w.kitchen_sink = 1.0,
        }
        w
    }

    fn as_array(&self) -> [f64; 4] {
        [
            self.naive,
            self.survival_distribution,
            self.mixture,
            self.kitchen_sink,
        ]
    }
}

/// Child weights of the kitchen-sink meta prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KitchenSinkWeights {
    pub naive: f64,
    pub survival_distribution: f64,
    pub mixture: f64,
}

impl Default for KitchenSinkWeights {
    fn default() -> Self {
        Self {
            naive: 0.4,
            survival_distribution: 0.4,
            mixture: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CensoringWeights {
    pub uniform: f64,
    pub random: f64,
    pub administrative: f64,
    pub conditional_independent: f64,
}

impl Default for CensoringWeights {
    fn default() -> Self {
        Self {
            uniform: 1.0,
            random: 1.0,
            administrative: 1.0,
            conditional_independent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub families: FamilyWeights,
    pub kitchen_sink: KitchenSinkWeights,
    pub censoring: CensoringWeights,
    /// Covariate dimension, inclusive range.
    pub dim: (usize, usize),
    /// Log-uniform range of the time horizon.
    pub t_max: (f64, f64),
    /// Uniform range of the target censoring rate.
    pub censor_rate: (f64, f64),
    pub bernstein_knots: (usize, usize),
    pub mixture_components: Vec<usize>,
    pub generator: GeneratorRanges,
    /// Rows in the probe used to calibrate the censoring rate.
    pub calibration_rows: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            families: FamilyWeights::default(),
            kitchen_sink: KitchenSinkWeights::default(),
            censoring: CensoringWeights::default(),
            dim: (1, 20),
            t_max: (1.0, 100.0),
            censor_rate: (0.02, 0.98),
            bernstein_knots: (4, 16),
            mixture_components: vec![2, 3, 5],
            generator: GeneratorRanges::default(),
            calibration_rows: 1024,
        }
    }
}

fn check_weights(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::config(format!(
            "{name} weights must be finite and nonnegative"
        )));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config(format!("{name} weights are all zero")));
    }
    Ok(())
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights("family", &self.families.as_array())?;
        if self.families.kitchen_sink > 0.0 {
            let k = &self.kitchen_sink;
            check_weights(
                "kitchen-sink",
                &[k.naive, k.survival_distribution, k.mixture],
            )?;
        }
        let c = &self.censoring;
        check_weights(
            "censoring",
            &[
                c.uniform,
                c.random,
                c.administrative,
                c.conditional_independent,
            ],
        )?;
        if self.dim.0 == 0 || self.dim.0 > self.dim.1 {
            return Err(Error::config(format!(
                "invalid dimension range {:?}",
                self.dim
            )));
        }
        if !(self.t_max.0 > 0.0 && self.t_max.0 <= self.t_max.1 && self.t_max.1.is_finite()) {
            return Err(Error::config(format!(
                "invalid t_max range {:?}",
                self.t_max
            )));
        }
        let (lo, hi) = self.censor_rate;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::config(format!(
                "censoring-rate range {:?} must lie in (0, 1)",
                self.censor_rate
            )));
        }
        if self.bernstein_knots.0 == 0 || self.bernstein_knots.0 > self.bernstein_knots.1 {
            return Err(Error::config(format!(
                "invalid knot range {:?}",
                self.bernstein_knots
            )));
        }
        if self.mixture_components.is_empty() || self.mixture_components.contains(&0) {
            return Err(Error::config("mixture component counts must be positive"));
        }
        if self.calibration_rows == 0 {
            return Err(Error::config("calibration probe needs at least one row"));
        }
        self.generator.validate()
    }
}

/// One task from a fresh spec: the spec comes from `rng.derive(SPEC)` and
/// the rows from `rng.derive(TASK)`.
pub fn sample_prior_task(
    cfg: &PriorConfig,
    n_ctx: usize,
    n_q: usize,
    rng: &RngStream,
) -> Result<TaskSample> {
    let spec = sample_dgp(&rng.derive(label::SPEC), cfg)?;
    sample_task(&spec, n_ctx, n_q, &rng.derive(label::TASK))
}

/// `n_tasks` independent tasks; task `i` uses `RngStream::new(seed, TASK).derive(i)`.
pub fn generate_corpus(
    cfg: &PriorConfig,
    seed: u64,
    n_tasks: usize,
    n_ctx: usize,
    n_q: usize,
) -> Result<Vec<TaskSample>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let root = RngStream::new(seed, label::TASK);
    (0..n_tasks as u64)
        .into_par_iter()
        .map(|i| sample_prior_task(cfg, n_ctx, n_q, &root.derive(i)))
        .collect()
}

/// How a hidden row becomes a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// The single hidden value is the raw time.
    Direct,
    /// Per-row Bernstein coefficients `offset + temperature * hidden`.
    Bernstein {
        knots: usize,
        offset: Vec<f64>,
        temperature: f64,
    },
    /// Per-row mixture triples `offset + scale * hidden`.
    Mixture {
        component: MixtureComponent,
        components: usize,
        offset: Vec<f64>,
        scale: f64,
    },
}

impl HeadKind {
    pub fn hidden_width(&self) -> usize {
        match self {
            Self::Direct => 1,
            Self::Bernstein { knots, .. } => *knots,
            Self::Mixture { components, .. } => 3 * components,
        }
    }
}

/// A time generator: a network producing hidden rows plus the map to time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeHead {
    pub mlp: MlpSpec,
    pub kind: HeadKind,
}

impl TimeHead {
    /// Times for each hidden row; row `i` draws its noise from `rng.derive(i)`.
    pub fn times(&self, hidden: &Array2<f64>, t_max: f64, rng: &RngStream) -> Result<Vec<f64>> {
        let n = hidden.nrows();
        let mut out = Vec::with_capacity(n);
        match &self.kind {
            HeadKind::Direct => {
                out.extend(hidden.column(0).iter().copied());
                shift_nonnegative(&mut out);
            }
            HeadKind::Bernstein {
                offset,
                temperature,
                ..
            } => {
                for i in 0..n {
                    let coefs: Vec<f64> = hidden
                        .row(i)
                        .iter()
                        .zip(offset)
                        .map(|(h, o)| o + temperature * h)
                        .collect();
                    let map = BernsteinMap::new(coefs)?;
                    out.push(sample_survdist_time(
                        &map,
                        t_max,
                        &mut rng.derive(i as u64),
                    )?);
                }
            }
            HeadKind::Mixture {
                component,
                offset,
                scale,
                ..
            } => {
                for i in 0..n {
                    let h: Vec<f64> = hidden
                        .row(i)
                        .iter()
                        .zip(offset)
                        .map(|(h, o)| o + scale * h)
                        .collect();
                    let row = MixtureRow::from_hidden(*component, &h)?;
                    out.push(sample_mixture_time(&row, &mut rng.derive(i as u64)));
                }
            }
        }
        if let Some(bad) = out.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::numeric(format!("time generator produced {bad}")));
        }
        Ok(out)
    }
}

/// Shift so the smallest time is zero when any time is negative.
pub(crate) fn shift_nonnegative(times: &mut [f64]) {
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        for t in times.iter_mut() {
            *t -= min;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformSupport {
    /// `Unif(min_j E_j, max_j E_j)`.
    EventRange,
    /// `Unif(0, t_max)`.
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum CensoringSpec {
    Uniform {
        support: UniformSupport,
    },
    /// Times from an unconditional table, independent of `X`.
    Random {
        table: MlpSpec,
        head: TimeHead,
    },
    /// `C_i = a* - A_i` with `A_i ~ Unif(0, a*)`; `a*` defaults to `max_j E_j`.
    Administrative {
        end_time: Option<f64>,
    },
    /// A second conditional generator on `X`, independent of the event one.
    ConditionalIndependent {
        head: TimeHead,
    },
}

impl CensoringSpec {
    pub fn kind(&self) -> CensoringKind {
        match self {
            Self::Uniform { .. } => CensoringKind::Uniform,
            Self::Random { .. } => CensoringKind::Random,
            Self::Administrative { .. } => CensoringKind::Administrative,
            Self::ConditionalIndependent { .. } => CensoringKind::ConditionalIndependent,
        }
    }
}

/// One prior draw: everything needed to generate tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub seed: u64,
    pub dim: usize,
    pub covariates: MlpSpec,
    /// Concrete family; never `KitchenSink`.
    pub family: PriorFamily,
    pub via_kitchen_sink: bool,
    pub event: TimeHead,
    pub censoring: CensoringSpec,
    pub target_censor_rate: f64,
    pub t_max: f64,
    pub calibration_rows: usize,
}

fn sample_head(family: PriorFamily, cfg: &PriorConfig, rng: &RngStream) -> Result<TimeHead> {
    let mut r = rng.derive(label::SPEC);
    let kind = match family {
        PriorFamily::Naive => HeadKind::Direct,
        PriorFamily::SurvivalDistribution => {
            let knots = r.int_inclusive(cfg.bernstein_knots.0, cfg.bernstein_knots.1);
            HeadKind::Bernstein {
                knots,
                offset: (0..knots).map(|_| r.normal()).collect(),
                temperature: r.uniform_range(0.25, 2.0),
            }
        }
        PriorFamily::Mixture => {
            let components =
                cfg.mixture_components[r.below(cfg.mixture_components.len() as u64) as usize];
            let component = if r.bernoulli(0.5) {
                MixtureComponent::Weibull
            } else {
                MixtureComponent::Lognormal
            };
            HeadKind::Mixture {
                component,
                components,
                offset: (0..3 * components).map(|_| r.normal()).collect(),
                scale: r.uniform_range(0.25, 1.5),
            }
        }
        PriorFamily::KitchenSink => unreachable!("kitchen sink resolves to a child family first"),
    };
    let mlp = sample_mlp_spec(&rng.derive(label::WEIGHTS), &cfg.generator)?
        .with_min_final_width(kind.hidden_width());
    Ok(TimeHead { mlp, kind })
}

/// Draw `theta ~ pi`.
pub fn sample_dgp(rng: &RngStream, cfg: &PriorConfig) -> Result<DgpSpec> {
    cfg.validate()?;
    let mut r = rng.derive(label::SPEC);
    let families = [
        PriorFamily::Naive,
        PriorFamily::SurvivalDistribution,
        PriorFamily::Mixture,
        PriorFamily::KitchenSink,
    ];
    let mut family = families[r.categorical(&cfg.families.as_array())];
    let via_kitchen_sink = family == PriorFamily::KitchenSink;
    if via_kitchen_sink {
        let k = &cfg.kitchen_sink;
        family = families[r.categorical(&[k.naive, k.survival_distribution, k.mixture])];
    }
    let dim = r.int_inclusive(cfg.dim.0, cfg.dim.1);
    let c = &cfg.censoring;
    let mechanism = CensoringKind::ALL[r.categorical(&[
        c.uniform,
        c.random,
        c.administrative,
        c.conditional_independent,
    ])];
    let target_censor_rate = r.uniform_range(cfg.censor_rate.0, cfg.censor_rate.1);
    let t_max = r.log_uniform(cfg.t_max.0, cfg.t_max.1);

    let covariates =
        sample_mlp_spec(&rng.derive(label::COVARIATES), &cfg.generator)?.with_min_final_width(dim);
    let event = sample_head(family, cfg, &rng.derive(label::EVENT))?;
    let censor_rng = rng.derive(label::CENSOR);
    let censoring = match mechanism {
        CensoringKind::Uniform => CensoringSpec::Uniform {
            support: if family == PriorFamily::SurvivalDistribution {
                UniformSupport::Horizon
            } else {
                UniformSupport::EventRange
            },
        },
        CensoringKind::Random => {
            let head = sample_head(family, cfg, &censor_rng)?;
            let table = sample_mlp_spec(&censor_rng.derive(label::COVARIATES), &cfg.generator)?
                .with_min_final_width(head.kind.hidden_width());
            CensoringSpec::Random { table, head }
        }
        CensoringKind::Administrative => CensoringSpec::Administrative { end_time: None },
        CensoringKind::ConditionalIndependent => CensoringSpec::ConditionalIndependent {
            head: sample_head(family, cfg, &censor_rng)?,
        },
    };
    Ok(DgpSpec {
        seed: r.next_u64(),
        dim,
        covariates,
        family,
        via_kitchen_sink,
        event,
        censoring,
        target_censor_rate,
        t_max,
        calibration_rows: cfg.calibration_rows,
    })
}
