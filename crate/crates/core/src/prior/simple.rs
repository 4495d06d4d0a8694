//! A frozen single-covariate prior with a known survival function.
//!
//! `x ~ N(0, 1)`, `E | x ~ Exp(rate * exp(beta * x))`, `C ~ Unif(0, c_max)`.
//! Used for training smoke runs and for checking that predictions approach
//! the true conditional survival curve as the context grows.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::task::{Latents, SpecSummary, TaskSample};
use super::{CensoringKind, PriorFamily};
use crate::data::SurvivalData;
use crate::error::{Error, Result};
use crate::rng::{label, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplePriorConfig {
    pub beta: (f64, f64),
    /// Log-uniform range of the baseline hazard.
    pub rate: (f64, f64),
    /// `c_max = factor / rate`, factor uniform in this range.
    pub censor_factor: (f64, f64),
}

impl Default for SimplePriorConfig {
    fn default() -> Self {
        Self {
            beta: (0.8, 1.6),
            rate: (0.2, 5.0),
            censor_factor: (1.5, 4.0),
        }
    }
}

impl SimplePriorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta.0 <= self.beta.1
            && self.rate.0 > 0.0
            && self.rate.0 <= self.rate.1
            && self.censor_factor.0 > 0.0
            && self.censor_factor.0 <= self.censor_factor.1;
        if !ok {
            return Err(Error::config(format!(
                "invalid simple prior ranges {self:?}"
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &RngStream) -> SimpleDgp {
        let mut r = rng.derive(label::SPEC);
        let beta = r.uniform_range(self.beta.0, self.beta.1);
        let rate = r.log_uniform(self.rate.0, self.rate.1);
        let censor_max = r.uniform_range(self.censor_factor.0, self.censor_factor.1) / rate;
        SimpleDgp {
            beta,
            rate,
            censor_max,
            seed: r.next_u64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleDgp {
    pub beta: f64,
    pub rate: f64,
    pub censor_max: f64,
    pub seed: u64,
}

impl SimpleDgp {
    pub fn hazard(&self, x: f64) -> f64 {
        self.rate * (self.beta * x).exp()
    }

    /// True `P(E > t | x)`.
    pub fn survival(&self, x: f64, t: f64) -> f64 {
        (-self.hazard(x) * t.max(0.0)).exp()
    }

    pub fn sample_task(&self, n_ctx: usize, n_q: usize, rng: &RngStream) -> Result<TaskSample> {
        if n_ctx == 0 || n_q == 0 {
            return Err(Error::config(
                "a task needs at least one context row and one query",
            ));
        }
        let n = n_ctx + n_q;
        let mut rx = rng.derive(label::COVARIATES);
        let mut re = rng.derive(label::EVENT);
        let mut rc = rng.derive(label::CENSOR);
        let x: Vec<f64> = (0..n).map(|_| rx.normal()).collect();
        let e: Vec<f64> = x
            .iter()
            .map(|&xi| -re.uniform_open().ln() / self.hazard(xi))
            .collect();
        let c: Vec<f64> = (0..n).map(|_| self.censor_max * rc.uniform()).collect();
        let times = (0..n_ctx).map(|i| e[i].min(c[i])).collect();
        let events = (0..n_ctx).map(|i| e[i] <= c[i]).collect();
        let context = SurvivalData::new(
            Array2::from_shape_vec((n_ctx, 1), x[..n_ctx].to_vec()).expect("shape"),
            times,
            events,
        )?;
        let task = TaskSample {
            context,
            context_latents: Latents {
                event: e[..n_ctx].to_vec(),
                censor: c[..n_ctx].to_vec(),
            },
            query_x: Array2::from_shape_vec((n_q, 1), x[n_ctx..].to_vec()).expect("shape"),
            query_latents: Latents {
                event: e[n_ctx..].to_vec(),
                censor: c[n_ctx..].to_vec(),
            },
            summary: SpecSummary {
                family: PriorFamily::Naive,
                via_kitchen_sink: false,
                censoring: CensoringKind::Uniform,
                target_censor_rate: f64::NAN,
                censor_scale: 1.0,
                probe_censor_rate: f64::NAN,
                t_max: self.censor_max,
                seed: self.seed,
            },
        };
        task.validate()?;
        Ok(task)
    }
}
