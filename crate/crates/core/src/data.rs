use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-censored observations `(x_i, t_i, delta_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalData {
    pub x: Array2<f64>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl SurvivalData {
    pub fn new(x: Array2<f64>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        let data = Self { x, times, events };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.x.nrows() != n || self.events.len() != n {
            return Err(Error::data(format!(
                "row counts disagree: x has {}, times {}, events {}",
                self.x.nrows(),
                n,
                self.events.len()
            )));
        }
        if let Some(i) = self
            .times
            .iter()
            .position(|t| !(t.is_finite() && *t >= 0.0))
        {
            return Err(Error::data(format!(
                "row {i}: time {} is not a finite nonnegative value",
                self.times[i]
            )));
        }
        if let Some(i) = self
            .x
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::data(format!("row {i}: non-finite covariate")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn event_indicators(&self) -> Vec<f64> {
        self.events
            .iter()
            .map(|&e| if e { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.events.iter().filter(|e| !**e).count() as f64 / self.len() as f64
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            times: rows.iter().map(|&i| self.times[i]).collect(),
            events: rows.iter().map(|&i| self.events[i]).collect(),
        }
    }
}
