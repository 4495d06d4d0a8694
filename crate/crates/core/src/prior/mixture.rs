use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax, softplus};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureComponent {
    Weibull,
    Lognormal,
}

/// Per-row mixture parameters derived from hidden triples `(a_j, b_j, r_j)`.
///
/// For Weibull components `first` holds the shape and `second` the scale;
/// for lognormal components they hold `mu` and `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRow {
    pub component: MixtureComponent,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MixtureRow {
    /// Build from a hidden vector laid out as `[a_1, b_1, r_1, a_2, ...]`.
    pub fn from_hidden(component: MixtureComponent, hidden: &[f64]) -> Result<Self> {
        if hidden.is_empty() || hidden.len() % 3 != 0 {
            return Err(Error::data(format!(
                "mixture hidden row has length {}, expected a positive multiple of 3",
                hidden.len()
            )));
        }
        let k = hidden.len() / 3;
        let a = (0..k).map(|j| hidden[3 * j]);
        let b = (0..k).map(|j| hidden[3 * j + 1]);
        let r: Vec<f64> = (0..k).map(|j| hidden[3 * j + 2]).collect();
        let (first, second) = match component {
            MixtureComponent::Weibull => (
                a.map(|v| softplus(v) + 0.1).collect(),
                b.map(|v| softplus(v) + 0.1).collect(),
            ),
            MixtureComponent::Lognormal => (a.map(softplus).collect(), b.map(softplus).collect()),
        };
        Ok(Self {
            component,
            first,
            second,
            weights: softmax(&r),
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Time for component `j` given its noise draw: a uniform for Weibull,
    /// a standard normal for lognormal.
    pub fn component_time(&self, j: usize, noise: f64) -> f64 {
        match self.component {
            MixtureComponent::Weibull => weibull_inverse_cdf(self.first[j], self.second[j], noise),
            MixtureComponent::Lognormal => (self.first[j] + self.second[j] * noise).exp(),
        }
    }
}

/// `lambda * (-ln(1 - u))^(1 / kappa)`.
pub fn weibull_inverse_cdf(kappa: f64, lambda: f64, u: f64) -> f64 {
    lambda * (-(1.0 - u).ln()).powf(1.0 / kappa)
}

/// Draw `Z ~ Categorical(pi)`, then a time from component `Z`.
pub fn sample_mixture_time(row: &MixtureRow, rng: &mut RngStream) -> f64 {
    let z = rng.categorical(&row.weights);
    let noise = match row.component {
        MixtureComponent::Weibull => rng.uniform(),
        MixtureComponent::Lognormal => rng.normal(),
    };
    row.component_time(z, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weibull_inverse_cdf() {
        let u = 1.0 - (-1.0f64).exp();
        assert!((weibull_inverse_cdf(1.0, 1.0, u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_maps_keep_parameters_positive() {
        let hidden = [-50.0, -50.0, 0.0, 3.0, -2.0, 1.0];
        let w = MixtureRow::from_hidden(MixtureComponent::Weibull, &hidden).unwrap();
        assert!(w.first.iter().chain(&w.second).all(|v| *v >= 0.1));
        let l = MixtureRow::from_hidden(MixtureComponent::Lognormal, &hidden).unwrap();
        assert!(l.first.iter().chain(&l.second).all(|v| *v > 0.0));
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_lognormal_is_constant() {
        let row = MixtureRow {
            component: MixtureComponent::Lognormal,
            first: vec![0.0],
            second: vec![0.0],
            weights: vec![1.0],
        };
        let mut rng = RngStream::new(1, 2);
        for _ in 0..100 {
            assert_eq!(sample_mixture_time(&row, &mut rng), 1.0);
        }
    }

    #[test]
    fn equal_logits_give_equal_component_frequencies() {
        let hidden: Vec<f64> = (0..4).flat_map(|j| [j as f64, 0.0, 0.0]).collect();
        let row = MixtureRow::from_hidden(MixtureComponent::Weibull, &hidden).unwrap();
        let mut rng = RngStream::new(33, 0);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[rng.categorical(&row.weights)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn bad_hidden_length_rejected() {
        assert!(MixtureRow::from_hidden(MixtureComponent::Weibull, &[1.0, 2.0]).is_err());
    }
}
