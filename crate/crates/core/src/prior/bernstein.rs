use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Monotone Bernstein map on `[0, 1]` built from softmax increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinMap {
    coefficients: Vec<f64>,
    increments: Vec<f64>,
    /// Control points `b_0 = 0 <= b_1 <= ... <= b_K = 1`.
    control: Vec<f64>,
}

impl BernsteinMap {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::config("Bernstein map needs at least one knot"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::data("Bernstein coefficients must be finite"));
        }
        let increments = crate::numeric::softmax(&coefficients);
        let k = coefficients.len();
        let mut control = Vec::with_capacity(k + 1);
        control.push(0.0);
        let mut acc = 0.0;
        for d in &increments[..k - 1] {
            acc += d;
            control.push(acc.min(1.0));
        }
        control.push(1.0);
        Ok(Self {
            coefficients,
            increments,
            control,
        })
    }

    pub fn knots(&self) -> usize {
        self.coefficients.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn control_points(&self) -> &[f64] {
        &self.control
    }

    /// `f(u) = sum_j b_j C(K, j) u^j (1 - u)^(K - j)`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::data(format!(
                "Bernstein argument {u} outside [0, 1]"
            )));
        }
        Ok(self.eval_unchecked(u))
    }

    pub(crate) fn eval_unchecked(&self, u: f64) -> f64 {
        let k = self.knots();
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let v = 1.0 - u;
        let mut binom = 1.0;
        let mut total = 0.0;
        for (j, b) in self.control.iter().enumerate() {
            if j > 0 {
                binom = binom * (k - j + 1) as f64 / j as f64;
            }
            total += b * binom * u.powi(j as i32) * v.powi((k - j) as i32);
        }
        total.clamp(0.0, 1.0)
    }
}

/// `tau = t_max * f(U)`, `U ~ Unif(0, 1)`.
pub fn sample_survdist_time(map: &BernsteinMap, t_max: f64, rng: &mut RngStream) -> Result<f64> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::config(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    Ok(t_max * map.eval_unchecked(rng.uniform()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_increments_give_identity() {
        let map = BernsteinMap::new(vec![0.0, 0.0]).unwrap();
        assert!((map.eval(0.3).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn endpoints_are_exact() {
        let map = BernsteinMap::new(vec![2.0, -1.0, 0.3, 5.0]).unwrap();
        assert_eq!(map.eval(0.0).unwrap(), 0.0);
        assert_eq!(map.eval(1.0).unwrap(), 1.0);
        assert_eq!(map.control_points()[0], 0.0);
        assert_eq!(*map.control_points().last().unwrap(), 1.0);
    }

    #[test]
    fn three_knot_value_matches_direct_sum() {
        // b = (0, e/(e+2), (e+1)/(e+2), 1); f(1/2) = (3 b1 + 3 b2 + 1) / 8
        let e = std::f64::consts::E;
        let b1 = e / (e + 2.0);
        let b2 = (e + 1.0) / (e + 2.0);
        let expected = (3.0 * b1 + 3.0 * b2 + 1.0) / 8.0;
        let map = BernsteinMap::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!((map.eval(0.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_argument_rejected() {
        let map = BernsteinMap::new(vec![0.0; 4]).unwrap();
        assert!(map.eval(-0.01).is_err());
        assert!(map.eval(1.5).is_err());
    }

    #[test]
    fn identity_map_pushes_forward_to_uniform() {
        // one-sample KS test against Unif(0, 10), alpha = 0.01
        let map = BernsteinMap::new(vec![0.0, 0.0]).unwrap();
        let mut rng = RngStream::new(17, 0);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_survdist_time(&map, 10.0, &mut rng).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = x / 10.0;
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} exceeds {critical}");
        assert!(xs.iter().all(|x| (0.0..=10.0).contains(x)));
    }

    #[test]
    fn forced_uniform_endpoints() {
        let map = BernsteinMap::new(vec![0.5, -0.5, 1.0]).unwrap();
        assert_eq!(10.0 * map.eval(0.0).unwrap(), 0.0);
        assert_eq!(10.0 * map.eval(1.0).unwrap(), 10.0);
    }
}
