use ndarray::Array2;

use super::{CensoringSpec, DgpSpec, UniformSupport};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabular::{gen_conditional, gen_unconditional};

/// Raw (uncalibrated) censoring times for the rows of `x`.
///
/// Only `rng` feeds randomness into the result; the event branch's stream is
/// never touched here.
pub fn apply_censoring(
    spec: &DgpSpec,
    x: &Array2<f64>,
    event_times: &[f64],
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let n = x.nrows();
    if event_times.len() != n {
        return Err(Error::data(format!(
            "{} event times for {n} covariate rows",
            event_times.len()
        )));
    }
    if event_times.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::data("event times must be finite and nonnegative"));
    }
    let mut r = rng.clone();
    match &spec.censoring {
        CensoringSpec::Uniform { support } => {
            let (lo, hi) = match support {
                UniformSupport::EventRange => (
                    event_times.iter().copied().fold(f64::INFINITY, f64::min),
                    event_times
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max),
                ),
                UniformSupport::Horizon => (0.0, spec.t_max),
            };
            Ok((0..n).map(|_| lo + (hi - lo) * r.uniform()).collect())
        }
        CensoringSpec::Random { table, head } => {
            let hidden = gen_unconditional(table, n, head.kind.hidden_width(), &r.derive(1))?;
            head.times(&hidden, spec.t_max, &r.derive(2))
        }
        CensoringSpec::Administrative { end_time } => {
            let a_star =
                end_time.unwrap_or_else(|| event_times.iter().copied().fold(0.0, f64::max));
            administrative(a_star, n, &mut r)
        }
        CensoringSpec::ConditionalIndependent { head } => {
            let hidden = gen_conditional(&head.mlp, x, head.kind.hidden_width(), &r.derive(1))?;
            head.times(&hidden, spec.t_max, &r.derive(2))
        }
    }
}

/// `C_i = a* - A_i`, entry times `A_i ~ Unif(0, a*)`.
pub(crate) fn administrative(a_star: f64, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(a_star > 0.0 && a_star.is_finite()) {
        return Err(Error::config(format!(
            "administrative end time must be positive, got {a_star}"
        )));
    }
    Ok((0..n)
        .map(|_| {
            let entry = a_star * rng.uniform();
            end_minus_entry(a_star, entry)
        })
        .collect())
}

#[inline]
pub(crate) fn end_minus_entry(a_star: f64, entry: f64) -> f64 {
    (a_star - entry).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{sample_dgp, CensoringWeights, PriorConfig};

    fn spec_with(mechanism: CensoringWeights, seed: u64) -> DgpSpec {
        let cfg = PriorConfig {
            censoring: mechanism,
            ..Default::default()
        };
        sample_dgp(&RngStream::new(seed, 0), &cfg).unwrap()
    }

    fn only(u: f64, r: f64, a: f64, c: f64) -> CensoringWeights {
        CensoringWeights {
            uniform: u,
            random: r,
            administrative: a,
            conditional_independent: c,
        }
    }

    #[test]
    fn administrative_arithmetic() {
        assert_eq!(end_minus_entry(10.0, 3.0), 7.0);
    }

    #[test]
    fn administrative_rejects_nonpositive_end() {
        let mut r = RngStream::new(0, 0);
        assert!(administrative(0.0, 3, &mut r).is_err());
        assert!(administrative(-1.0, 3, &mut r).is_err());
    }

    #[test]
    fn uniform_on_degenerate_event_range() {
        let mut spec = spec_with(only(1.0, 0.0, 0.0, 0.0), 4);
        spec.censoring = CensoringSpec::Uniform {
            support: UniformSupport::EventRange,
        };
        let x = Array2::zeros((5, spec.dim));
        let c = apply_censoring(&spec, &x, &[5.0; 5], &RngStream::new(1, 1)).unwrap();
        assert!(c.iter().all(|v| *v == 5.0));
    }

    #[test]
    fn conditional_independent_ignores_event_stream() {
        let spec = spec_with(only(0.0, 0.0, 0.0, 1.0), 12);
        let x = Array2::from_shape_fn((6, spec.dim), |(i, j)| (i as f64 - j as f64) * 0.3);
        let censor = RngStream::new(5, 5);
        // two different event vectors stand in for two different event streams
        let a = apply_censoring(&spec, &x, &[1.0; 6], &censor).unwrap();
        let b = apply_censoring(&spec, &x, &[2.0, 3.0, 0.5, 9.0, 1.0, 4.0], &censor).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_mechanisms_emit_nonnegative_times() {
        for (k, w) in [
            only(1.0, 0.0, 0.0, 0.0),
            only(0.0, 1.0, 0.0, 0.0),
            only(0.0, 0.0, 1.0, 0.0),
            only(0.0, 0.0, 0.0, 1.0),
        ]
        .into_iter()
        .enumerate()
        {
            for seed in 0..10 {
                let spec = spec_with(w.clone(), 100 * k as u64 + seed);
                let x =
                    Array2::from_shape_fn((20, spec.dim), |(i, j)| ((i * 7 + j) % 5) as f64 - 2.0);
                let e: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 + 0.1).collect();
                let c = apply_censoring(&spec, &x, &e, &RngStream::new(seed, 9)).unwrap();
                assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0));
            }
        }
    }
}
