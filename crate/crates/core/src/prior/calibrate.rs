use serde::{Deserialize, Serialize};

use super::task::{event_times, TaskStreams};
use super::{apply_censoring, DgpSpec};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabular::gen_unconditional;

/// Allowed gap between the probe's censoring rate and the target.
pub const RATE_TOLERANCE: f64 = 0.02;
const LOG2_MIN_SCALE: f64 = -20.0;
const LOG2_MAX_SCALE: f64 = 20.0;
const MAX_BISECTIONS: usize = 200;

/// Result of fitting the global censoring-time scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensorCalibration {
    pub scale: f64,
    pub achieved_rate: f64,
    /// `|achieved - target|`.
    pub residual: f64,
    /// The target was out of reach and the scale sits on a boundary.
    pub clamped: bool,
    /// Bisection saw a rate that increased with the scale; `scale` is then 1.
    pub non_monotone: bool,
}

fn censored_fraction(events: &[f64], censors: &[f64], scale: f64) -> f64 {
    let censored = events
        .iter()
        .zip(censors)
        .filter(|(e, c)| scale * **c < **e)
        .count();
    censored as f64 / events.len() as f64
}

/// Find `s` with `mean(s * C_i < E_i)` within [`RATE_TOLERANCE`] of `target`
/// by bisection on `log2 s` over `[-20, 20]`.
pub fn calibrate_scale(events: &[f64], censors: &[f64], target: f64) -> Result<CensorCalibration> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::config(format!(
            "target censoring rate {target} outside (0, 1)"
        )));
    }
    if events.is_empty() || events.len() != censors.len() {
        return Err(Error::data(
            "calibration probe needs matching nonempty event/censor vectors",
        ));
    }
    let rate = |log2s: f64| censored_fraction(events, censors, log2s.exp2());
    let done = |log2s: f64, r: f64, clamped: bool| CensorCalibration {
        scale: log2s.exp2(),
        achieved_rate: r,
        residual: (r - target).abs(),
        clamped,
        non_monotone: false,
    };

    let (mut lo, mut hi) = (LOG2_MIN_SCALE, LOG2_MAX_SCALE);
    let (mut rate_lo, mut rate_hi) = (rate(lo), rate(hi));
    if rate_lo < target - RATE_TOLERANCE {
        return Ok(done(lo, rate_lo, true));
    }
    if rate_hi > target + RATE_TOLERANCE {
        return Ok(done(hi, rate_hi, true));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if r > rate_lo || r < rate_hi {
            let r1 = rate(0.0);
            return Ok(CensorCalibration {
                scale: 1.0,
                achieved_rate: r1,
                residual: (r1 - target).abs(),
                clamped: false,
                non_monotone: true,
            });
        }
        if (r - target).abs() <= RATE_TOLERANCE {
            return Ok(done(mid, r, false));
        }
        if r > target {
            lo = mid;
            rate_lo = r;
        } else {
            hi = mid;
            rate_hi = r;
        }
    }
    // a jump in the rate curve wider than the tolerance: report the closer side
    if (rate_lo - target).abs() <= (rate_hi - target).abs() {
        Ok(done(lo, rate_lo, true))
    } else {
        Ok(done(hi, rate_hi, true))
    }
}

/// Calibrate on a fresh `n_probe`-row probe drawn from `spec`.
pub fn calibrate_censoring_rate(
    spec: &DgpSpec,
    target: f64,
    rng: &RngStream,
    n_probe: usize,
) -> Result<CensorCalibration> {
    if n_probe == 0 {
        return Err(Error::config("calibration probe needs at least one row"));
    }
    let streams = TaskStreams::from_task_rng(rng);
    let x = gen_unconditional(&spec.covariates, n_probe, spec.dim, &streams.covariates)?;
    let e = event_times(spec, &x, &streams.event)?;
    let c = apply_censoring(spec, &x, &e, &streams.censor)?;
    calibrate_scale(&e, &c, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_events_uniform_censors(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut r = RngStream::new(21, 0);
        let e = vec![1.0; n];
        let c = (0..n).map(|_| 2.0 * r.uniform()).collect();
        (e, c)
    }

    #[test]
    fn analytic_rate_curve() {
        // rate(s) = min(1, 1 / (2 s)); 0.25 is reached at s = 2
        let (e, c) = unit_events_uniform_censors(20_000);
        let cal = calibrate_scale(&e, &c, 0.25).unwrap();
        assert!(cal.residual <= RATE_TOLERANCE);
        assert!((cal.scale - 2.0).abs() < 0.2, "scale {}", cal.scale);
        assert!(!cal.clamped);
    }

    #[test]
    fn uncalibrated_rate_is_a_fixed_point() {
        let (e, c) = unit_events_uniform_censors(5000);
        let current = censored_fraction(&e, &c, 1.0);
        let cal = calibrate_scale(&e, &c, current).unwrap();
        assert_eq!(cal.scale, 1.0);
    }

    #[test]
    fn symmetric_laws_give_unit_scale() {
        let mut r = RngStream::new(5, 5);
        let e: Vec<f64> = (0..20_000).map(|_| r.uniform()).collect();
        let c: Vec<f64> = (0..20_000).map(|_| r.uniform()).collect();
        let cal = calibrate_scale(&e, &c, 0.5).unwrap();
        assert!((cal.scale - 1.0).abs() < 0.1);
    }

    #[test]
    fn unreachable_target_clamps() {
        // every event time is zero: nothing can ever be censored
        let cal = calibrate_scale(&[0.0; 10], &[1.0; 10], 0.5).unwrap();
        assert!(cal.clamped);
        assert_eq!(cal.achieved_rate, 0.0);
    }

    #[test]
    fn invalid_target_rejected() {
        assert!(calibrate_scale(&[1.0], &[1.0], 0.0).is_err());
        assert!(calibrate_scale(&[1.0], &[1.0], 1.0).is_err());
    }
}
