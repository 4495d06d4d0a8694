mod common;

use common::{metric_gaps, oracle, random_metric_case, rows};
use proptest::prelude::*;
use survpfn::metrics::*;

const TOL: f64 = 1e-10;

#[test]
fn metrics_match_brute_force_on_random_datasets() {
    for seed in 0..40 {
        for (name, gap) in metric_gaps(seed, 50) {
            assert!(gap <= TOL, "seed {seed}, {name}: {gap:e}");
        }
    }
}

#[test]
fn ipcw_reduces_to_plain_brier_without_censoring() {
    let c = random_metric_case(3, 30);
    let ones = vec![true; c.train_times.len()];
    let ckm = censoring_km(&c.train_times, &ones).unwrap();
    assert!(ckm.times.is_empty());
    let ibs = integrated_brier(&c.surv, &c.grid, &c.times, &c.events, &ckm, c.tau).unwrap();
    let plain = oracle::ibs(
        &rows(&c.surv),
        &c.grid,
        &c.times,
        &c.events,
        &c.train_times,
        &ones,
        c.tau,
    );
    assert_eq!(ibs.value, plain);
}

#[test]
fn log_rank_two_cluster_oracle() {
    // t = 1: n = 6, n1 = 3, d = d1 = 3 -> O - E = 1.5, V = 3 * .25 * 3 / 5 = .45
    let s = log_rank(&[1.0; 3], &[true; 3], &[10.0; 3]).unwrap();
    assert!((s - 1.5 * 1.5 / 0.45).abs() < 1e-12);
    assert!((s - oracle::log_rank(&[1.0; 3], &[true; 3], &[10.0; 3])).abs() < 1e-12);
}

#[test]
fn mae_po_four_subject_case() {
    let t = [1.0, 2.0, 3.0, 4.0];
    let e = [true, false, true, false];
    let pred = [1.5, 2.5, 2.0, 5.0];
    let km = km_estimate(&t, &e).unwrap();
    let v = mae_po(&pred, &t, &e, &km).unwrap().unwrap();
    assert!((v - oracle::mae_po(&pred, &t, &e).unwrap()).abs() < 1e-10);
}

proptest! {
    #[test]
    fn ci_antisymmetric_without_risk_ties(
        data in prop::collection::vec((0.0f64..10.0, any::<bool>(), -5.0f64..5.0), 2..40)
    ) {
        let times: Vec<f64> = data.iter().map(|d| d.0).collect();
        let events: Vec<bool> = data.iter().map(|d| d.1).collect();
        let risk: Vec<f64> = data.iter().map(|d| d.2).collect();
        let mut sorted = risk.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let neg: Vec<f64> = risk.iter().map(|r| -r).collect();
        if let Some(c) = concordance_index(&risk, &times, &events).unwrap() {
            let d = concordance_index(&neg, &times, &events).unwrap().unwrap();
            prop_assert!((c + d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn km_product_limit_identity(
        data in prop::collection::vec((0u8..20, any::<bool>()), 1..60)
    ) {
        let times: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let events: Vec<bool> = data.iter().map(|d| d.1).collect();
        let km = km_estimate(&times, &events).unwrap();
        let mut s = 1.0;
        for j in 0..km.times.len() {
            let n = times.iter().filter(|&&x| x >= km.times[j]).count();
            prop_assert_eq!(n, km.at_risk[j]);
            s *= 1.0 - km.events[j] as f64 / n as f64;
            prop_assert!((km.survival[j] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn dcal_conserves_mass(
        data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..80)
    ) {
        let s: Vec<f64> = data.iter().map(|d| d.0).collect();
        let e: Vec<bool> = data.iter().map(|d| d.1).collect();
        let d = d_calibration(&s, &e).unwrap();
        prop_assert!((d.bin_mass.iter().sum::<f64>() - s.len() as f64).abs() < 1e-9);
    }
}
