use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;
use survpfn::diagnostics::*;
use survpfn::prior::{sample_dgp, sample_task, PriorConfig, TaskSample};
use survpfn::rng::label;
use survpfn::RngStream;

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut r = RngStream::new(seed, label::NOISE);
    (0..n).map(|_| r.normal()).collect()
}

fn column(v: Vec<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).unwrap()
}

#[test]
fn independent_times_have_small_cmi() {
    let x = column(normals(1, 2048));
    let cmi = estimate_cmi(
        &normals(2, 2048),
        &normals(3, 2048),
        x.view(),
        &RngStream::new(0, 0),
    )
    .unwrap();
    assert!(cmi < 0.03, "{cmi}");
}

#[test]
fn identical_times_have_large_cmi() {
    let x = column(normals(4, 2048));
    let e = normals(5, 2048);
    let cmi = estimate_cmi(&e, &e, x.view(), &RngStream::new(0, 0)).unwrap();
    assert!(cmi > 1.0, "{cmi}");
}

#[test]
fn cmi_calibration_under_independence() {
    let mut v: Vec<f64> = (0..100)
        .map(|k| {
            let x = Array2::from_shape_vec((1024, 3), normals(1000 + k, 3072)).unwrap();
            let e: Vec<f64> = normals(2000 + k, 1024)
                .iter()
                .zip(x.column(0))
                .map(|(z, a)| (z + a).exp())
                .collect();
            let c: Vec<f64> = normals(3000 + k, 1024)
                .iter()
                .zip(x.column(1))
                .map(|(z, a)| z - a)
                .collect();
            estimate_cmi(&e, &c, x.view(), &RngStream::new(k, 0)).unwrap()
        })
        .collect();
    v.sort_by(f64::total_cmp);
    assert!(v[50] < 0.05, "median {}", v[50]);
    assert!(v[95] < 0.15, "p95 {}", v[95]);
}

#[test]
fn constant_covariates_fall_back_to_unconditional() {
    let x = Array2::from_elem((256, 2), 3.0);
    let e = normals(6, 256);
    let c: Vec<f64> = e.iter().map(|v| v + 0.01).collect();
    let cmi = estimate_cmi(&e, &c, x.view(), &RngStream::new(0, 0)).unwrap();
    assert!(cmi > 1.5);
}

#[test]
fn too_few_rows_rejected() {
    let x = column(normals(1, 10));
    assert!(estimate_cmi(
        &normals(2, 10),
        &normals(3, 10),
        x.view(),
        &RngStream::new(0, 0)
    )
    .is_err());
}

#[test]
fn entropy_uniform_bins_independent_of_x() {
    let n = 4096;
    let x = column(normals(7, n));
    let mut r = RngStream::new(8, 0);
    let t: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
    let h = conditional_entropy(&t, x.view(), &RngStream::new(0, 0)).unwrap();
    assert!((h - 8f64.ln()).abs() < 0.1, "{h}");

    let noise = column(normals(9, n));
    let wide = concatenate(Axis(1), &[x.view(), noise.view()]).unwrap();
    let h2 = conditional_entropy(&t, wide.view(), &RngStream::new(0, 0)).unwrap();
    assert!((h - h2).abs() < 0.1, "{h} vs {h2}");
}

#[test]
fn entropy_of_cell_function_is_zero() {
    // four well separated clusters, T determined by the cluster
    let n = 512;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| {
        (i % 4) as f64 * 100.0 + (i % 7) as f64 * 1e-3
    });
    let t: Vec<f64> = (0..n).map(|i| (i % 4) as f64 + 1.0).collect();
    let h = conditional_entropy(&t, x.view(), &RngStream::new(0, 0)).unwrap();
    assert!(h.abs() < 1e-12, "{h}");
}

fn corpus(n: usize, rows: usize, cfg: &PriorConfig) -> Vec<TaskSample> {
    (0..n as u64)
        .map(|i| {
            let r = RngStream::new(21, label::TASK).derive(i);
            let spec = sample_dgp(&r.derive(label::SPEC), cfg).unwrap();
            sample_task(&spec, rows, 1, &r.derive(label::TASK)).unwrap()
        })
        .collect()
}

#[test]
fn bands_are_ordered_and_identical_tasks_collapse() {
    let tasks = corpus(12, 128, &PriorConfig::default());
    let grid: Vec<f64> = (0..=20).map(|j| j as f64 / 20.0).collect();
    let b = curve_bands(&tasks, &grid).unwrap();
    for band in [&b.event, &b.censor, &b.km] {
        let l = band.levels();
        for j in 0..grid.len() {
            for k in 1..5 {
                assert!(l[k - 1][j] <= l[k][j]);
            }
        }
    }
    let same = vec![tasks[0].clone(); 10];
    let b = curve_bands(&same, &grid).unwrap();
    for band in [&b.event, &b.censor, &b.km] {
        assert_eq!(band.p10, band.p90);
    }
    assert!(curve_bands(&tasks[..5], &grid).is_err());
}

#[test]
fn km_band_matches_event_band_without_censoring() {
    let mut tasks = corpus(10, 128, &PriorConfig::default());
    for t in &mut tasks {
        t.context_latents
            .censor
            .iter_mut()
            .for_each(|c| *c = f64::MAX);
        t.context.times = t.context_latents.event.clone();
        t.context.events = vec![true; t.context.times.len()];
    }
    let grid: Vec<f64> = (0..=10).map(|j| j as f64 / 10.0).collect();
    let b = curve_bands(&tasks, &grid).unwrap();
    for (k, e) in b.km.levels().iter().zip(b.event.levels()) {
        for j in 0..grid.len() {
            assert!((k[j] - e[j]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cmi_is_permutation_invariant(seed in 0u64..1000) {
        let n = 200;
        let x = Array2::from_shape_vec((n, 2), normals(seed, 2 * n)).unwrap();
        let e = normals(seed + 1, n);
        let c: Vec<f64> = normals(seed + 2, n).iter().zip(&e).map(|(a, b)| a + 0.5 * b).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        RngStream::new(seed, 9).shuffle(&mut perm);
        let xp = x.select(Axis(0), &perm);
        let ep: Vec<f64> = perm.iter().map(|&i| e[i]).collect();
        let cp: Vec<f64> = perm.iter().map(|&i| c[i]).collect();
        let rng = RngStream::new(3, 3);
        prop_assert_eq!(
            estimate_cmi(&e, &c, x.view(), &rng).unwrap(),
            estimate_cmi(&ep, &cp, xp.view(), &rng).unwrap()
        );
    }

    #[test]
    fn dispersion_scale_invariant(v in prop::collection::vec(0.01f64..100.0, 2..50), a in 0.001f64..1000.0) {
        let scaled: Vec<f64> = v.iter().map(|x| x * a).collect();
        let d1 = observed_dispersion(&v).unwrap();
        let d2 = observed_dispersion(&scaled).unwrap();
        if !d1.floored {
            prop_assert!((d1.log10_cv - d2.log10_cv).abs() < 1e-9);
        }
    }
}
