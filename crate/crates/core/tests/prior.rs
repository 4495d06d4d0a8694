use proptest::prelude::*;
use survpfn::prior::{
    generate_corpus, sample_dgp, sample_task, sample_task_with_streams, BernsteinMap, PriorConfig,
    TaskStreams,
};
use survpfn::rng::label;
use survpfn::tabular::{gen_unconditional, sample_mlp_spec, GeneratorRanges};
use survpfn::RngStream;

fn unconditional(seed: u64, n: usize, d: usize) -> ndarray::Array2<f64> {
    let rng = RngStream::new(seed, 0);
    let spec = sample_mlp_spec(&rng.derive(1), &GeneratorRanges::default()).unwrap();
    let d = d.min(spec.final_width());
    gen_unconditional(&spec, n, d, &rng.derive(2)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tabular_is_deterministic_and_finite(seed in any::<u64>(), n in 2usize..80, d in 1usize..8) {
        let a = unconditional(seed, n, d);
        let b = unconditional(seed, n, d);
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tabular_columns_are_standardized(seed in any::<u64>(), n in 8usize..80, d in 1usize..8) {
        let x = unconditional(seed, n, d);
        for col in x.columns() {
            if col.iter().all(|&v| v == 0.0) {
                continue; // a neuron that never varies is emitted as zeros
            }
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-9, "mean {m}");
            prop_assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
    }

    #[test]
    fn observed_pairs_are_min_and_indicator(seed in any::<u64>()) {
        let cfg = PriorConfig::default();
        let spec = sample_dgp(&RngStream::new(seed, label::SPEC), &cfg).unwrap();
        let task = sample_task(&spec, 40, 4, &RngStream::new(seed, label::TASK)).unwrap();
        let lat = &task.context_latents;
        for i in 0..task.n_context() {
            prop_assert_eq!(task.context.times[i].to_bits(), lat.event[i].min(lat.censor[i]).to_bits());
            prop_assert_eq!(task.context.events[i], lat.event[i] <= lat.censor[i]);
        }
    }

    #[test]
    fn censor_stream_never_moves_events(seed in any::<u64>(), other in any::<u64>()) {
        let cfg = PriorConfig::default();
        let spec = sample_dgp(&RngStream::new(seed, label::SPEC), &cfg).unwrap();
        let streams = TaskStreams::from_task_rng(&RngStream::new(seed, label::TASK));
        let perturbed = TaskStreams { censor: RngStream::new(other, 99), ..streams.clone() };
        let a = sample_task_with_streams(&spec, 30, 5, &streams).unwrap();
        let b = sample_task_with_streams(&spec, 30, 5, &perturbed).unwrap();
        for (x, y) in a.context_latents.event.iter().zip(&b.context_latents.event) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.query_latents.event.iter().zip(&b.query_latents.event) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bernstein_is_monotone(
        coefs in prop::collection::vec(-6.0f64..6.0, 1..24),
        u1 in 0.0f64..=1.0,
        u2 in 0.0f64..=1.0,
    ) {
        let map = BernsteinMap::new(coefs).unwrap();
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        prop_assert!(map.eval(lo).unwrap() <= map.eval(hi).unwrap());
    }
}

#[test]
fn ten_thousand_specs_emit_valid_times() {
    // small calibration probes keep this fast; the emitted times go through the full pipeline
    let cfg = PriorConfig {
        calibration_rows: 32,
        ..PriorConfig::default()
    };
    for seed in 0..10_000u64 {
        let spec = sample_dgp(&RngStream::new(seed, label::SPEC), &cfg).unwrap();
        let task = sample_task(&spec, 3, 1, &RngStream::new(seed, label::TASK)).unwrap();
        let all = task
            .context_latents
            .event
            .iter()
            .chain(&task.context_latents.censor)
            .chain(&task.query_latents.event)
            .chain(&task.query_latents.censor)
            .chain(&task.context.times);
        for t in all {
            assert!(t.is_finite() && *t >= 0.0, "seed {seed}: {t}");
        }
    }
}

#[test]
fn five_hundred_tasks_cover_every_censoring_decile() {
    let tasks = generate_corpus(&PriorConfig::default(), 2, 500, 256, 1).unwrap();
    let mut deciles = [0usize; 10];
    for t in &tasks {
        deciles[((t.context.censoring_rate() * 10.0) as usize).min(9)] += 1;
    }
    assert!(deciles.iter().all(|&c| c > 0), "{deciles:?}");
}
