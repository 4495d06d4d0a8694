use survpfn::model::{decode_checkpoint, encode_checkpoint, ModelConfig};
use survpfn::prior::simple::SimplePriorConfig;
use survpfn::rng::label;
use survpfn::timewarp::TransformKind;
use survpfn::trainer::*;
use survpfn::RngStream;

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        steps: 4,
        tasks_per_step: 2,
        queries_per_task: 4,
        context_size: (8, 16),
        learning_rate: 3e-3,
        deterministic: true,
        checkpoint_every: 2,
        model: ModelConfig {
            d_max: 4,
            hidden: 16,
            layers: 1,
            heads: 2,
            bins: 16,
            ffn: 32,
            seed,
            ..ModelConfig::default()
        },
        prior: PriorChoice::Simple(SimplePriorConfig::default()),
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_same_trajectory() {
    let run = || {
        let mut t = Trainer::new(tiny(5)).unwrap();
        (0..4)
            .map(|_| t.train_step().unwrap().loss)
            .collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a, run());
    let mut other = Trainer::new(tiny(6)).unwrap();
    let b: Vec<f64> = (0..4).map(|_| other.train_step().unwrap().loss).collect();
    assert_ne!(a[3], b[3]);
}

#[test]
fn uniform_head_starts_at_log_bins() {
    for cfg in [
        tiny(1),
        TrainConfig {
            prior: PriorChoice::default(),
            ..tiny(2)
        },
    ] {
        let bins = cfg.model.bins as f64;
        let mut t = Trainer::new(cfg).unwrap();
        let r = t.train_step().unwrap();
        assert!(
            (r.loss - bins.ln()).abs() < 1e-9,
            "{} vs {}",
            r.loss,
            bins.ln()
        );
    }
}

#[test]
fn frozen_task_loss_decreases() {
    let mut t = Trainer::new(tiny(9)).unwrap();
    let tasks = t.sample_step_tasks(0).unwrap();
    let rng = t.step_rng(0);
    let (first, _) = t.train_on_tasks(&tasks, &rng).unwrap();
    let mut last = first;
    for _ in 0..50 {
        last = t.train_on_tasks(&tasks, &rng).unwrap().0;
        assert!(last.is_finite() && last >= 0.0);
    }
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn resume_reproduces_next_step() {
    let mut a = Trainer::new(tiny(3)).unwrap();
    a.train_step().unwrap();
    a.train_step().unwrap();
    let bytes = encode_checkpoint(&a.checkpoint()).unwrap();
    let expect = a.train_step().unwrap();
    let mut b = Trainer::resume(tiny(3), decode_checkpoint(&bytes).unwrap()).unwrap();
    assert_eq!(b.step, 2);
    let got = b.train_step().unwrap();
    assert_eq!(got.loss.to_bits(), expect.loss.to_bits());
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn transform_ignores_query_times() {
    let cfg = SimplePriorConfig::default();
    let mut task = PriorChoice::Simple(cfg)
        .sample(32, 8, &RngStream::new(4, label::TASK))
        .unwrap();
    for kind in [
        TransformKind::LogNormalToNormal,
        TransformKind::TimeToQuantile,
    ] {
        let before = fit_context_transform(kind, &task.context).unwrap();
        task.query_latents.event.iter_mut().for_each(|e| *e *= 1e3);
        task.query_latents
            .censor
            .iter_mut()
            .for_each(|c| *c += 17.0);
        assert_eq!(before, fit_context_transform(kind, &task.context).unwrap());
    }
}

#[test]
fn targets_select_latents_exactly() {
    let task = PriorChoice::default()
        .sample(64, 6, &RngStream::new(8, label::TASK))
        .unwrap();
    let mut r = RngStream::new(0, 0);
    for schedule in [
        QuerySchedule::EventOnly,
        QuerySchedule::Both,
        QuerySchedule::Random,
    ] {
        for t in make_query_targets(schedule, &task, &mut r) {
            let want = if t.indicator {
                task.query_latents.event[t.query]
            } else {
                task.query_latents.censor[t.query]
            };
            assert_eq!(t.time.to_bits(), want.to_bits());
        }
    }
}

#[test]
fn run_writes_log_and_rotates_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(11);
    cfg.steps = 6;
    cfg.checkpoint_every = 1;
    cfg.keep_last = 3;
    let mut t = Trainer::new(cfg).unwrap();
    let out = run_training(&mut t, dir.path(), &[]).unwrap();
    assert_eq!(out.final_step, 6);
    assert_eq!(out.checkpoints.len(), 3);
    assert!(out.checkpoints.iter().all(|p| p.exists()));
    assert!(!checkpoint_path(dir.path(), 1).exists());
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[5]["step"], 5);
    assert_eq!(lines[0]["wall_ms"], 0);
}

#[test]
fn weighted_selection_example() {
    assert!((weighted_score(&[(4, 0.2), (16, 0.1)]) - 0.13333333333333333).abs() < 1e-15);
    assert_eq!(weighted_score(&[(9, 0.25)]), 0.25);
}
