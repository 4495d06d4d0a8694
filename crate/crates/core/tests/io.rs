use std::path::{Path, PathBuf};

use survpfn::io::*;
use survpfn::prior::{generate_corpus, CensoringKind, PriorConfig, PriorFamily};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

#[test]
fn golden_jsonl_and_binary_agree() {
    let text = std::fs::read_to_string(golden("tasks.jsonl")).unwrap();
    let bytes = std::fs::read(golden("tasks.bin")).unwrap();
    let from_json = decode_tasks_jsonl(&text).unwrap();
    let from_bin = decode_tasks_binary(&bytes).unwrap();
    assert_eq!(from_json.len(), 1);
    let t = &from_json[0];
    assert_eq!(t.context.x.as_slice().unwrap(), &[0.5, -1.25]);
    assert_eq!(t.context.times, vec![2.0, 0.75]);
    assert_eq!(t.context.events, vec![true, false]);
    assert_eq!(t.query_latents.censor, vec![6.25]);
    assert_eq!(t.summary.family, PriorFamily::Mixture);
    assert_eq!(t.summary.censoring, CensoringKind::Uniform);
    assert!(t.summary.probe_censor_rate.is_nan());
    assert_eq!(t.summary.seed, 42);

    let b = &from_bin[0];
    assert_eq!(b.context, t.context);
    assert_eq!(b.context_latents, t.context_latents);
    assert_eq!(b.query_x, t.query_x);
    assert_eq!(b.query_latents, t.query_latents);
    assert_eq!(
        serde_json::to_string(&b.summary).unwrap(),
        serde_json::to_string(&t.summary).unwrap()
    );

    assert_eq!(encode_tasks_jsonl(&from_json), text);
    assert_eq!(encode_tasks_binary(&from_bin).unwrap(), bytes);
}

#[test]
fn generated_corpus_round_trips_both_formats() {
    let tasks = generate_corpus(&PriorConfig::default(), 5, 6, 40, 3).unwrap();
    let text = encode_tasks_jsonl(&tasks);
    let bytes = encode_tasks_binary(&tasks).unwrap();
    let a = decode_tasks_jsonl(&text).unwrap();
    let b = decode_tasks_binary(&bytes).unwrap();
    assert_eq!(encode_tasks_jsonl(&a), text);
    assert_eq!(encode_tasks_jsonl(&b), text);
    assert_eq!(encode_tasks_binary(&a).unwrap(), bytes);
}

#[test]
fn truncated_golden_binary_is_rejected() {
    let bytes = std::fs::read(golden("tasks.bin")).unwrap();
    for cut in 0..bytes.len() {
        assert!(decode_tasks_binary(&bytes[..cut]).is_err(), "cut {cut}");
    }
}
