#![no_main]

use libfuzzer_sys::fuzz_target;
use survpfn::bench::{parse_dataset_csv, prepare_split, split, write_dataset_csv, Sidecar};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // a first line starting with `#cat:` names categorical columns
    let (sidecar, body) = match text.split_once('\n') {
        Some((head, rest)) if head.starts_with("#cat:") => (
            Sidecar {
                categorical: head[5..].split(',').map(|s| s.trim().to_owned()).collect(),
            },
            rest,
        ),
        _ => (Sidecar::default(), text),
    };
    let Ok(ds) = parse_dataset_csv("fuzz", body, &sidecar) else {
        return;
    };
    let out = write_dataset_csv(&ds).expect("parsed dataset serializes");
    let back = parse_dataset_csv("fuzz", &out, &ds.sidecar()).expect("written dataset parses");
    assert_eq!(write_dataset_csv(&back).unwrap(), out);
    if ds.len() >= 2 {
        if let Ok(s) = split(ds.len(), 0.5, 0) {
            let _ = prepare_split(&ds, &s);
        }
    }
});
