#![no_main]

use libfuzzer_sys::fuzz_target;
use survpfn::io::{decode_tasks_jsonl, encode_tasks_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(tasks) = decode_tasks_jsonl(text) {
        let again = encode_tasks_jsonl(&tasks);
        let back = decode_tasks_jsonl(&again).expect("re-encoded corpus decodes");
        assert_eq!(encode_tasks_jsonl(&back), again);
    }
});
