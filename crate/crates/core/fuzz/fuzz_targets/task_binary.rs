#![no_main]

use libfuzzer_sys::fuzz_target;
use survpfn::io::{decode_tasks_binary, encode_tasks_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(tasks) = decode_tasks_binary(data) {
        let again = encode_tasks_binary(&tasks).expect("decoded tasks encode");
        let back = decode_tasks_binary(&again).expect("re-encoded corpus decodes");
        assert_eq!(encode_tasks_binary(&back).unwrap(), again);
    }
});
