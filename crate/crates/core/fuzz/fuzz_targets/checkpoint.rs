#![no_main]

use libfuzzer_sys::fuzz_target;
use survpfn::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        let again = encode_checkpoint(&ck).expect("decoded checkpoint encodes");
        assert_eq!(again, data);
        let _ = ck.into_model();
    }
});
