#![no_main]

use ddn::dynnet::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(encode_checkpoint(&ckpt).expect("re-encode"), data);
    }
});
