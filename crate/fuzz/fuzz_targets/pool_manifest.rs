#![no_main]

use ddn::baselines::PoolManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = PoolManifest::from_json_bytes(data) {
        assert!(!m.base_checkpoint.contains('/'));
    }
});
