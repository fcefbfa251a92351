#![no_main]

use ddn::domains::DatasetManifest;
use libfuzzer_sys::fuzz_target;

// Input: u32 LE manifest length, manifest JSON, then the tensor blob.
fuzz_target!(|data: &[u8]| {
    let Some((len, rest)) = data.split_first_chunk::<4>() else {
        return;
    };
    let len = u32::from_le_bytes(*len) as usize;
    if len > rest.len() {
        return;
    }
    let (json, blob) = rest.split_at(len);
    if let Ok(manifest) = DatasetManifest::from_json_bytes(json) {
        let _ = manifest.decode(blob);
    }
});
