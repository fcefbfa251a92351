#![no_main]

use ddn::experiments::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ExperimentConfig::from_json_bytes(data) {
        let _ = cfg.arch.layers(cfg.dataset.classes);
        let _ = cfg.run_id(cfg.models[0]);
    }
});
