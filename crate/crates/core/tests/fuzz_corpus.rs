//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets use, so a corpus that stops parsing shows up in `cargo test`.

use std::fs;
use std::path::PathBuf;

use ddn::baselines::PoolManifest;
use ddn::domains::DatasetManifest;
use ddn::dynnet::{decode_checkpoint, encode_checkpoint};
use ddn::experiments::ExperimentConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn checkpoint_seeds_decode_and_reencode() {
    for (name, bytes) in seeds("checkpoint_decode") {
        let ckpt = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_checkpoint(&ckpt).unwrap(), bytes, "{name}");
    }
}

#[test]
fn dataset_seeds_decode() {
    for (name, bytes) in seeds("dataset_manifest") {
        let (len, rest) = bytes.split_first_chunk::<4>().unwrap();
        let (json, blob) = rest.split_at(u32::from_le_bytes(*len) as usize);
        let manifest = DatasetManifest::from_json_bytes(json).unwrap_or_else(|e| panic!("{name}: {e}"));
        let data = manifest.decode(blob).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!data.is_empty(), "{name}");
    }
}

#[test]
fn pool_seeds_parse() {
    for (name, bytes) in seeds("pool_manifest") {
        PoolManifest::from_json_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_seeds_parse() {
    for (name, bytes) in seeds("experiment_config") {
        let cfg = ExperimentConfig::from_json_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.arch.layers(cfg.dataset.classes).unwrap();
    }
}
