//! Deployment side: fold cache, streaming domain-change detection and the
//! folded-reuse versus per-sample-fold throughput benchmark.

mod bench;
mod cache;
mod detector;
mod engine;

pub use bench::{bench_throughput, BenchConfig, BenchMode, BenchReport, HostInfo};
pub use cache::{CacheEntry, FoldCache, DEFAULT_CAPACITY};
pub use detector::{
    cosine_distance, DetectorConfig, DomainDetector, Observation, DEFAULT_CONSECUTIVE, DEFAULT_RHO, DEFAULT_WINDOW,
};
pub use engine::{
    stream_infer, EngineConfig, EventKind, FrameOutput, Snapshot, StreamEngine, StreamEvent, StreamOutput,
};
