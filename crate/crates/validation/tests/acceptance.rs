//! Release criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use common::{
    aba_stream, max_relative_error, random_net, rng, stream_net, tiny_config, toy_net, uniform, SEGMENT, TOLERANCE,
};
use ddn::baselines::build_model_pool;
use ddn::domains::{image_shape, FEATURE_DIM};
use ddn::dynnet::{embedding_fingerprint, DynamicNetwork, TrainConfig};
use ddn::experiments::{
    checkpoint_name, domain_stream, eval_shuffle, load_model, save_model, ExperimentConfig, ModelKind, Workbench,
    DEFAULT_SHUFFLES,
};
use ddn::inference::{
    bench_throughput, stream_infer, BenchConfig, BenchMode, DetectorConfig, DomainDetector, EngineConfig, Observation,
    StreamEngine,
};
use ddn::numerics::{Sequential, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fold_equivalence() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (net, emb, input) = random_net(seed);
        let folded = net.fold(&emb, None).unwrap().forward(&input).unwrap();
        let dynamic = net.forward_dynamic(&emb, &input).unwrap();
        worst = worst.max(folded.max_abs_diff(&dynamic).unwrap());
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 30.0,
        format!("100 triples, max |diff| {worst:.2e} (<= 1e-10), {secs:.1}s (< 30s)"),
    )
}

fn gradient_oracle() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let net = toy_net(seed, 2, 4);
        let mut r = rng(100 + seed);
        let input = uniform(vec![3, 2, 6, 6], &mut r, 1.0);
        let groups = vec![(uniform(vec![4], &mut r, 1.0), vec![0, 1, 2])];
        worst = worst.max(max_relative_error(&net, &input, &[0, 2, 1], &groups));
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= TOLERANCE && secs < 60.0,
        format!("5 two-expert nets, max relative error {worst:.2e} (<= 1e-4), {secs:.1}s (< 60s)"),
    )
}

fn param_accounting(bench: &Workbench) -> Outcome {
    let specs = bench.layers().unwrap();
    let base = Sequential::init(image_shape(), &specs, &mut rng(1)).unwrap();
    let no_training = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let pool = build_model_pool(&base, &bench.train, &bench.train_partition, &no_training, 16).unwrap();
    let stored_ok = pool.total_param_count() == pool.stored_count() * base.param_count();
    let mut ok = stored_ok;
    let mut parts = vec![format!(
        "static {}, pool {} ({} stored)",
        base.param_count(),
        pool.total_param_count(),
        pool.stored_count()
    )];
    for k in [2, 4] {
        let net = DynamicNetwork::<f64>::init(image_shape(), &specs, k, FEATURE_DIM, &mut rng(2)).unwrap();
        let folded = net.fold(&Tensor::full(vec![FEATURE_DIM], 0.1), None).unwrap();
        ok &= folded.param_count() == base.param_count()
            && base.param_count() < net.param_count()
            && net.param_count() < pool.total_param_count();
        parts.push(format!("DDN-{k}x {} (folded {})", net.param_count(), folded.param_count()));
    }
    outcome(ok, parts.join(", "))
}

fn benchmark(benches: &[Workbench]) -> (Outcome, Outcome) {
    let started = Instant::now();
    let mut diffs = Vec::new();
    let mut lines = Vec::new();
    let mut first_ddn = None;
    for bench in benches {
        let (stat, _) = bench.train_static().unwrap();
        let (ddn, _) = bench.train_ddn().unwrap();
        let s = bench.evaluate_split(&stat, true).unwrap().accuracy;
        let d = bench
            .evaluate_split(&ddn::baselines::Ddn(ddn.clone()), true)
            .unwrap()
            .accuracy;
        diffs.push(100.0 * (d - s));
        lines.push(format!("seed {}: static {:.2} DDN {:.2}", bench.config.seed, 100.0 * s, 100.0 * d));
        first_ddn.get_or_insert(ddn);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    let margin = outcome(
        mean >= 2.0 && diffs.iter().all(|&d| d > 0.0) && secs <= 900.0,
        format!(
            "{}; mean DDN - static {mean:+.2} points (>= +2.00, every seed > 0), {secs:.0}s (<= 900s)",
            lines.join(", ")
        ),
    );
    let report = eval_shuffle(&benches[0], &first_ddn.unwrap(), DEFAULT_SHUFFLES).unwrap();
    let shuffle = outcome(
        report.average < report.normal,
        format!(
            "correct {:.2}, shuffled mean {:.2} over {} shuffles, worst {:.2}",
            100.0 * report.normal,
            100.0 * report.average,
            report.per_seed.len(),
            100.0 * report.worst
        ),
    );
    (margin, shuffle)
}

fn throughput(bench: &Workbench) -> Outcome {
    let mut cfg = bench.config.clone();
    cfg.arch.k = 4;
    let specs = cfg.arch.layers(cfg.dataset.classes).unwrap();
    let net = DynamicNetwork::<f64>::init(image_shape(), &specs, 4, FEATURE_DIM, &mut rng(cfg.init_seed(ModelKind::Ddn)))
        .unwrap()
        .cast::<f32>();
    let part = bench.eval_partition(&bench.val, &cfg.train_keys).unwrap();
    let stream = domain_stream(&bench.val, &bench.val_bank, &part, &[(0, 1000)]).unwrap();
    let run = |mode| {
        bench_throughput(&net, &stream.features, &stream.inputs, mode, BenchConfig::default()).unwrap()
    };
    let folded = run(BenchMode::FoldedReuse);
    let per_sample = run(BenchMode::PerSampleFold);
    let ratio = folded.fps_median / per_sample.fps_median;
    outcome(
        ratio > 1.1 && folded.fold_events == 1 && per_sample.fold_events == 1000,
        format!(
            "K=4, 1000 frames: folded {:.0} fps vs per-sample {:.0} fps, ratio {ratio:.2} (> 1.1), folds {} vs {}",
            folded.fps_median, per_sample.fps_median, folded.fold_events, per_sample.fold_events
        ),
    )
}

fn streaming() -> Outcome {
    let stream = aba_stream();
    let reference = stream_net();
    let mut detector = DomainDetector::new(DetectorConfig::default(), FEATURE_DIM, None).unwrap();
    let mut embeddings = HashMap::new();
    for f in &stream.features {
        if let Observation::DomainChanged(e) = detector.observe(f).unwrap() {
            embeddings.insert(embedding_fingerprint(&e.cast::<f32>()), e);
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (capacity, want) in [(2, 2), (1, 3)] {
        let cfg = EngineConfig {
            capacity,
            ..EngineConfig::default()
        };
        let mut engine = StreamEngine::new(reference.cast::<f32>(), cfg, None).unwrap();
        let out = stream_infer(&mut engine, &stream.features, &stream.inputs).unwrap();
        for frame in &out.frames {
            let folded = reference.fold(&embeddings[&frame.fingerprint], None).unwrap();
            let x = stream.inputs[frame.frame].cast::<f64>().reshape(vec![1, 3, 32, 32]).unwrap();
            let want = folded.forward(&x).unwrap();
            worst = worst.max(want.max_abs_diff(&frame.logits.cast()).unwrap());
        }
        let folds = engine.fold_count();
        ok &= folds == want && out.frames.len() == 3 * SEGMENT;
        parts.push(format!("capacity {capacity}: {folds} folds (want {want})"));
    }
    ok &= worst <= 1e-5;
    parts.push(format!("max logit diff vs f64 fold {worst:.1e} (<= 1e-5)"));
    outcome(ok, parts.join(", "))
}

fn checkpoints(dir: &Path) -> Outcome {
    let cfg = tiny_config("ckpt", 9, dir);
    let bench = Workbench::prepare(&cfg).unwrap();
    let (base, _) = bench.train_static().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [ModelKind::Static, ModelKind::Pool, ModelKind::Ddn, ModelKind::Sdn] {
        let (model, _) = bench.train_model(kind, Some(&base)).unwrap();
        let first = save_model(&model, &dir.join(checkpoint_name(&cfg, kind))).unwrap();
        let loaded = load_model(&first).unwrap();
        let again = save_model(&loaded, &dir.join("again").join(checkpoint_name(&cfg, kind))).unwrap();
        let same = loaded == model && read_tree(&first) == read_tree(&again);
        ok &= same;
        parts.push(format!("{} {}", kind.name(), if same { "exact" } else { "differs" }));
    }
    outcome(ok, parts.join(", "))
}

/// Bytes of a checkpoint file, or of every file next to a pool manifest.
fn read_tree(path: &Path) -> Vec<Vec<u8>> {
    if path.extension().is_some_and(|e| e == "json") {
        let mut files: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files.iter().map(|p| fs::read(p).unwrap()).collect()
    } else {
        vec![fs::read(path).unwrap()]
    }
}

fn main() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let benches: Vec<Workbench> = (0..3)
        .map(|seed| Workbench::prepare(&ExperimentConfig::new("acceptance", seed, dir.path())).unwrap())
        .collect();
    let (margin, shuffle) = benchmark(&benches);
    let results = [
        ("fold equivalence", fold_equivalence()),
        ("gradient oracle", gradient_oracle()),
        ("parameter accounting", param_accounting(&benches[0])),
        ("synthetic benchmark margin", margin),
        ("shuffled embeddings hurt", shuffle),
        ("folded reuse throughput", throughput(&benches[0])),
        ("streaming A-B-A reuse", streaming()),
        ("checkpoint round trip", checkpoints(&dir.path().join("ckpt"))),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (name, r) in &results {
        failed += usize::from(!r.pass);
        writeln!(out, "{} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail).unwrap();
    }
    writeln!(
        out,
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    )
    .unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
