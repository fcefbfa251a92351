mod common;

use std::fs;

use common::tiny_config;
use ddn::domains::{read_dataset, EmbeddingTable};
use ddn::experiments::{
    checkpoint_name, eval_mismatch, eval_shuffle, export_domain_factors, export_image_factors, load_model,
    run_experiment, ExperimentConfig, ModelKind, Workbench,
};
use ddn::Error;

fn all_models(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.models = vec![ModelKind::Static, ModelKind::Pool, ModelKind::Ddn, ModelKind::Sdn];
    cfg.finetune = Some(ddn::dynnet::TrainConfig {
        steps: 5,
        ..cfg.train.clone()
    });
    cfg.dataset.train_per_domain = 16;
    cfg
}

#[test]
fn reruns_reproduce_every_metric_but_timing() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&all_models(tiny_config("det", 5, &dir.path().join("a")))).unwrap();
    let b = run_experiment(&all_models(tiny_config("det", 5, &dir.path().join("b")))).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.without_timing(), y.without_timing());
    }
    let c = run_experiment(&all_models(tiny_config("det", 6, &dir.path().join("c")))).unwrap();
    assert_ne!(a[0].without_timing(), c[0].without_timing());
}

#[test]
fn persisted_artifacts_recompute_the_reported_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = all_models(tiny_config("art", 2, dir.path()));
    let records = run_experiment(&cfg).unwrap();
    let bench = Workbench::prepare(&cfg).unwrap();
    assert_eq!(read_dataset(&dir.path().join("val.json")).unwrap(), bench.val);
    assert_eq!(read_dataset(&dir.path().join("train.json")).unwrap(), bench.train);
    for record in &records {
        let model = load_model(&dir.path().join(checkpoint_name(&cfg, record.model))).unwrap();
        assert_eq!(model.kind(), record.model);
        let val = bench.evaluate_split(model.predictor(), true).unwrap();
        assert_eq!(val.accuracy, record.val_accuracy);
        assert_eq!(val.per_domain, record.per_domain);
        let on_disk: ddn::experiments::MetricsRecord = serde_json::from_slice(
            &fs::read(dir.path().join(format!("{}.metrics.json", record.run_id))).unwrap(),
        )
        .unwrap();
        assert_eq!(&on_disk, record);
    }
}

#[test]
fn per_domain_accuracies_average_to_the_overall_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("avg", 3, dir.path());
    let bench = Workbench::prepare(&cfg).unwrap();
    let (net, _) = bench.train_static().unwrap();
    let eval = bench.evaluate_split(&net, true).unwrap();
    assert_eq!(eval.per_domain.len(), 12);
    assert!((eval.weighted_domain_mean() - eval.accuracy).abs() <= 1e-9);
}

#[test]
fn unwritable_output_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let mut cfg = tiny_config("io", 1, &blocker.join("out"));
    cfg.train.steps = 1_000_000_000;
    let started = std::time::Instant::now();
    assert!(matches!(run_experiment(&cfg), Err(Error::Io { .. })));
    assert!(started.elapsed().as_secs() < 5);
}

#[test]
fn config_requires_a_seed() {
    let err = ExperimentConfig::from_json_bytes(br#"{"name":"x","output_dir":"o"}"#).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    assert!(ExperimentConfig::from_json_bytes(br#"{"name":"x","seed":1,"output_dir":"o"}"#).is_ok());
}

#[test]
fn unknown_eval_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("keys", 1, dir.path());
    let bench = Workbench::prepare(&cfg).unwrap();
    let (net, _) = bench.train_ddn().unwrap();
    assert!(matches!(
        eval_mismatch(&bench, &net, &["season"]),
        Err(Error::UnknownAttribute(ref a)) if a == "season"
    ));
}

#[test]
fn mismatch_reference_uses_a_single_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("mm", 1, dir.path());
    let bench = Workbench::prepare(&cfg).unwrap();
    let (net, _) = bench.train_ddn().unwrap();
    let report = eval_mismatch(&bench, &net, &["scene"]).unwrap();
    assert_eq!(report.reference_embeddings, 1);
    for acc in [report.matched, report.mismatched, report.reference] {
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn shuffle_report_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("sh", 4, dir.path());
    let bench = Workbench::prepare(&cfg).unwrap();
    let (net, _) = bench.train_ddn().unwrap();
    let a = eval_shuffle(&bench, &net, 3).unwrap();
    assert_eq!(a, eval_shuffle(&bench, &net, 3).unwrap());
    assert_eq!(a.per_seed.len(), 3);
    assert!(a.worst <= a.average);
}

fn csv_lines(bytes: &[u8]) -> Vec<Vec<String>> {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn factor_export_has_one_row_per_domain_and_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("fx", 1, dir.path());
    let bench = Workbench::prepare(&cfg).unwrap();
    let (net, _) = bench.train_ddn().unwrap();
    let part = bench.eval_partition(&bench.val, &cfg.train_keys).unwrap();
    let table = EmbeddingTable::compute(&part, &bench.val_bank).unwrap();

    let mut out = Vec::new();
    export_domain_factors(&mut out, &net, &bench.val, &part, &table).unwrap();
    let rows = csv_lines(&out);
    let width = 1 + 3 + net.dynamic_layer_count() * net.k();
    assert_eq!(rows[0][..4], ["id", "time", "weather", "scene"]);
    assert_eq!(rows[0][4], "alpha_1_1");
    assert_eq!(rows.len(), 1 + part.len());
    for (tau, row) in rows[1..].iter().enumerate() {
        assert_eq!(row.len(), width);
        let alphas: Vec<f64> = row[4..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(alphas, net.factor_vector(&table.get(tau).unwrap().vector).unwrap());
    }

    let mut out = Vec::new();
    export_image_factors(&mut out, &net, &bench.val, &bench.val_bank).unwrap();
    let rows = csv_lines(&out);
    assert_eq!(rows.len(), 1 + bench.val.len());
    assert!(rows[1..].iter().all(|r| r.len() == width && !r[1].is_empty()));
}
