use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use crate::baselines::{
    build_default_pool, domain_attrs, save_pool, train_sdn, train_static, Ddn, EvalBatch, ModelPool, Predictor, Sdn,
};
use crate::domains::{
    generate_dataset, image_shape, partition, write_dataset, AttributeSchema, Dataset, DomainPartition, EmbeddingTable,
    FeatureBank, FrozenEncoder, FEATURE_DIM,
};
use crate::dynnet::{save_checkpoint, train_ddn, Checkpoint, Conditioning, DynamicNetwork, TrainHistory};
use crate::error::{Error, Result};
use crate::numerics::{argmax_rows, Sequential, Tensor};
use crate::seed;

/// A trained model of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Static(Sequential),
    Pool(ModelPool),
    Ddn(Ddn),
    Sdn(Sdn),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Static(_) => ModelKind::Static,
            TrainedModel::Pool(_) => ModelKind::Pool,
            TrainedModel::Ddn(_) => ModelKind::Ddn,
            TrainedModel::Sdn(_) => ModelKind::Sdn,
        }
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            TrainedModel::Static(m) => m,
            TrainedModel::Pool(m) => m,
            TrainedModel::Ddn(m) => m,
            TrainedModel::Sdn(m) => m,
        }
    }

    pub fn dynamic(&self) -> Option<&DynamicNetwork> {
        match self {
            TrainedModel::Ddn(m) => Some(&m.0),
            TrainedModel::Sdn(m) => Some(&m.0),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub tau: usize,
    pub label: String,
    pub attrs: BTreeMap<String, String>,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_domain: Vec<DomainAccuracy>,
    /// Distinct conditioning embeddings used (one per evaluated domain).
    pub embeddings_used: usize,
}

impl Evaluation {
    /// Sample-weighted mean of the per-domain accuracies.
    pub fn weighted_domain_mean(&self) -> f64 {
        let n: usize = self.per_domain.iter().map(|d| d.count).sum();
        self.per_domain.iter().map(|d| d.accuracy * d.count as f64).sum::<f64>() / n as f64
    }
}

/// Evaluation data grouped into domains, with one conditioning embedding per
/// group and the id each group has under the model's training partition.
pub struct EvalSet<'a> {
    pub data: &'a Dataset,
    pub bank: &'a FeatureBank,
    pub partition: &'a DomainPartition,
    pub embeddings: Vec<Tensor<f64>>,
    /// Training-partition domain id of each group, when it has one.
    pub routes: Vec<Option<usize>>,
}

const EVAL_CHUNK: usize = 256;

/// Accuracy of `model` on every group of `set`. Groups are scored on
/// separate threads.
pub fn evaluate(model: &dyn Predictor, set: &EvalSet<'_>) -> Result<Evaluation> {
    if set.embeddings.len() != set.partition.len() || set.routes.len() != set.partition.len() {
        return Err(Error::shape("evaluation set", set.partition.len(), set.embeddings.len()));
    }
    let results: Vec<Result<(usize, usize)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = set
            .partition
            .groups()
            .iter()
            .map(|g| {
                scope.spawn(move || {
                    let mut correct = 0;
                    for chunk in g.members.chunks(EVAL_CHUNK) {
                        let images = set.data.batch_images::<f64>(chunk);
                        let features: Vec<Tensor<f64>> = chunk.iter().map(|&i| set.bank.get(i).clone()).collect();
                        let batch = EvalBatch {
                            images: &images,
                            domain: set.routes[g.tau].unwrap_or(usize::MAX),
                            embedding: &set.embeddings[g.tau],
                            features: &features,
                        };
                        let logits = model.logits(&batch)?;
                        correct += argmax_rows(&logits)
                            .iter()
                            .zip(set.data.labels(chunk))
                            .filter(|(p, l)| **p == *l)
                            .count();
                    }
                    Ok((g.members.len(), correct))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    });
    let mut per_domain = Vec::with_capacity(results.len());
    let (mut total, mut total_correct) = (0, 0);
    for (tau, r) in results.into_iter().enumerate() {
        let (count, correct) = r?;
        total += count;
        total_correct += correct;
        per_domain.push(DomainAccuracy {
            tau,
            label: set.partition.label(&set.data.schema, tau),
            attrs: domain_attrs(&set.data.schema, set.partition, tau),
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        });
    }
    if total == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    Ok(Evaluation {
        accuracy: total_correct as f64 / total as f64,
        per_domain,
        embeddings_used: set.partition.len(),
    })
}

/// Training-partition id of every group of `eval`, matched by attribute tuple.
pub fn route_groups(train: &DomainPartition, eval: &DomainPartition, data: &Dataset) -> Vec<Option<usize>> {
    let same_keys = train.key_indices() == eval.key_indices();
    eval.groups()
        .iter()
        .map(|g| {
            same_keys
                .then(|| train.tau_of_attrs(&data.samples[g.members[0]].attrs))
                .flatten()
        })
        .collect()
}

/// Datasets, features, partitions and embeddings shared by every model of one experiment.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub val: Dataset,
    pub train_bank: FeatureBank,
    pub val_bank: FeatureBank,
    pub train_partition: DomainPartition,
    pub train_embeddings: EmbeddingTable,
}

impl Workbench {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let schema = AttributeSchema::driving();
        let train = generate_dataset(&schema, &config.train_data())?;
        let val = generate_dataset(&schema, &config.val_data())?;
        let encoder = FrozenEncoder::new();
        let train_bank = FeatureBank::compute(&train, &encoder)?;
        let val_bank = FeatureBank::compute(&val, &encoder)?;
        let train_partition = partition(&schema, &train.samples, &config.train_keys)?;
        let train_embeddings = EmbeddingTable::compute(&train_partition, &train_bank)?;
        Ok(Self {
            config: config.clone(),
            train,
            val,
            train_bank,
            val_bank,
            train_partition,
            train_embeddings,
        })
    }

    pub fn layers(&self) -> Result<Vec<crate::numerics::LayerSpec>> {
        self.config.arch.layers(self.config.dataset.classes)
    }

    pub fn train_static(&self) -> Result<(Sequential, TrainHistory)> {
        let mut rng = seed::rng(self.config.init_seed(ModelKind::Static));
        let mut net = Sequential::init(image_shape(), &self.layers()?, &mut rng)?;
        let members: Vec<usize> = (0..self.train.len()).collect();
        let history = train_static(&mut net, &self.train, &members, &self.config.base_train())?;
        Ok((net, history))
    }

    pub fn train_pool(&self, base: &Sequential) -> Result<ModelPool> {
        build_default_pool(base, &self.train, &self.train_partition, &self.config.finetune_train())
    }

    fn init_dynamic(&self, kind: ModelKind) -> Result<DynamicNetwork> {
        let mut rng = seed::rng(self.config.init_seed(kind));
        DynamicNetwork::init(image_shape(), &self.layers()?, self.config.arch.k, FEATURE_DIM, &mut rng)
    }

    pub fn train_ddn(&self) -> Result<(DynamicNetwork, TrainHistory)> {
        let mut net = self.init_dynamic(ModelKind::Ddn)?;
        let history = train_ddn(
            &mut net,
            &self.train,
            &self.train_partition,
            &self.train_embeddings,
            &self.config.base_train(),
        )?;
        Ok((net, history))
    }

    pub fn train_sdn(&self) -> Result<(DynamicNetwork, TrainHistory)> {
        let mut net = self.init_dynamic(ModelKind::Sdn)?;
        let history = train_sdn(&mut net, &self.train, &self.train_bank, &self.config.base_train())?;
        Ok((net, history))
    }

    /// Trains `kind`; a pool reuses `base` when given.
    pub fn train_model(&self, kind: ModelKind, base: Option<&Sequential>) -> Result<(TrainedModel, TrainHistory)> {
        Ok(match kind {
            ModelKind::Static => {
                let (net, h) = self.train_static()?;
                (TrainedModel::Static(net), h)
            }
            ModelKind::Pool => {
                let (base, h) = match base {
                    Some(b) => (b.clone(), TrainHistory::default()),
                    None => self.train_static()?,
                };
                (TrainedModel::Pool(self.train_pool(&base)?), h)
            }
            ModelKind::Ddn => {
                let (net, h) = self.train_ddn()?;
                (TrainedModel::Ddn(Ddn(net)), h)
            }
            ModelKind::Sdn => {
                let (net, h) = self.train_sdn()?;
                (TrainedModel::Sdn(Sdn(net)), h)
            }
        })
    }

    /// Evaluation groups of `data` under `keys`, with embeddings computed
    /// from the evaluated samples themselves.
    pub fn eval_partition(&self, data: &Dataset, keys: &[String]) -> Result<DomainPartition> {
        crate::domains::regroup(&data.schema, &self.config.train_keys, keys, &data.samples)
    }

    pub fn eval_set<'a>(&'a self, data: &'a Dataset, bank: &'a FeatureBank, part: &'a DomainPartition) -> Result<EvalSet<'a>> {
        let table = EmbeddingTable::compute(part, bank)?;
        Ok(EvalSet {
            data,
            bank,
            partition: part,
            embeddings: table.embeddings().iter().map(|e| e.vector.clone()).collect(),
            routes: route_groups(&self.train_partition, part, data),
        })
    }

    pub fn evaluate_split(&self, model: &dyn Predictor, validation: bool) -> Result<Evaluation> {
        let (data, bank) = if validation {
            (&self.val, &self.val_bank)
        } else {
            (&self.train, &self.train_bank)
        };
        let part = self.eval_partition(data, &self.config.train_keys)?;
        evaluate(model, &self.eval_set(data, bank, &part)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub model: ModelKind,
    /// Experts per dynamic layer, for dynamic models.
    pub k: Option<usize>,
    pub seed: u64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Validation accuracy per training-key domain.
    pub per_domain: Vec<DomainAccuracy>,
    pub total_params: usize,
    pub inference_params: usize,
    pub final_train_loss: Option<f64>,
    pub wall_clock_secs: f64,
}

impl MetricsRecord {
    /// The record with its wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

pub fn metrics_for(
    bench: &Workbench,
    model: &TrainedModel,
    history: &TrainHistory,
    started: Instant,
) -> Result<MetricsRecord> {
    let p = model.predictor();
    let train = bench.evaluate_split(p, false)?;
    let val = bench.evaluate_split(p, true)?;
    let kind = model.kind();
    Ok(MetricsRecord {
        run_id: bench.config.run_id(kind),
        model: kind,
        k: kind.is_dynamic().then_some(bench.config.arch.k),
        seed: bench.config.seed,
        train_accuracy: train.accuracy,
        val_accuracy: val.accuracy,
        per_domain: val.per_domain,
        total_params: p.total_params(),
        inference_params: p.inference_params(),
        final_train_loss: (!history.losses.is_empty()).then(|| history.tail_mean(50)),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Fails early when `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// File name a model's checkpoint is stored under inside the output directory.
pub fn checkpoint_name(config: &ExperimentConfig, kind: ModelKind) -> String {
    match kind {
        ModelKind::Pool => format!("{}/pool.json", config.run_id(kind)),
        _ => format!("{}.ckpt", config.run_id(kind)),
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match model {
        TrainedModel::Static(net) => save_checkpoint(path, &Checkpoint::Static(net.clone()))?,
        TrainedModel::Ddn(m) => save_checkpoint(
            path,
            &Checkpoint::Dynamic {
                net: m.0.clone(),
                conditioning: Conditioning::Domain,
            },
        )?,
        TrainedModel::Sdn(m) => save_checkpoint(
            path,
            &Checkpoint::Dynamic {
                net: m.0.clone(),
                conditioning: Conditioning::Sample,
            },
        )?,
        TrainedModel::Pool(pool) => {
            let dir = path.parent().ok_or_else(|| Error::InvalidArgument("pool path has no directory".into()))?;
            return save_pool(pool, dir);
        }
    }
    Ok(path.to_path_buf())
}

/// Loads any model kind from a `.ckpt` file or a pool manifest.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(TrainedModel::Pool(crate::baselines::load_pool(path)?));
    }
    Ok(match crate::dynnet::load_checkpoint(path)? {
        Checkpoint::Static(net) => TrainedModel::Static(net),
        Checkpoint::Dynamic {
            net,
            conditioning: Conditioning::Domain,
        } => TrainedModel::Ddn(Ddn(net)),
        Checkpoint::Dynamic {
            net,
            conditioning: Conditioning::Sample,
        } => TrainedModel::Sdn(Sdn(net)),
    })
}

/// Trains and evaluates every requested model, writing checkpoints, datasets
/// (when enabled) and metrics to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    let out = &config.output_dir;
    ensure_writable(out)?;
    let bench = Workbench::prepare(config)?;
    if config.persist_data {
        write_dataset(&bench.train, out, "train")?;
        write_dataset(&bench.val, out, "val")?;
    }
    let mut records = Vec::new();
    let mut base: Option<Sequential> = None;
    for &kind in &config.models {
        let started = Instant::now();
        log::info!("training {}", config.run_id(kind));
        let (model, history) = bench.train_model(kind, base.as_ref())?;
        if let TrainedModel::Static(net) = &model {
            base = Some(net.clone());
        }
        let path = out.join(checkpoint_name(config, kind));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_model(&model, &path)?;
        let record = metrics_for(&bench, &model, &history, started)?;
        log::info!("{}: val accuracy {:.4}", record.run_id, record.val_accuracy);
        let metrics_path = out.join(format!("{}.metrics.json", record.run_id));
        fs::write(&metrics_path, serde_json::to_vec_pretty(&record)?).map_err(|e| Error::io(&metrics_path, e))?;
        records.push(record);
    }
    let all = out.join("metrics.json");
    fs::write(&all, serde_json::to_vec_pretty(&records)?).map_err(|e| Error::io(&all, e))?;
    Ok(records)
}
