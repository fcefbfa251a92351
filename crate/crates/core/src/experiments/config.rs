use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domains::{image_shape, CountOverride, DatasetConfig, SCENE, TIME, WEATHER};
use crate::dynnet::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{Activation, LayerSpec};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Static,
    Pool,
    Ddn,
    Sdn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Static => "static",
            ModelKind::Pool => "pool",
            ModelKind::Ddn => "ddn",
            ModelKind::Sdn => "sdn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(ModelKind::Static),
            "pool" => Ok(ModelKind::Pool),
            "ddn" => Ok(ModelKind::Ddn),
            "sdn" => Ok(ModelKind::Sdn),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, ModelKind::Ddn | ModelKind::Sdn)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    /// Per-tuple count overrides for the training split.
    #[serde(default)]
    pub overrides: Vec<CountOverride>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_domain: 600,
            val_per_domain: 200,
            overrides: Vec::new(),
        }
    }
}

/// Convolution widths of the backbone (each 3×3, stride 2, ReLU) followed by
/// a flatten and a linear classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub widths: Vec<usize>,
    /// Experts per dynamic layer.
    pub k: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 64],
            k: 2,
        }
    }
}

impl ArchSpec {
    pub fn layers(&self, classes: usize) -> Result<Vec<LayerSpec>> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("backbone widths must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let input = image_shape();
        let mut specs = Vec::new();
        let mut channels = input[0];
        for &w in &self.widths {
            specs.push(LayerSpec::Conv {
                in_channels: channels,
                out_channels: w,
                kernel: 3,
                stride: 2,
                pad: 1,
                act: Activation::Relu,
            });
            channels = w;
        }
        specs.push(LayerSpec::Flatten);
        let flat = crate::numerics::chain_shapes(&specs, &input)?[0];
        specs.push(LayerSpec::Dense {
            inputs: flat,
            outputs: classes,
            act: Activation::Identity,
        });
        Ok(specs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every dataset, initialisation and sampling stream derives from it.
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub arch: ArchSpec,
    /// Base recipe. Its `seed` field is replaced by one derived from `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    /// Pool finetune recipe; defaults to 200 steps at a tenth of the base rate.
    #[serde(default)]
    pub finetune: Option<TrainConfig>,
    #[serde(default = "default_keys")]
    pub train_keys: Vec<String>,
    #[serde(default = "default_keys")]
    pub eval_keys: Vec<String>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    pub output_dir: PathBuf,
    /// Write the generated datasets next to the metrics.
    #[serde(default = "default_true")]
    pub persist_data: bool,
}

fn default_keys() -> Vec<String> {
    vec![TIME.into(), WEATHER.into(), SCENE.into()]
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Static, ModelKind::Ddn]
}

fn default_true() -> bool {
    true
}

/// Seed streams derived from the master seed.
pub(crate) mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const VAL_DATA: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SGD: u64 = 4;
    pub const FINETUNE: u64 = 5;
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            seed,
            dataset: DatasetSpec::default(),
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            finetune: None,
            train_keys: default_keys(),
            eval_keys: default_keys(),
            models: default_models(),
            output_dir: output_dir.into(),
            persist_data: true,
        }
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.layers(self.dataset.classes)?;
        self.train.validate()?;
        if let Some(f) = &self.finetune {
            f.validate()?;
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no models requested".into()));
        }
        if self.dataset.train_per_domain == 0 && self.dataset.overrides.iter().all(|o| o.count == 0) {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        Ok(())
    }

    pub fn train_data(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.dataset.classes,
            per_domain: self.dataset.train_per_domain,
            overrides: self.dataset.overrides.clone(),
            seed: seed::derive(self.seed, streams::TRAIN_DATA),
        }
    }

    pub fn val_data(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.dataset.classes,
            per_domain: self.dataset.val_per_domain,
            overrides: Vec::new(),
            seed: seed::derive(self.seed, streams::VAL_DATA),
        }
    }

    pub fn base_train(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, streams::SGD),
            ..self.train.clone()
        }
    }

    pub fn finetune_train(&self) -> TrainConfig {
        let f = self.finetune.clone().unwrap_or_else(|| crate::baselines::finetune_config(&self.train));
        TrainConfig {
            seed: seed::derive(self.seed, streams::FINETUNE),
            ..f
        }
    }

    pub fn init_seed(&self, kind: ModelKind) -> u64 {
        seed::derive(seed::derive(self.seed, streams::INIT), kind as u64)
    }

    pub fn run_id(&self, kind: ModelKind) -> String {
        if kind.is_dynamic() {
            format!("{}-{}-{}x-s{}", self.name, kind.name(), self.arch.k, self.seed)
        } else {
            format!("{}-{}-s{}", self.name, kind.name(), self.seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::new("demo", 7, "/tmp/out");
        let json = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_bytes(&json).unwrap(), cfg);
    }

    #[test]
    fn seed_is_mandatory() {
        let json = br#"{"name":"x","output_dir":"/tmp/x"}"#;
        assert!(ExperimentConfig::from_json_bytes(json).is_err());
        let json = br#"{"name":"x","seed":3,"output_dir":"/tmp/x"}"#;
        let cfg = ExperimentConfig::from_json_bytes(json).unwrap();
        assert_eq!(cfg.arch, ArchSpec::default());
        assert_eq!(cfg.dataset.train_per_domain, 600);
    }

    #[test]
    fn default_arch_chains() {
        let specs = ArchSpec::default().layers(10).unwrap();
        assert_eq!(crate::numerics::chain_shapes(&specs, &image_shape()).unwrap(), vec![10]);
        assert!(ArchSpec { widths: vec![], k: 2 }.layers(10).is_err());
    }
}
