//! Experiment configuration: a strict JSON document (unknown keys
//! rejected) with defaults filled on load. The fully resolved copy is
//! written next to the results so a run can be reproduced from its output
//! directory alone.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{mlp_shapes, LayerShape, Network};
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::objectives::{AdaptivePolicy, RegFamily, RegularizerSpec};
use crate::operators::{
    FourierMaskOperator, GaussianOperator, LinearOperator, MaskKind, NoiseModel,
};
use crate::training::{OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Idx,
    Cache,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    #[serde(default)]
    pub images_path: Option<String>,
    #[serde(default)]
    pub labels_path: Option<String>,
    #[serde(default)]
    pub cache_path: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Signal length for synthetic data.
    #[serde(default = "default_p")]
    pub p: usize,
    /// Nonzeros per synthetic signal.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
}

fn default_train_size() -> usize {
    500
}
fn default_test_size() -> usize {
    100
}
fn default_p() -> usize {
    784
}
fn default_k() -> usize {
    40
}
fn default_data_seed() -> u64 {
    7
}
fn default_split_seed() -> u64 {
    11
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKindConfig {
    Gaussian,
    Fourier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKindConfig {
    Cartesian1d,
    Random2dCenter,
}

impl From<MaskKindConfig> for MaskKind {
    fn from(m: MaskKindConfig) -> Self {
        match m {
            MaskKindConfig::Cartesian1d => MaskKind::Cartesian1d,
            MaskKindConfig::Random2dCenter => MaskKind::Random2dCenter,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub kind: OperatorKindConfig,
    /// Measurement count for the Gaussian operator.
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mask_kind: Option<MaskKindConfig>,
    #[serde(default)]
    pub subsample_ratio: Option<f64>,
    /// Noise norm bound.
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden/output widths; defaults to three layers of width `p`.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_batch_size() -> usize {
    50
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::Adam
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyConfig {
    None,
    SjaSj,
    FjaFj,
    Sja,
    Fja,
    Wd,
    Ws,
    Fj,
}

impl From<FamilyConfig> for RegFamily {
    fn from(f: FamilyConfig) -> Self {
        match f {
            FamilyConfig::None => RegFamily::None,
            FamilyConfig::SjaSj => RegFamily::SjaSj,
            FamilyConfig::FjaFj => RegFamily::FjaFj,
            FamilyConfig::Sja => RegFamily::Sja,
            FamilyConfig::Fja => RegFamily::Fja,
            FamilyConfig::Wd => RegFamily::Wd,
            FamilyConfig::Ws => RegFamily::Ws,
            FamilyConfig::Fj => RegFamily::Fj,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_adaptive_scale")]
    pub scale: f64,
}

fn default_adaptive_scale() -> f64 {
    20.0
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        AdaptiveSection {
            enabled: false,
            scale: 20.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    #[serde(default = "default_family")]
    pub family: FamilyConfig,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default)]
    pub adaptive: AdaptiveSection,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
    #[serde(default = "default_n_proj")]
    pub n_proj: usize,
}

fn default_family() -> FamilyConfig {
    FamilyConfig::None
}
fn default_step_fraction() -> f64 {
    1.0
}
fn default_power_iters() -> usize {
    3
}
fn default_n_proj() -> usize {
    1
}

impl Default for RegularizerSection {
    fn default() -> Self {
        RegularizerSection {
            family: FamilyConfig::None,
            lambda1: 0.0,
            lambda2: 0.0,
            adaptive: AdaptiveSection::default(),
            step_fraction: 1.0,
            power_iters: 3,
            n_proj: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "./results".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub operator: OperatorSection,
    #[serde(default)]
    pub network: NetworkSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub regularizer: RegularizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.operator.kind {
            OperatorKindConfig::Gaussian => {
                if self.operator.q.is_none() {
                    return Err(Error::Config("gaussian operator needs q".into()));
                }
            }
            OperatorKindConfig::Fourier => {
                if self.operator.mask_kind.is_none() || self.operator.subsample_ratio.is_none() {
                    return Err(Error::Config(
                        "fourier operator needs mask_kind and subsample_ratio".into(),
                    ));
                }
            }
        }
        if self.operator.eta < 0.0 {
            return Err(Error::Config("eta must be >= 0".into()));
        }
        self.regularizer_spec().validate()?;
        Ok(())
    }

    pub fn regularizer_spec(&self) -> RegularizerSpec {
        RegularizerSpec {
            family: self.regularizer.family.into(),
            lambda1: self.regularizer.lambda1,
            lambda2: self.regularizer.lambda2,
            adaptive: AdaptivePolicy {
                enabled: self.regularizer.adaptive.enabled,
                scale: self.regularizer.adaptive.scale,
            },
            step_fraction: self.regularizer.step_fraction,
            power_iters: self.regularizer.power_iters,
            n_proj: self.regularizer.n_proj,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: match self.training.optimizer {
                OptimizerConfig::Adam => OptimizerKind::Adam,
                OptimizerConfig::Sgd => OptimizerKind::Sgd,
            },
            learning_rate: self.training.learning_rate,
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            epsilon: self.training.epsilon,
            seed: self.training.seed,
            eval_every: self.training.eval_every,
            regularizer: self.regularizer_spec(),
        }
    }

    /// Build the dataset (with split applied) described by the config.
    pub fn build_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let mut ds = match d.source {
            DatasetSource::Synthetic => dataset::synthetic_sparse(
                d.train_size + d.test_size,
                d.p,
                d.k,
                d.data_seed,
            )?,
            DatasetSource::Idx => {
                let images = d.images_path.as_ref().ok_or_else(|| {
                    Error::Config("idx source needs images_path".into())
                })?;
                dataset::load_idx(
                    Path::new(images),
                    d.labels_path.as_deref().map(Path::new),
                    d.limit,
                )?
            }
            DatasetSource::Cache => {
                let cache = d.cache_path.as_ref().ok_or_else(|| {
                    Error::Config("cache source needs cache_path".into())
                })?;
                dataset::load_cache(Path::new(cache))?
            }
        };
        if ds.train_idx.is_empty() {
            ds.split(d.train_size, d.test_size, d.split_seed)?;
        }
        Ok(ds)
    }

    /// Build the forward operator for a signal of length `p`.
    pub fn build_operator(&self, p: usize) -> Result<Box<dyn LinearOperator>> {
        match self.operator.kind {
            OperatorKindConfig::Gaussian => {
                let q = self.operator.q.expect("validated");
                Ok(Box::new(GaussianOperator::sample(q, p, self.operator.seed)?))
            }
            OperatorKindConfig::Fourier => {
                let root = (p as f64).sqrt().round() as usize;
                if root * root != p {
                    return Err(Error::Config(format!(
                        "fourier operator needs a square image, signal length {p} is not"
                    )));
                }
                Ok(Box::new(FourierMaskOperator::new(
                    self.operator.mask_kind.expect("validated").into(),
                    root,
                    root,
                    self.operator.subsample_ratio.expect("validated"),
                    self.operator.seed,
                )?))
            }
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.operator.eta, self.operator.noise_seed)
    }

    /// Network architecture: input width equals the operator output; widths
    /// default to three layers of the signal length.
    pub fn network_shapes(&self, input_dim: usize, p: usize) -> Vec<LayerShape> {
        let widths = self
            .network
            .widths
            .clone()
            .unwrap_or_else(|| vec![p, p, p]);
        mlp_shapes(input_dim, &widths)
    }

    pub fn build_network(&self, input_dim: usize, p: usize) -> Result<Network> {
        let shapes = self.network_shapes(input_dim, p);
        if let Some(last) = shapes.last() {
            if last.out_dim != p {
                return Err(Error::Config(format!(
                    "network output width {} does not match signal length {p}",
                    last.out_dim
                )));
            }
        }
        Network::new(shapes, self.network.init_seed)
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "dataset": {"source": "synthetic", "p": 144, "k": 10,
                        "train_size": 20, "test_size": 5},
            "operator": {"kind": "gaussian", "q": 12},
            "training": {"epochs": 2}
        }"#
    }

    #[test]
    fn defaults_fill_and_resolve() {
        let cfg: ExperimentConfig = serde_json::from_str(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.training.batch_size, 50);
        assert_eq!(cfg.training.learning_rate, 1e-3);
        assert_eq!(cfg.regularizer.power_iters, 3);
        assert_eq!(cfg.output.dir, "./results");
        let ds = cfg.build_dataset().unwrap();
        assert_eq!(ds.train_idx.len(), 20);
        let op = cfg.build_operator(ds.signal_len()).unwrap();
        assert_eq!(op.out_dim(), 12);
        let net = cfg.build_network(op.out_dim(), 144).unwrap();
        assert_eq!(net.input_dim(), 12);
        assert_eq!(net.output_dim(), 144);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{
            "dataset": {"source": "synthetic", "regulariser": "typo"},
            "operator": {"kind": "gaussian", "q": 12},
            "training": {"epochs": 2}
        }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn resolved_copy_round_trips() {
        let cfg: ExperimentConfig = serde_json::from_str(minimal_json()).unwrap();
        let json = cfg.to_pretty_json().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.training.batch_size, cfg.training.batch_size);
        assert_eq!(back.dataset.train_size, cfg.dataset.train_size);
        // The resolved copy must parse under the same strict rules.
        back.validate().unwrap();
    }

    #[test]
    fn fourier_validation() {
        let json = r#"{
            "dataset": {"source": "synthetic", "p": 256},
            "operator": {"kind": "fourier"},
            "training": {"epochs": 1}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.validate().is_err());

        let json = r#"{
            "dataset": {"source": "synthetic", "p": 256, "train_size": 5, "test_size": 2},
            "operator": {"kind": "fourier", "mask_kind": "cartesian1d", "subsample_ratio": 0.25},
            "training": {"epochs": 1}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        let op = cfg.build_operator(256).unwrap();
        assert_eq!(op.out_dim(), 512);
        assert!(cfg.build_operator(200).is_err());
    }
}
