//! Experiment configuration, read from JSON. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "method": "mac",
//!   "seed": 0,
//!   "output_dir": "runs/desk",
//!   "data": { "source": "synth", "n": 500, "validation": 200, "ambient_dim": 64,
//!             "intrinsic_dim": 2, "noise": 0.01, "seed": 0 },
//!   "architecture": {
//!     "layers": [ { "kind": "sigmoid", "units": 32 }, { "kind": "sigmoid", "units": 8 },
//!                 { "kind": "sigmoid", "units": 32 }, { "kind": "linear", "units": 64 } ],
//!     "placement": "all"
//!   },
//!   "schedule": { "max_stages": 5 },
//!   "max_seconds": 60
//! }
//! ```
//!
//! `data` may instead be `{ "source": "files", "train": "x.csv", "validation":
//! "v.bin", "format": "csv", "input_dim": 64 }`; relative paths are resolved
//! against the directory of the config file. The sections `schedule`,
//! `step`, `selection`, `sgd`, `cg`, `altopt` and `parallel` take the fields
//! of the corresponding library settings and default to them.

use std::path::{Path, PathBuf};

use macqp_core::baselines::{AltOptConfig, CgConfig, SgdConfig};
use macqp_core::mac::{PenaltySchedule, StepConfig};
use macqp_core::model::{LayerKind, LayerSpec};
use macqp_core::parallel::ParallelConfig;
use macqp_core::selection::SelectionConfig;
use serde::{Deserialize, Serialize};

use crate::dataset::DataFormat;
use crate::error::{config_err, io_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mac,
    MacSelect,
    Sgd,
    Cg,
    Altopt,
}

impl Method {
    pub fn is_mac(self) -> bool {
        matches!(self, Method::Mac | Method::MacSelect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSource {
    pub n: usize,
    /// Extra points drawn from the same manifold for the validation split.
    pub validation: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSource {
    fn default() -> Self {
        Self {
            n: 500,
            validation: 200,
            ambient_dim: 64,
            intrinsic_dim: 2,
            noise: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub train: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    /// Taken from the file extension when absent.
    #[serde(default)]
    pub format: Option<DataFormat>,
    /// Number of input columns; csv files otherwise split by header names.
    #[serde(default)]
    pub input_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synth(SynthSource),
    Files(FileSource),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synth(SynthSource::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKindName {
    Sigmoid,
    Linear,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub kind: LayerKindName,
    /// Output width: hidden units, or centers of an RBF layer.
    pub units: usize,
    /// Gaussian width of an RBF layer.
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub ridge: f64,
    /// Bias column of a dense layer; defaults to true.
    #[serde(default)]
    pub bias: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementName {
    /// Every hidden boundary.
    All,
    /// Only the narrowest hidden boundary (the earliest on ties).
    Coding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Placement {
    Named(PlacementName),
    Boundaries(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub layers: Vec<LayerConfig>,
    /// Defaults to `coding` for nets with RBF layers and `all` otherwise.
    #[serde(default)]
    pub placement: Option<Placement>,
}

impl Default for ArchitectureConfig {
    /// The 64-32-8-32-64 sigmoid autoencoder with a linear output layer.
    fn default() -> Self {
        let layer = |kind, units| LayerConfig {
            kind,
            units,
            width: None,
            ridge: 0.0,
            bias: None,
        };
        Self {
            layers: vec![
                layer(LayerKindName::Sigmoid, 32),
                layer(LayerKindName::Sigmoid, 8),
                layer(LayerKindName::Sigmoid, 32),
                layer(LayerKindName::Linear, 64),
            ],
            placement: None,
        }
    }
}

impl ArchitectureConfig {
    pub fn specs(&self, input_dim: usize) -> Result<Vec<LayerSpec>> {
        if self.layers.is_empty() {
            return config_err("the architecture has no layers");
        }
        let mut specs = Vec::with_capacity(self.layers.len());
        let mut width = input_dim;
        for (k, l) in self.layers.iter().enumerate() {
            let spec = match l.kind {
                LayerKindName::Sigmoid => LayerSpec::sigmoid(width, l.units).with_bias(l.bias.unwrap_or(true)),
                LayerKindName::Linear => LayerSpec::linear(width, l.units).with_bias(l.bias.unwrap_or(true)),
                LayerKindName::Rbf => {
                    if l.bias.is_some() {
                        return config_err(format!("layer {k}: RBF layers have no bias"));
                    }
                    LayerSpec::rbf(width, l.units, l.width.unwrap_or(1.0))
                }
            };
            if l.width.is_some() && l.kind != LayerKindName::Rbf {
                return config_err(format!("layer {k}: only RBF layers take a width"));
            }
            let spec = spec.with_ridge(l.ridge);
            spec.validate().map_err(|e| crate::HarnessError::Config(format!("layer {k}: {e}")))?;
            width = l.units;
            specs.push(spec);
        }
        Ok(specs)
    }

    pub fn placement(&self) -> Result<Vec<usize>> {
        let hidden = self.layers.len() - 1;
        let has_rbf = self.layers.iter().any(|l| l.kind == LayerKindName::Rbf);
        let default = if has_rbf { PlacementName::Coding } else { PlacementName::All };
        match self.placement.clone().unwrap_or(Placement::Named(default)) {
            Placement::Named(PlacementName::All) => Ok((1..=hidden).collect()),
            Placement::Named(PlacementName::Coding) => {
                if hidden == 0 {
                    return config_err("a single-layer net has no coding boundary");
                }
                let narrowest = (1..=hidden).min_by_key(|&b| (self.layers[b - 1].units, b)).expect("nonempty");
                Ok(vec![narrowest])
            }
            Placement::Boundaries(b) => {
                if b.iter().any(|&k| k == 0 || k > hidden) || b.windows(2).any(|w| w[0] >= w[1]) {
                    return config_err(format!("placement {b:?} must increase strictly within 1..={hidden}"));
                }
                Ok(b)
            }
        }
    }
}

/// How the auxiliary coordinates are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZInit {
    /// Forward pass of the initial net, a feasible start.
    Forward,
    /// Principal-component codes of the inputs; only for a single boundary.
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Seed of the weight initialization.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub architecture: ArchitectureConfig,
    /// Defaults to `pca` for a single coordinate boundary and `forward` otherwise.
    pub z_init: Option<ZInit>,
    pub schedule: PenaltySchedule,
    pub step: StepConfig,
    pub selection: SelectionConfig,
    pub sgd: SgdConfig,
    pub cg: CgConfig,
    pub altopt: AltOptConfig,
    pub parallel: ParallelConfig,
    /// One gradient step on the initial weights before training.
    pub warmup: bool,
    /// Training samples whose reconstructions are written as images.
    pub recon_samples: Vec<usize>,
    /// Rows and columns of the reconstruction images; a square when the
    /// output width is a perfect square, one row otherwise.
    pub image_shape: Option<[usize; 2]>,
    /// Write elapsed seconds to the trace; zeros make traces reproducible byte for byte.
    pub trace_seconds: bool,
    /// Wall-clock budget applied to whichever trainer runs.
    pub max_seconds: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Mac,
            seed: 0,
            output_dir: PathBuf::from("runs/experiment"),
            data: DataConfig::default(),
            architecture: ArchitectureConfig::default(),
            z_init: None,
            schedule: PenaltySchedule::default(),
            step: StepConfig::default(),
            selection: SelectionConfig::default(),
            sgd: SgdConfig::default(),
            cg: CgConfig::default(),
            altopt: AltOptConfig::default(),
            parallel: ParallelConfig::default(),
            warmup: true,
            recon_samples: vec![0, 1, 2],
            image_shape: None,
            trace_seconds: true,
            max_seconds: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file and resolves its relative data paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text).map_err(|e| crate::HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataConfig::Files(f) = &mut cfg.data {
            f.train = base.join(&f.train);
            if let Some(v) = &mut f.validation {
                *v = base.join(&*v);
            }
        }
        Ok(cfg)
    }

    /// Checks what can be checked before any data is read.
    pub fn validate(&self) -> Result<()> {
        if let DataConfig::Files(f) = &self.data {
            for p in std::iter::once(&f.train).chain(f.validation.iter()) {
                if !p.is_file() {
                    return config_err(format!("data file {} does not exist", p.display()));
                }
            }
        }
        let kinds: Vec<LayerKindName> = self.architecture.layers.iter().map(|l| l.kind).collect();
        if self.method == Method::Altopt
            && kinds
                != [
                    LayerKindName::Rbf,
                    LayerKindName::Linear,
                    LayerKindName::Rbf,
                    LayerKindName::Linear,
                ]
        {
            return config_err("altopt needs an rbf-linear-rbf-linear autoencoder");
        }
        self.architecture.placement()?;
        if let Some(s) = self.max_seconds {
            if !(s > 0.0) {
                return config_err("max_seconds must be positive");
            }
        }
        if let Some([r, c]) = self.image_shape {
            if r == 0 || c == 0 {
                return config_err("image_shape must be positive");
            }
        }
        if self.parallel.workers == 0 {
            return config_err("parallel.workers must be at least 1");
        }
        Ok(())
    }

    /// Step settings with this experiment's parallel settings filled in.
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            parallel: self.parallel.clone(),
            ..self.step.clone()
        }
    }

    /// Whether layer `k` of the architecture is a sigmoid layer.
    pub fn is_sigmoid(&self, k: usize) -> bool {
        self.architecture.layers.get(k).is_some_and(|l| l.kind == LayerKindName::Sigmoid)
    }
}

impl From<LayerKindName> for LayerKind {
    fn from(k: LayerKindName) -> Self {
        match k {
            LayerKindName::Sigmoid => LayerKind::SigmoidDense,
            LayerKindName::Linear => LayerKind::LinearDense,
            LayerKindName::Rbf => LayerKind::GaussianRbf,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"method": "cg"}"#).unwrap();
        assert_eq!(cfg.method, Method::Cg);
        assert_eq!(cfg.data, DataConfig::default());
        assert_eq!(cfg.architecture.placement().unwrap(), vec![1, 2, 3]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"method": "mac", "colour": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schedule": {"mu_zero": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"data": {"source": "synth", "size": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"step": {"parallel": {"workers": 2}}}"#).is_err());
    }

    #[test]
    fn data_sources_parse() {
        let cfg = ExperimentConfig::from_json(r#"{"data": {"source": "synth", "n": 40, "noise": 0}}"#).unwrap();
        match cfg.data {
            DataConfig::Synth(s) => assert_eq!((s.n, s.noise, s.ambient_dim), (40, 0.0, 64)),
            other => panic!("{other:?}"),
        }
        let cfg = ExperimentConfig::from_json(r#"{"data": {"source": "files", "train": "a.csv", "format": "csv"}}"#).unwrap();
        match cfg.data {
            DataConfig::Files(f) => assert_eq!(f.format, Some(DataFormat::Csv)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn placements_resolve() {
        let json = r#"{"architecture": {"layers": [
            {"kind": "rbf", "units": 30, "width": 0.5}, {"kind": "linear", "units": 2, "bias": false},
            {"kind": "rbf", "units": 20}, {"kind": "linear", "units": 64}]}}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.architecture.placement().unwrap(), vec![2]);
        let specs = cfg.architecture.specs(64).unwrap();
        assert_eq!(specs[0].rbf_width, 0.5);
        assert!(!specs[1].bias);
        let mut arch = cfg.architecture.clone();
        arch.placement = Some(Placement::Boundaries(vec![1, 3]));
        assert_eq!(arch.placement().unwrap(), vec![1, 3]);
        arch.placement = Some(Placement::Boundaries(vec![3, 1]));
        assert!(arch.placement().is_err());
        arch.placement = Some(Placement::Named(PlacementName::All));
        assert_eq!(arch.placement().unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn method_and_architecture_must_agree() {
        let cfg = ExperimentConfig::from_json(r#"{"method": "altopt"}"#).unwrap();
        assert!(cfg.validate().is_err());
        let json = r#"{"architecture": {"layers": [{"kind": "sigmoid", "units": 3, "width": 1.0}]}}"#;
        assert!(ExperimentConfig::from_json(json).unwrap().architecture.specs(4).is_err());
    }

    #[test]
    fn relative_data_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, r#"{"data": {"source": "files", "train": "train.csv"}}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        match &cfg.data {
            DataConfig::Files(f) => assert_eq!(f.train, dir.path().join("train.csv")),
            other => panic!("{other:?}"),
        }
        assert!(cfg.validate().is_err());
        std::fs::write(dir.path().join("train.csv"), "x0\n1\n").unwrap();
        assert!(cfg.validate().is_ok());
    }
}
