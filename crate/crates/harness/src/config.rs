//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surge_core::dpgc::{Scope, DEFAULT_EPSILON, DEFAULT_ETA};
use surge_core::models::optim::OptimizerSpec;
use surge_core::models::Mode;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Beale,
    Classifier,
    Theory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mlp,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Moons,
    Bars,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub arch: ArchKind,
    /// MLP widths, input through classes.
    pub sizes: Vec<usize>,
    /// CNN conv output channels; the first conv stays full precision.
    pub channels: Vec<usize>,
    pub dataset: DatasetKind,
    pub samples: usize,
    pub noise: f64,
    /// Side length of `bars` images.
    pub image_size: usize,
    pub test_fraction: f64,
    pub data_seed: u64,
    /// Optional CSV of `feature..., label` rows replacing the synthetic set.
    pub data_csv: Option<PathBuf>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::Mlp,
            sizes: vec![2, 32, 32, 32, 2],
            channels: vec![4, 8, 8],
            dataset: DatasetKind::Moons,
            samples: 1000,
            noise: 0.15,
            image_size: 6,
            test_fraction: 0.2,
            data_seed: 0,
            data_csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub dims: Vec<usize>,
    pub samples: usize,
    /// Random moment models per dimension.
    pub models: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dims: vec![32],
            samples: 100_000,
            models: 1,
            seed: 0,
            resolution: surge_core::theory::DEFAULT_RESOLUTION,
        }
    }
}

/// η sweep over the compensated methods, plus constant-λ baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub etas: Vec<f64>,
    pub fixed_lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            etas: vec![0.001, 0.005, 0.01, 0.05, 0.1],
            fixed_lambdas: vec![1.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub methods: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Write a metric row every this many steps (and always on the last).
    pub log_every: usize,
    pub optimizer: OptimizerSpec,
    pub eta: f64,
    pub epsilon: f64,
    pub scope: Scope,
    pub surge_star: bool,
    /// Constant λ for compensated layers instead of the adaptive rule.
    pub fixed_lambda: Option<f64>,
    /// Toy model: width of the constant input and of the hidden layers.
    pub input_dim: usize,
    pub hidden: usize,
    /// 1-based binarizable layer whose input gradients are recorded.
    pub instrument_layer: Option<usize>,
    /// Parallel runs in `compare`; 0 uses every core.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub classifier: ClassifierConfig,
    pub theory: TheoryConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Beale,
            methods: vec![Mode::Fp, Mode::Ste, Mode::SteSurge, Mode::BiReal, Mode::BiRealSurge],
            seeds: (0..10).collect(),
            steps: 2000,
            log_every: 1,
            optimizer: OptimizerSpec::Adam { lr: 0.01 },
            eta: DEFAULT_ETA,
            epsilon: DEFAULT_EPSILON,
            scope: Scope::All,
            surge_star: false,
            fixed_lambda: None,
            input_dim: 8,
            hidden: 16,
            instrument_layer: None,
            workers: 0,
            output_dir: PathBuf::from("runs"),
            classifier: ClassifierConfig::default(),
            theory: TheoryConfig::default(),
            sweep: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(format!(
            "{name} must be a finite number > 0, got {v}"
        )))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(HarnessError::config(format!("{name} must be >= 1, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(HarnessError::config("methods must list at least one mode"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds must not be empty"));
        }
        if let Some(m) = self
            .methods
            .iter()
            .enumerate()
            .find_map(|(i, m)| self.methods[..i].contains(m).then_some(m))
        {
            return Err(HarnessError::config(format!("method {m} is listed twice")));
        }
        if let Some(s) = self
            .seeds
            .iter()
            .enumerate()
            .find_map(|(i, s)| self.seeds[..i].contains(s).then_some(s))
        {
            return Err(HarnessError::config(format!("seed {s} is listed twice")));
        }
        at_least_one("steps", self.steps)?;
        at_least_one("log_every", self.log_every)?;
        at_least_one("input_dim", self.input_dim)?;
        at_least_one("hidden", self.hidden)?;
        positive("optimizer.lr", self.optimizer.lr())?;
        positive("eta", self.eta)?;
        positive("epsilon", self.epsilon)?;
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(HarnessError::config(format!("fixed_lambda must be >= 0, got {l}")));
            }
        }
        if self.instrument_layer == Some(0) {
            return Err(HarnessError::config("instrument_layer is 1-based"));
        }
        let c = &self.classifier;
        at_least_one("classifier.samples", c.samples)?;
        if !(0.0..1.0).contains(&c.test_fraction) {
            return Err(HarnessError::config(format!(
                "classifier.test_fraction must be in [0, 1), got {}",
                c.test_fraction
            )));
        }
        if !(c.noise >= 0.0 && c.noise.is_finite()) {
            return Err(HarnessError::config(format!(
                "classifier.noise must be >= 0, got {}",
                c.noise
            )));
        }
        let t = &self.theory;
        if t.dims.is_empty() || t.dims.contains(&0) {
            return Err(HarnessError::config(format!(
                "theory.dims must be nonempty and >= 1, got {:?}",
                t.dims
            )));
        }
        at_least_one("theory.samples", t.samples)?;
        at_least_one("theory.models", t.models)?;
        if t.resolution < 3 {
            return Err(HarnessError::config(format!(
                "theory.resolution must be >= 3, got {}",
                t.resolution
            )));
        }
        if let Some(s) = &self.sweep {
            for &e in &s.etas {
                positive("sweep.etas", e)?;
            }
            for &l in &s.fixed_lambdas {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(HarnessError::config(format!(
                        "sweep.fixed_lambdas must be >= 0, got {l}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn surge_options(&self) -> surge_core::SurgeOptions {
        surge_core::SurgeOptions {
            eta: self.eta,
            epsilon: self.epsilon,
            scope: self.scope,
            one_by_one: self.surge_star,
            fixed_lambda: self.fixed_lambda,
        }
    }
}
