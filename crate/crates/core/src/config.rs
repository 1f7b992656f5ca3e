//! Project configuration: one JSON document with a `version` field. Unknown
//! keys are rejected and missing keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddon::DecompositionConfig;
use crate::error::{ensure, Error, Result};
use crate::imaging::{DegradationSpec, StripeOrientation};
use crate::losses::LossWeights;
use crate::model::{Ablation, ModelConfig};
use crate::nn::BlockConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub crop_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Gaussian sigma draw range, 0-255 scale.
    pub sigma_range: [f64; 2],
    /// Stripe amplitude draw range, 0-255 scale.
    pub stripe_range: [f64; 2],
    pub stripe_orientation: StripeOrientation,
    /// Darkens the visible source by this gamma before training; for corpora
    /// that are not natively low-light.
    pub visible_darken_gamma: Option<f64>,
    /// Independent crops and noise draws per source pair.
    pub samples_per_pair: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            crop_size: 128,
            batch_size: 16,
            learning_rate: 1e-3,
            stage1_steps: 300,
            stage2_steps: 300,
            sigma_range: [5.0, 30.0],
            stripe_range: [10.0, 30.0],
            stripe_orientation: StripeOrientation::Vertical,
            visible_darken_gamma: None,
            samples_per_pair: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, window: usize) -> Result<()> {
        ensure!(self.crop_size > 0, Config, "crop_size must be positive");
        ensure!(
            window > 0 && self.crop_size.is_multiple_of(window),
            Config,
            "crop_size {} is not divisible by window_size {window}",
            self.crop_size
        );
        ensure!(self.batch_size > 0, Config, "batch_size must be positive");
        ensure!(
            self.samples_per_pair > 0,
            Config,
            "samples_per_pair must be positive"
        );
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Config,
            "learning_rate must be positive"
        );
        for (name, [lo, hi]) in [
            ("sigma_range", self.sigma_range),
            ("stripe_range", self.stripe_range),
        ] {
            ensure!(
                lo >= 0.0 && lo < hi && hi <= 30.0,
                Config,
                "{name} must satisfy 0 <= lo < hi <= 30, got [{lo}, {hi}]"
            );
        }
        if let Some(g) = self.visible_darken_gamma {
            ensure!(
                g >= 1.0 && g.is_finite(),
                Config,
                "visible_darken_gamma must be >= 1, got {g}"
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory with `ir/` and `vi/` subdirectories of aligned PNG pairs.
    pub train_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_dir: PathBuf::from("data/train"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl Paths {
    /// Resolves relative paths against `base`.
    pub fn resolved(&self, base: &Path) -> Paths {
        let r = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        Paths {
            train_dir: r(&self.train_dir),
            out_dir: r(&self.out_dir),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub version: u32,
    pub seed: u64,
    pub block: BlockConfig,
    pub decomposition: DecompositionConfig,
    pub ablation: Ablation,
    pub loss: LossWeights,
    pub train: TrainConfig,
    /// Defaults for `degrade`.
    pub degradation: DegradationSpec,
    pub paths: Paths,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            version: CONFIG_VERSION,
            seed: 0,
            block: BlockConfig::default(),
            decomposition: DecompositionConfig::default(),
            ablation: Ablation::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            degradation: DegradationSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl ProjectConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProjectConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            Config,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        self.model().validate()?;
        self.loss.validate()?;
        self.train.validate(self.block.window_size)?;
        self.degradation
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            block: self.block.clone(),
            decomposition: self.decomposition.clone(),
            ablation: self.ablation.clone(),
        }
    }

    /// SHA-256 of the compact JSON serialisation.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serialises")).into()
    }
}
