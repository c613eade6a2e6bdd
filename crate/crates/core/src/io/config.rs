use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::BatchConfig;
use crate::error::{Error, Result};
use crate::incremental::WindowConfig;
use crate::init::InitConfig;
use crate::model::{DEFAULT_EPSILON, DEFAULT_VOLUME};
use crate::scene::{IcpConfig, SynthConfig};

pub const SEED_ENV: &str = "JRMPC_SEED";

/// Everything a run needs. Every key is optional; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// When set, overrides the seeds of all sections.
    pub seed: Option<u64>,
    /// Volume of the uniform outlier component, in normalized units.
    pub volume: f64,
    /// Variance floor is `epsilon^2`, in normalized units.
    pub epsilon: f64,
    /// Rescale inputs to unit bounding-box diameter before registering.
    pub normalize: bool,
    pub batch: BatchConfig,
    pub init: InitConfig,
    pub synth: SynthConfig,
    pub window: WindowConfig,
    pub icp: IcpConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: None,
            volume: DEFAULT_VOLUME,
            epsilon: DEFAULT_EPSILON,
            normalize: true,
            batch: BatchConfig::default(),
            init: InitConfig::default(),
            synth: SynthConfig::default(),
            window: WindowConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.finish(std::env::var(SEED_ENV).ok().as_deref())
    }

    /// Applies the seed override, pushes the seed into every section and
    /// validates.
    pub fn finish(mut self, env_seed: Option<&str>) -> Result<Self> {
        if let Some(s) = env_seed {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
            self.seed = Some(seed);
        }
        if let Some(seed) = self.seed {
            self.init.seed = seed;
            self.synth.seed = seed;
            self.window.front_init.seed = seed;
            self.window.back_init.seed = seed;
            self.window.incremental.seed = seed;
        }
        self.window.volume = self.volume;
        self.window.epsilon = self.epsilon;
        self.validate()?;
        Ok(self)
    }

    /// Seed in effect for initialization.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.init.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return Err(Error::Config(format!("volume must be > 0, got {}", self.volume)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        self.batch.validate()?;
        self.init.validate()?;
        self.synth.validate()?;
        self.window.validate()
    }
}

/// Reads a TOML config; `JRMPC_SEED` in the environment overrides the seed.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Config::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
