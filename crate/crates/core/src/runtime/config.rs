//! Session configuration, loaded from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ik::IKConfig;
use crate::input::{EstimatorParams, SafetyLimits};
use crate::model::{bundled, ModelError, RobotModel};
use crate::post::{PostError, PostProcessConfig};
use crate::retarget::RetargetParams;

use super::executor::ExecutorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("tick_rate {tick_rate} Hz must be positive and at least input_rate {input_rate} Hz")]
    Rates { tick_rate: f64, input_rate: f64 },
    #[error("broadcast_rate must be positive, got {0}")]
    BroadcastRate(f64),
    #[error(transparent)]
    Post(#[from] PostError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("replay file {0} does not exist")]
    MissingReplay(PathBuf),
}

/// Which kind of input message the session consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Robot-space targets prepared by the client.
    #[default]
    MotionInput,
    /// Raw tracker bundles, retargeted on the server.
    TrackerBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub listen: String,
    /// Rate of `joint_frame` broadcasts, Hz.
    pub broadcast_rate: f64,
    /// Rate of `metrics_snapshot` broadcasts, Hz.
    pub metrics_rate: f64,
    /// Capacity of the outgoing frame queue; the oldest frame is dropped when full.
    pub output_queue: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7410".into(),
            broadcast_rate: 60.0,
            metrics_rate: 1.0,
            output_queue: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tick_rate: f64,
    /// Expected input rate, Hz.
    pub input_rate: f64,
    /// Model file; the bundled `nadia_like` model when absent.
    pub model: Option<PathBuf>,
    pub mode: InputMode,
    pub retargeting: RetargetParams,
    pub safety: SafetyLimits,
    pub estimator: EstimatorParams,
    pub ik: IKConfig,
    pub post: PostProcessConfig,
    pub executor: ExecutorConfig,
    pub network: NetworkConfig,
    /// Append every accepted raw input here.
    pub record: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate: 1000.0,
            input_rate: 60.0,
            model: None,
            mode: InputMode::default(),
            retargeting: RetargetParams::default(),
            safety: SafetyLimits::default(),
            estimator: EstimatorParams::default(),
            ik: IKConfig::default(),
            post: PostProcessConfig::default(),
            executor: ExecutorConfig::default(),
            network: NetworkConfig::default(),
            record: None,
            replay: None,
            metrics_out: None,
        }
    }
}

impl SessionConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: SessionConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model, &mut cfg.record, &mut cfg.replay, &mut cfg.metrics_out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.normalize()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Checks invariants and derives the per-module periods from the rates.
    pub fn normalize(mut self) -> Result<Self, ConfigError> {
        if !(self.tick_rate > 0.0 && self.input_rate > 0.0 && self.tick_rate >= self.input_rate) {
            return Err(ConfigError::Rates {
                tick_rate: self.tick_rate,
                input_rate: self.input_rate,
            });
        }
        if !(self.network.broadcast_rate > 0.0) {
            return Err(ConfigError::BroadcastRate(self.network.broadcast_rate));
        }
        self.post.validate()?;
        self.ik.dt = 1.0 / self.tick_rate;
        self.safety.input_period = 1.0 / self.input_rate;
        if let Some(p) = &self.replay {
            if !p.exists() {
                return Err(ConfigError::MissingReplay(p.clone()));
            }
        }
        Ok(self)
    }

    pub fn tick_period(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn load_model(&self) -> Result<RobotModel, ConfigError> {
        Ok(match &self.model {
            Some(p) => RobotModel::load(p)?,
            None => bundled::nadia_like(),
        })
    }
}
