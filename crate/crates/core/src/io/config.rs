use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{PairConfig, SamplerConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::field::MetricSpaceSpec;
use crate::schedule::ScheduleConfig;
use crate::score::{Architecture, ScoreFieldConfig};

/// Every knob of a run, read from a sectioned TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub space: MetricSpaceSpec,
    #[serde(default)]
    pub model: ScoreFieldConfig,
    #[serde(default)]
    pub pairs: PairConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SamplerConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.model.validate()?;
        if self.model.coord_dim != self.space.coord_dim() {
            return Err(Error::Config(format!(
                "model.coord_dim {} does not match {} coordinates of dimension {}",
                self.model.coord_dim,
                self.space,
                self.space.coord_dim()
            )));
        }
        let n = self.space.num_points();
        if self.pairs.n_context == 0 || self.pairs.n_query == 0 {
            return Err(Error::Config("pair counts must be at least 1".into()));
        }
        if self.pairs.n_context > n || self.pairs.n_query > n {
            return Err(Error::Config(format!(
                "pair counts {}/{} exceed the {n} points of {}",
                self.pairs.n_context, self.pairs.n_query, self.space
            )));
        }
        if self.model.architecture == Architecture::MlpMixer
            && self.model.n_tokens != self.pairs.n_context
        {
            return Err(Error::Config(format!(
                "mixer n_tokens {} must equal pairs.n_context {}",
                self.model.n_tokens, self.pairs.n_context
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if let Some(d) = self.train.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("train.ema_decay {d} outside [0, 1)")));
            }
        }
        let rho = self.sample.context_fraction;
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("sample.context_fraction {rho} outside (0, 1]")));
        }
        Ok(())
    }
}
