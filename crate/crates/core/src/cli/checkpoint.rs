//! Checkpoint container.
//!
//! A checkpoint is one JSON object:
//!
//! | key          | content                                                   |
//! |--------------|-----------------------------------------------------------|
//! | `format`     | always `"echoflow-checkpoint"`                            |
//! | `version`    | container version, currently 1                            |
//! | `experiment` | the experiment configuration that produced the model      |
//! | `channels`   | input channel names, in model order                       |
//! | `normalizer` | per-channel `mean` and `std` from the training split      |
//! | `model`      | configuration, frozen reservoirs and trainable parameters |
//!
//! Floats are written in shortest round-trip form, so a reloaded model is
//! bitwise identical to the saved one. Reservoir states are not stored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Normalizer;
use crate::error::{EchoError, Result};
use crate::models::ForecastModel;

pub const FORMAT: &str = "echoflow-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub experiment: ExperimentConfig,
    pub channels: Vec<String>,
    pub normalizer: Normalizer,
    pub model: ForecastModel,
}

impl Checkpoint {
    pub fn new(experiment: ExperimentConfig, channels: Vec<String>, normalizer: Normalizer, model: ForecastModel) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            experiment,
            channels,
            normalizer,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| EchoError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EchoError::Checkpoint(format!("not a checkpoint: {e}")))?;
        let format = value.get("format").and_then(|f| f.as_str());
        if format != Some(FORMAT) {
            return Err(EchoError::Checkpoint(format!(
                "expected format {FORMAT:?}, found {}",
                format.map_or("none".to_string(), |f| format!("{f:?}"))
            )));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(VERSION) => {}
            Some(v) => {
                return Err(EchoError::Checkpoint(format!(
                    "unsupported checkpoint version {v}, this build reads version {VERSION}"
                )))
            }
            None => return Err(EchoError::Checkpoint("missing checkpoint version".into())),
        }
        let mut ckpt: Checkpoint = serde_json::from_value(value)
            .map_err(|e| EchoError::Checkpoint(format!("corrupt version {VERSION} checkpoint: {e}")))?;
        if ckpt.channels.len() != ckpt.model.channels() || ckpt.normalizer.channels() != ckpt.model.channels() {
            return Err(EchoError::Checkpoint("channel count disagrees across sections".into()));
        }
        ckpt.model.ensure_state();
        Ok(ckpt)
    }
}
