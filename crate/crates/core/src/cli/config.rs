//! Experiment configuration: one JSON file per reproducible run.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "out_dir": "runs/lorenz",
//!   "dataset": { "lorenz": { "steps": 3000, "channels": ["x"] } },
//!   "model": { "variant": "echo_solo", "lookback": 64, "horizon": 16 },
//!   "group_overrides": { "size_factor": 0.5 },
//!   "train": { "epochs": 50, "batch_size": 32 }
//! }
//! ```
//!
//! Unknown keys are rejected. Omitted keys take their defaults. The
//! top-level `seed` drives model initialization, shuffling and dropout and
//! replaces `train.seed`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, lorenz_generate, sine_generate, split, LoadOptions, LorenzParams, Normalizer, Series,
    SeriesSplits,
};
use crate::error::{EchoError, Result};
use crate::models::ModelConfig;
use crate::numerics::RngStream;
use crate::training::{Dataset, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        #[serde(default)]
        forward_fill: bool,
        /// Channel names to keep; all when absent.
        #[serde(default)]
        channels: Option<Vec<String>>,
        /// Keep only the first rows.
        #[serde(default)]
        max_rows: Option<usize>,
    },
    Lorenz {
        steps: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_init")]
        init: [f64; 3],
        #[serde(default)]
        params: LorenzParams,
        /// Leading steps integrated but not kept.
        #[serde(default)]
        discard: usize,
        #[serde(default)]
        channels: Option<Vec<String>>,
    },
    Sine {
        steps: usize,
        freqs: Vec<f64>,
        #[serde(default)]
        noise_std: f64,
    },
}

fn default_dt() -> f64 {
    0.01
}

fn default_init() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl DatasetSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            DatasetSpec::Csv { max_rows, .. } => {
                if *max_rows == Some(0) {
                    v.push("dataset.csv.max_rows must be at least 1".into());
                }
            }
            DatasetSpec::Lorenz { steps, dt, .. } => {
                if *steps == 0 {
                    v.push("dataset.lorenz.steps must be at least 1".into());
                }
                if !(*dt > 0.0) {
                    v.push(format!("dataset.lorenz.dt must be positive, got {dt}"));
                }
            }
            DatasetSpec::Sine {
                steps,
                freqs,
                noise_std,
            } => {
                if *steps == 0 {
                    v.push("dataset.sine.steps must be at least 1".into());
                }
                if freqs.is_empty() {
                    v.push("dataset.sine.freqs must not be empty".into());
                }
                if !(*noise_std >= 0.0) {
                    v.push(format!("dataset.sine.noise_std must be >= 0, got {noise_std}"));
                }
            }
        }
        v
    }

    /// Loads or generates the raw series. Relative CSV paths resolve
    /// against `base_dir`.
    pub fn load(&self, base_dir: &Path, seed: u64) -> Result<Series> {
        let series = match self {
            DatasetSpec::Csv {
                path,
                forward_fill,
                max_rows,
                ..
            } => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let s = load_csv(
                    &path,
                    LoadOptions {
                        forward_fill: *forward_fill,
                    },
                )?;
                match max_rows {
                    Some(n) if *n < s.len() => s.slice(0..*n),
                    _ => s,
                }
            }
            DatasetSpec::Lorenz {
                steps,
                dt,
                init,
                params,
                discard,
                ..
            } => {
                let s = lorenz_generate(steps + discard, *dt, *init, *params)?;
                s.slice(*discard..s.len())
            }
            DatasetSpec::Sine {
                steps,
                freqs,
                noise_std,
            } => sine_generate(*steps, freqs, *noise_std, &mut RngStream::new(seed, 0x5117e))?,
        };
        let channels = match self {
            DatasetSpec::Csv { channels, .. } | DatasetSpec::Lorenz { channels, .. } => channels.as_ref(),
            DatasetSpec::Sine { .. } => None,
        };
        match channels {
            None => Ok(series),
            Some(names) => {
                let idx = names
                    .iter()
                    .map(|n| {
                        series.names.iter().position(|c| c == n).ok_or_else(|| {
                            EchoError::Data(format!(
                                "channel {n:?} not found; available: {}",
                                series.names.join(", ")
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                series.select(&idx)
            }
        }
    }
}

/// Scales the default group before building the model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupOverrides {
    /// Multiplies every unit size.
    pub size_factor: Option<f64>,
    /// Keeps only the first units.
    pub units: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub group_overrides: GroupOverrides,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| EchoError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| EchoError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.dataset.violations();
        if let Some(f) = self.group_overrides.size_factor {
            if !(f > 0.0 && f.is_finite()) {
                v.push(format!("group_overrides.size_factor must be positive, got {f}"));
            }
        }
        if self.group_overrides.units == Some(0) {
            v.push("group_overrides.units must be at least 1".into());
        }
        v.extend(self.effective_model().violations().into_iter().map(|s| format!("model: {s}")));
        v.extend(self.train.violations().into_iter().map(|s| format!("train: {s}")));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EchoError::Config(v.join("; ")))
        }
    }

    /// Model configuration after group overrides.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if let Some(n) = self.group_overrides.units {
            if n > 0 {
                m.group = m.group.truncate(n);
            }
        }
        if let Some(f) = self.group_overrides.size_factor {
            if f > 0.0 && f.is_finite() {
                for u in &mut m.group.units {
                    u.size = ((u.size as f64 * f).round() as usize).max(1);
                }
            }
        }
        m
    }

    /// Training configuration with the experiment seed applied.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// A dataset loaded, split and normalized with training statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: SeriesSplits,
    pub normalizer: Normalizer,
    pub dataset: Dataset,
    pub names: Vec<String>,
}

pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Prepared> {
    let series = cfg.dataset.load(base_dir, cfg.seed)?;
    let model = cfg.effective_model();
    let raw = split(&series, cfg.train.split, model.lookback + model.horizon)?;
    let (norm, normalizer) = raw.normalized()?;
    Ok(Prepared {
        dataset: Dataset::from_splits(&norm),
        names: series.names.clone(),
        raw,
        normalizer,
    })
}
