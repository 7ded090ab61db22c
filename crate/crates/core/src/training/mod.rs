//! Windowed training with Huber loss, hand-written backpropagation and Adam,
//! plus evaluation metrics and finite-difference gradient checks.

mod adam;
mod gradcheck;
mod loss;
mod windows;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, SplitFractions};
use crate::error::{EchoError, Result};
use crate::models::{persistence_baseline, ForecastModel, Trainable};
use crate::nn::Parameters;
use crate::numerics::{Matrix, RngStream};
use crate::par;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckReport, GradSlice};
pub use loss::{huber, huber_grad, huber_point, huber_point_grad};
pub use windows::{build_windows, Dataset, Split, WindowRef};

/// Windows per gradient work unit. Fixed so that summation order, and hence
/// every bit of the result, is independent of the thread count.
const GRAD_CHUNK: usize = 4;

const STREAM_SHUFFLE: u64 = 11;
const STREAM_DROPOUT: u64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub split: SplitFractions,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Reuse reservoir trajectories instead of replaying history per window.
    pub cache_trajectories: bool,
    /// Windows whose last row falls before this global index are skipped.
    pub washout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            huber_delta: 1.0,
            batch_size: 32,
            split: SplitFractions::default(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cache_trajectories: true,
            washout: 0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.split.violations();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.huber_delta > 0.0) {
            v.push(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            v.push(format!("eps must be positive, got {}", self.eps));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub num_params: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub initial_val: Metrics,
    pub epochs: Vec<EpochRecord>,
    /// Mean batch loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test: Metrics,
    /// Seconds spent in each epoch. Not serialized, so reports of
    /// identical runs compare byte for byte.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

/// Where per-window reservoir states come from.
enum StateSource {
    Cached(Vec<Matrix>),
    Replay,
}

impl StateSource {
    fn new(model: &ForecastModel, data: &Dataset, cache: bool) -> Result<Self> {
        Ok(if cache {
            StateSource::Cached(model.reservoir_trajectories(&data.series)?)
        } else {
            StateSource::Replay
        })
    }

    fn with<R>(
        &self,
        model: &ForecastModel,
        data: &Dataset,
        index: usize,
        f: impl FnOnce(&[&[f64]]) -> Result<R>,
    ) -> Result<R> {
        match self {
            StateSource::Cached(traj) => {
                let states: Vec<&[f64]> = traj.iter().map(|m| m.row(index)).collect();
                f(&states)
            }
            StateSource::Replay => {
                let owned = model.states_after(&data.series, index)?;
                let states: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
                f(&states)
            }
        }
    }
}

fn dropout_rng(seed: u64, epoch: usize, step: usize, window: usize) -> RngStream {
    RngStream::new(seed, STREAM_DROPOUT)
        .substream(epoch as u64)
        .substream(step as u64)
        .substream(window as u64)
}

/// Loss and summed gradient for a set of windows, processed in order.
#[allow(clippy::too_many_arguments)]
fn chunk_gradient(
    model: &ForecastModel,
    data: &Dataset,
    source: &StateSource,
    windows: &[WindowRef],
    delta: f64,
    scale: f64,
    train_mode: bool,
    rng_for: &(dyn Fn(&WindowRef) -> RngStream + Sync),
) -> Result<(Vec<f64>, Trainable)> {
    let (k, tau) = (model.lookback(), model.horizon());
    let mut grad = model.params.zeros_like();
    let mut losses = Vec::with_capacity(windows.len());
    for w in windows {
        let window = data.window(w, k);
        let target = data.target(w, tau);
        let mut rng = rng_for(w);
        let (pred, cache) = source.with(model, data, w.state, |states| {
            model.forward(&window, states, train_mode, &mut rng)
        })?;
        losses.push(huber(target.as_slice(), pred.as_slice(), delta)?);
        let mut d_pred = huber_grad(target.as_slice(), pred.as_slice(), delta)?;
        d_pred.iter_mut().for_each(|g| *g *= scale);
        let d_pred = Matrix::from_vec(tau, model.channels(), d_pred)?;
        model.backward(&cache, &d_pred, &mut grad);
    }
    Ok((losses, grad))
}

/// Mean Huber loss and its gradient over `windows` in eval mode. Work is
/// split into fixed chunks that run concurrently and are summed in index
/// order.
pub fn batch_gradient(
    model: &ForecastModel,
    data: &Dataset,
    windows: &[WindowRef],
    delta: f64,
) -> Result<(f64, Trainable)> {
    let source = StateSource::new(model, data, true)?;
    let (losses, grad) = batch_gradient_with(model, data, &source, windows, delta, false, &|_| {
        RngStream::new(0, 0)
    })?;
    Ok((losses.iter().sum::<f64>() / windows.len().max(1) as f64, grad))
}

fn batch_gradient_with(
    model: &ForecastModel,
    data: &Dataset,
    source: &StateSource,
    windows: &[WindowRef],
    delta: f64,
    train_mode: bool,
    rng_for: &(dyn Fn(&WindowRef) -> RngStream + Sync),
) -> Result<(Vec<f64>, Trainable)> {
    let scale = 1.0 / windows.len().max(1) as f64;
    let chunks: Vec<&[WindowRef]> = windows.chunks(GRAD_CHUNK).collect();
    let parts = par::map(&chunks, |c| {
        chunk_gradient(model, data, source, c, delta, scale, train_mode, rng_for)
    });
    let mut losses = Vec::with_capacity(windows.len());
    let mut total: Option<Trainable> = None;
    for part in parts {
        let (l, g) = part?;
        losses.extend(l);
        match &mut total {
            Some(t) => t.accumulate(&g),
            None => total = Some(g),
        }
    }
    Ok((losses, total.unwrap_or_else(|| model.params.zeros_like())))
}

/// Trains `model` in place and restores the parameters with the lowest
/// validation MSE (the initial parameters included).
pub fn train(model: &mut ForecastModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(EchoError::Config(v.join("; ")));
    }
    if data.channels() != model.channels() {
        return Err(EchoError::Shape {
            context: "dataset channels",
            expected: model.channels(),
            actual: data.channels(),
        });
    }
    let (k, tau) = (model.lookback(), model.horizon());
    let train_w = data.windows(Split::Train, k, tau, cfg.washout)?;
    let val_w = data.windows(Split::Val, k, tau, cfg.washout)?;
    let test_w = data.windows(Split::Test, k, tau, cfg.washout)?;
    for (name, w) in [("train", &train_w), ("validation", &val_w), ("test", &test_w)] {
        if w.is_empty() {
            return Err(EchoError::Input(format!("{name} split yields no windows")));
        }
    }

    let source = StateSource::new(model, data, cfg.cache_trajectories)?;
    let eval_source = match &source {
        StateSource::Cached(_) => None,
        StateSource::Replay => Some(StateSource::new(model, data, true)?),
    };
    let eval_states = eval_source.as_ref().unwrap_or(&source);

    let initial_val = eval_windows(model, data, eval_states, &val_w, None)?;
    let mut best = (0usize, initial_val.mse, model.params.clone());
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let shuffle_root = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut report = TrainReport {
        num_params: model.num_params(),
        train_windows: train_w.len(),
        val_windows: val_w.len(),
        test_windows: test_w.len(),
        initial_val,
        epochs: Vec::with_capacity(cfg.epochs),
        step_losses: Vec::new(),
        best_epoch: 0,
        best_val_mse: initial_val.mse,
        test: Metrics { mse: 0.0, mae: 0.0 },
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_w.len()).collect();
        order.shuffle(&mut shuffle_root.substream(epoch as u64));
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut idx = batch.to_vec();
            idx.sort_unstable();
            let windows: Vec<WindowRef> = idx.iter().map(|&i| train_w[i]).collect();
            let seed = cfg.seed;
            let (losses, grad) = batch_gradient_with(model, data, &source, &windows, cfg.huber_delta, true, &|w| {
                dropout_rng(seed, epoch, step, w.state)
            })?;
            let loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !loss.is_finite() {
                return Err(EchoError::Divergence(format!(
                    "non-finite loss in epoch {epoch}, batch {step}"
                )));
            }
            adam.update(&mut model.params, &grad);
            report.step_losses.push(loss);
            epoch_loss += loss * losses.len() as f64;
        }
        let val = eval_windows(model, data, eval_states, &val_w, None)?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_w.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
        });
        if val.mse < best.1 {
            best = (epoch, val.mse, model.params.clone());
        }
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    report.best_epoch = best.0;
    report.best_val_mse = best.1;
    model.params = best.2;
    report.test = eval_windows(model, data, eval_states, &test_w, None)?;
    Ok(report)
}

fn eval_windows(
    model: &ForecastModel,
    data: &Dataset,
    source: &StateSource,
    windows: &[WindowRef],
    denorm: Option<&Normalizer>,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(EchoError::Input("no windows to evaluate".into()));
    }
    let (k, tau) = (model.lookback(), model.horizon());
    let parts = par::map(windows, |w| {
        let window = data.window(w, k);
        let target = data.target(w, tau);
        let mut rng = RngStream::new(0, 0);
        let pred = source.with(model, data, w.state, |s| {
            Ok(model.forward(&window, s, false, &mut rng)?.0)
        })?;
        errors(&target, &pred, denorm)
    });
    sum_metrics(parts, windows.len() * tau * model.channels())
}

fn errors(target: &Matrix, pred: &Matrix, denorm: Option<&Normalizer>) -> Result<(f64, f64)> {
    let (t, p) = match denorm {
        Some(n) => (n.invert(target)?, n.invert(pred)?),
        None => (target.clone(), pred.clone()),
    };
    Ok(t.as_slice().iter().zip(p.as_slice()).fold((0.0, 0.0), |(s, a), (x, y)| {
        let e = y - x;
        (s + e * e, a + e.abs())
    }))
}

fn sum_metrics(parts: Vec<Result<(f64, f64)>>, count: usize) -> Result<Metrics> {
    let mut sse = 0.0;
    let mut sae = 0.0;
    for p in parts {
        let (s, a) = p?;
        sse += s;
        sae += a;
    }
    let n = count as f64;
    Ok(Metrics {
        mse: sse / n,
        mae: sae / n,
    })
}

/// MSE and MAE of `model` over every window of `split`, eval mode. With
/// `denorm`, errors are measured after inverting the normalization.
pub fn evaluate(
    model: &ForecastModel,
    data: &Dataset,
    split: Split,
    washout: usize,
    denorm: Option<&Normalizer>,
) -> Result<Metrics> {
    let windows = data.windows(split, model.lookback(), model.horizon(), washout)?;
    if windows.is_empty() {
        return Err(EchoError::Input("split yields no windows".into()));
    }
    let source = StateSource::new(model, data, true)?;
    eval_windows(model, data, &source, &windows, denorm)
}

/// Metrics of the persistence forecast over the same windows as [`evaluate`].
pub fn evaluate_persistence(
    data: &Dataset,
    split: Split,
    k: usize,
    tau: usize,
    washout: usize,
    denorm: Option<&Normalizer>,
) -> Result<Metrics> {
    let windows = data.windows(split, k, tau, washout)?;
    if windows.is_empty() {
        return Err(EchoError::Input("split yields no windows".into()));
    }
    let parts = windows
        .iter()
        .map(|w| errors(&data.target(w, tau), &persistence_baseline(&data.window(w, k), tau)?, denorm))
        .collect();
    sum_metrics(parts, windows.len() * tau * data.channels())
}

/// MSE and MAE between equally shaped prediction and target sets.
pub fn metrics(targets: &[Matrix], preds: &[Matrix]) -> Result<Metrics> {
    if targets.is_empty() {
        return Err(EchoError::Input("no predictions to score".into()));
    }
    crate::error::check_len("prediction count", targets.len(), preds.len())?;
    let mut count = 0;
    let mut parts = Vec::with_capacity(targets.len());
    for (t, p) in targets.iter().zip(preds) {
        crate::error::check_len("prediction size", t.as_slice().len(), p.as_slice().len())?;
        count += t.as_slice().len();
        parts.push(errors(t, p, None));
    }
    sum_metrics(parts, count)
}
