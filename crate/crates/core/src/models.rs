//! End-to-end forecasters.
//!
//! `EchoSolo` flattens the fused memory tokens into a linear head.
//! `EchoMlp` prepends the fused tokens to the adapted window tokens and runs
//! a two-layer feedforward base model before a per-step head. Both finish
//! with the restoration decoder.
//!
//! Reservoirs are driven by a frozen copy of the embedding encoder taken at
//! construction, so their trajectories depend only on the data. The
//! trainable encoder feeds the window stream.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingEncoder, RestorationDecoder};
use crate::error::{EchoError, Result};
use crate::fusion::{CrossAttention, FusionConfig, StackCache};
use crate::group::{default_group, GroupConfig, MlpReadout, ReservoirGroup};
use crate::nn::{Linear, Parameters};
use crate::numerics::{axpy, Matrix, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    EchoSolo,
    EchoMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub embedding_enabled: bool,
    pub group: GroupConfig,
    pub fusion: FusionConfig,
    pub lookback: usize,
    pub horizon: usize,
    pub base_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::EchoSolo,
            embedding_dim: 8,
            embedding_enabled: true,
            group: default_group(),
            fusion: FusionConfig::default(),
            lookback: 64,
            horizon: 16,
            base_hidden: 256,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.group.violations();
        v.extend(self.fusion.violations());
        if self.embedding_enabled && self.embedding_dim == 0 {
            v.push("embedding_dim must be at least 1".into());
        }
        if self.lookback == 0 {
            v.push("lookback must be at least 1".into());
        }
        if self.horizon == 0 {
            v.push("horizon must be at least 1".into());
        }
        if self.variant == Variant::EchoMlp && self.base_hidden == 0 {
            v.push("base_hidden must be at least 1".into());
        }
        v
    }

    /// Width of one embedded step for `channels` inputs.
    pub fn step_width(&self, channels: usize) -> usize {
        if self.embedding_enabled {
            self.embedding_dim * channels
        } else {
            channels
        }
    }
}

/// Two-layer feedforward base model over the flattened token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub hidden: Linear,
    pub output: Linear,
    pub horizon: usize,
}

impl BaseModel {
    pub fn new(tokens: usize, d_model: usize, hidden: usize, horizon: usize, rng: &mut RngStream) -> Self {
        Self {
            hidden: Linear::new(hidden, tokens * d_model, rng),
            output: Linear::new(horizon * d_model, hidden, rng),
            horizon,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
            horizon: self.horizon,
        }
    }

    /// Maps `(k + L) × d` tokens to `τ × d` tokens.
    pub fn forward(&self, tokens: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        if tokens.as_slice().len() != self.hidden.in_dim() {
            return Err(EchoError::Shape {
                context: "base model input",
                expected: self.hidden.in_dim(),
                actual: tokens.as_slice().len(),
            });
        }
        let mut hid = self.hidden.forward(tokens.as_slice());
        hid.iter_mut().for_each(|x| *x = x.max(0.0));
        let out = self.output.forward(&hid);
        let d = out.len() / self.horizon;
        Ok((Matrix::from_vec(self.horizon, d, out)?, hid))
    }

    fn backward(&self, tokens: &Matrix, hid: &[f64], d_out: &Matrix, grad: &mut BaseModel) -> Matrix {
        let mut d_hid = self.output.backward(hid, d_out.as_slice(), &mut grad.output);
        for (g, &h) in d_hid.iter_mut().zip(hid) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let d_in = self.hidden.backward(tokens.as_slice(), &d_hid, &mut grad.hidden);
        Matrix::from_vec(tokens.rows(), tokens.cols(), d_in).expect("shape preserved")
    }
}

impl Parameters for BaseModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.hidden.tensors();
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        v
    }
}

/// Every tensor that learns. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainable {
    pub encoder: EmbeddingEncoder,
    pub readouts: Vec<MlpReadout>,
    pub combiner: CrossAttention,
    pub base: Option<BaseModel>,
    pub head: Linear,
    pub decoder: RestorationDecoder,
}

/// Named parameter groups, used for reporting.
pub const PARAM_GROUPS: [&str; 6] = ["encoder", "readouts", "combiner", "base", "head", "decoder"];

impl Trainable {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            readouts: self.readouts.iter().map(MlpReadout::zeros_like).collect(),
            combiner: self.combiner.zeros_like(),
            base: self.base.as_ref().map(BaseModel::zeros_like),
            head: self.head.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    /// Tensors grouped as in [`PARAM_GROUPS`].
    pub fn groups(&self) -> Vec<(&'static str, Vec<&[f64]>)> {
        vec![
            ("encoder", self.encoder.tensors()),
            ("readouts", self.readouts.iter().flat_map(|r| r.tensors()).collect()),
            ("combiner", self.combiner.tensors()),
            ("base", self.base.as_ref().map(|b| b.tensors()).unwrap_or_default()),
            ("head", self.head.tensors()),
            ("decoder", self.decoder.tensors()),
        ]
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, Vec<&mut [f64]>)> {
        vec![
            ("encoder", self.encoder.tensors_mut()),
            ("readouts", self.readouts.iter_mut().flat_map(|r| r.tensors_mut()).collect()),
            ("combiner", self.combiner.tensors_mut()),
            ("base", self.base.as_mut().map(|b| b.tensors_mut()).unwrap_or_default()),
            ("head", self.head.tensors_mut()),
            ("decoder", self.decoder.tensors_mut()),
        ]
    }
}

impl Parameters for Trainable {
    fn tensors(&self) -> Vec<&[f64]> {
        self.groups().into_iter().flat_map(|(_, t)| t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.groups_mut().into_iter().flat_map(|(_, t)| t).collect()
    }
}

/// Values from a forward pass needed by [`ForecastModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    window: Matrix,
    embedded: Matrix,
    keys_values: Matrix,
    states: Vec<Vec<f64>>,
    readout_out: Vec<Vec<f64>>,
    memory_in: Matrix,
    stack: StackCache,
    fused: Matrix,
    base: Option<(Matrix, Vec<f64>, Matrix)>,
    pre_decode: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    config: ModelConfig,
    channels: usize,
    reservoir_encoder: EmbeddingEncoder,
    reservoirs: ReservoirGroup,
    pub params: Trainable,
}

const STREAM_RESERVOIRS: u64 = 1;
const STREAM_TRAINABLE: u64 = 2;

impl ForecastModel {
    pub fn new(config: ModelConfig, channels: usize, seed: u64) -> Result<Self> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(EchoError::Config(v.join("; ")));
        }
        if channels == 0 {
            return Err(EchoError::Config("model needs at least one channel".into()));
        }
        let root = RngStream::new(seed, 0);
        let mut tr = root.substream(STREAM_TRAINABLE);
        let encoder = if config.embedding_enabled {
            EmbeddingEncoder::new(config.embedding_dim, channels, &mut tr)
        } else {
            EmbeddingEncoder::disabled(channels)
        };
        let width = encoder.output_dim();
        let reservoirs = ReservoirGroup::new(&config.group, width, &root.substream(STREAM_RESERVOIRS))?;
        let m = config.group.readout_dim;
        let readouts = reservoirs
            .units()
            .iter()
            .map(|u| MlpReadout::new(m, u.size(), &mut tr))
            .collect();
        let combiner = CrossAttention::new(config.fusion.clone(), m, width, &mut tr)?;
        let d = config.fusion.d_model;
        let l = reservoirs.len();
        let (base, head) = match config.variant {
            Variant::EchoSolo => (None, Linear::new(config.horizon * width, l * d, &mut tr)),
            Variant::EchoMlp => (
                Some(BaseModel::new(config.lookback + l, d, config.base_hidden, config.horizon, &mut tr)),
                Linear::new(width, d, &mut tr),
            ),
        };
        let decoder = if config.embedding_enabled {
            RestorationDecoder::new(width, channels, &mut tr)
        } else {
            RestorationDecoder::disabled(channels)
        };
        Ok(Self {
            reservoir_encoder: encoder.clone(),
            config,
            channels,
            reservoirs,
            params: Trainable {
                encoder,
                readouts,
                combiner,
                base,
                head,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lookback(&self) -> usize {
        self.config.lookback
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn reservoirs(&self) -> &ReservoirGroup {
        &self.reservoirs
    }

    /// Step width after embedding.
    pub fn step_width(&self) -> usize {
        self.params.encoder.output_dim()
    }

    pub(crate) fn ensure_state(&mut self) {
        self.reservoirs.ensure_state();
    }

    /// Zeroes every reservoir state.
    pub fn reset_streams(&mut self) {
        self.reservoirs.reset();
    }

    /// Feeds one observation through the frozen reservoir path.
    pub fn stream_advance(&mut self, u: &[f64]) -> Result<()> {
        let h = self.reservoir_encoder.embed(u)?;
        self.reservoirs.step(&h)
    }

    /// Reservoir trajectories over the rows of `series` (`T × N_u`), starting
    /// from zero state. Entry `l` is unit `l`'s `T × N_r` state matrix; row
    /// `t` is the state after consuming observation `t`. The model's own
    /// streaming state is untouched.
    pub fn reservoir_trajectories(&self, series: &Matrix) -> Result<Vec<Matrix>> {
        if series.cols() != self.channels {
            return Err(EchoError::Shape {
                context: "series channels",
                expected: self.channels,
                actual: series.cols(),
            });
        }
        let embedded = self.reservoir_encoder.embed_rows(series)?;
        self.reservoirs.clone().trajectories(&embedded)
    }

    /// Reservoir states after consuming rows `0..=end` of `series` from zero.
    pub fn states_after(&self, series: &Matrix, end: usize) -> Result<Vec<Vec<f64>>> {
        if end >= series.rows() {
            return Err(EchoError::Input(format!(
                "state index {end} beyond series of {} rows",
                series.rows()
            )));
        }
        let c = series.cols();
        let prefix = Matrix::from_vec(end + 1, c, series.as_slice()[..(end + 1) * c].to_vec())?;
        Ok(self
            .reservoir_trajectories(&prefix)?
            .iter()
            .map(|m| m.row(end).to_vec())
            .collect())
    }

    /// Forecast from the current reservoir states and the last `k` rows of
    /// `window`. Returns a `τ × N_u` matrix.
    pub fn forecast(&self, window: &Matrix, train_mode: bool, rng: &mut RngStream) -> Result<Matrix> {
        let states: Vec<&[f64]> = self.reservoirs.states();
        Ok(self.forward(window, &states, train_mode, rng)?.0)
    }

    /// Forward pass with explicit reservoir states.
    pub fn forward(
        &self,
        window: &Matrix,
        states: &[&[f64]],
        train_mode: bool,
        rng: &mut RngStream,
    ) -> Result<(Matrix, ForwardCache)> {
        let k = self.config.lookback;
        if window.rows() < k {
            return Err(EchoError::Input(format!(
                "window has {} rows, lookback needs {k}",
                window.rows()
            )));
        }
        if window.cols() != self.channels {
            return Err(EchoError::Shape {
                context: "window channels",
                expected: self.channels,
                actual: window.cols(),
            });
        }
        if states.len() != self.params.readouts.len() {
            return Err(EchoError::Shape {
                context: "reservoir state count",
                expected: self.params.readouts.len(),
                actual: states.len(),
            });
        }
        let start = window.rows() - k;
        let window = Matrix::from_vec(
            k,
            self.channels,
            window.as_slice()[start * self.channels..].to_vec(),
        )?;
        let p = &self.params;
        let embedded = p.encoder.embed_rows(&window)?;
        let keys_values = p.combiner.window_adapter.forward_rows(&embedded);

        let m = self.config.group.readout_dim;
        let mut memory_in = Matrix::zeros(states.len(), m);
        let mut readout_out = Vec::with_capacity(states.len());
        for (l, (x, r)) in states.iter().zip(&p.readouts).enumerate() {
            let y = r.readout(x)?;
            memory_in.row_mut(l).copy_from_slice(&y);
            readout_out.push(y);
        }
        let memory = p.combiner.memory_adapter.forward_rows(&memory_in);
        let (fused, stack) = p.combiner.stack_forward(&memory, &keys_values, train_mode, rng)?;

        let tau = self.config.horizon;
        let width = self.step_width();
        let (pre_decode, base) = match &p.base {
            None => {
                let out = p.head.forward(fused.as_slice());
                (Matrix::from_vec(tau, width, out)?, None)
            }
            Some(base) => {
                let seq = stack_rows(&fused, &keys_values);
                let (tokens, hid) = base.forward(&seq)?;
                let out = p.head.forward_rows(&tokens);
                (out, Some((seq, hid, tokens)))
            }
        };
        let mut pred = Matrix::zeros(tau, self.channels);
        for s in 0..tau {
            let y = p.decoder.restore(pre_decode.row(s))?;
            pred.row_mut(s).copy_from_slice(&y);
        }
        let cache = ForwardCache {
            window,
            embedded,
            keys_values,
            states: states.iter().map(|s| s.to_vec()).collect(),
            readout_out,
            memory_in,
            stack,
            fused,
            base,
            pre_decode,
        };
        Ok((pred, cache))
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dprediction`.
    pub fn backward(&self, cache: &ForwardCache, d_pred: &Matrix, grad: &mut Trainable) {
        let p = &self.params;
        let tau = self.config.horizon;
        let width = self.step_width();
        let mut d_pre = Matrix::zeros(tau, width);
        for s in 0..tau {
            let g = p.decoder.backward(cache.pre_decode.row(s), d_pred.row(s), &mut grad.decoder);
            d_pre.row_mut(s).copy_from_slice(&g);
        }

        let (d_fused, mut d_kv) = match (&p.base, &cache.base) {
            (None, _) => {
                let d = p.head.backward(cache.fused.as_slice(), d_pre.as_slice(), &mut grad.head);
                let d_fused = Matrix::from_vec(cache.fused.rows(), cache.fused.cols(), d).expect("shape");
                (d_fused, Matrix::zeros(cache.keys_values.rows(), cache.keys_values.cols()))
            }
            (Some(base), Some((seq, hid, tokens))) => {
                let d_tokens = p.head.backward_rows(tokens, &d_pre, &mut grad.head);
                let d_seq = base.backward(seq, hid, &d_tokens, grad.base.as_mut().expect("base grads"));
                let l = cache.fused.rows();
                let (top, bottom) = split_rows(&d_seq, l);
                (top, bottom)
            }
            (Some(_), None) => unreachable!("base cache missing"),
        };

        let (d_memory, d_kv_att) = p.combiner.stack_backward(&cache.stack, &d_fused, &mut grad.combiner);
        d_kv.add_assign(&d_kv_att);

        let d_memory_in = p
            .combiner
            .memory_adapter
            .backward_rows(&cache.memory_in, &d_memory, &mut grad.combiner.memory_adapter);
        for (l, r) in p.readouts.iter().enumerate() {
            r.backward(&cache.states[l], &cache.readout_out[l], d_memory_in.row(l), &mut grad.readouts[l]);
        }

        let d_embedded = p
            .combiner
            .window_adapter
            .backward_rows(&cache.embedded, &d_kv, &mut grad.combiner.window_adapter);
        for i in 0..cache.window.rows() {
            p.encoder.backward(cache.window.row(i), d_embedded.row(i), &mut grad.encoder);
        }
    }

    /// Trainable parameter count.
    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// True when every frozen tensor matches `other` bitwise.
    pub fn same_frozen_weights(&self, other: &ForecastModel) -> bool {
        self.reservoirs.same_weights(&other.reservoirs)
            && self.reservoir_encoder == other.reservoir_encoder
    }
}

fn stack_rows(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut data = top.as_slice().to_vec();
    data.extend_from_slice(bottom.as_slice());
    Matrix::from_vec(top.rows() + bottom.rows(), top.cols(), data).expect("equal widths")
}

fn split_rows(m: &Matrix, at: usize) -> (Matrix, Matrix) {
    let c = m.cols();
    let (a, b) = m.as_slice().split_at(at * c);
    (
        Matrix::from_vec(at, c, a.to_vec()).expect("shape"),
        Matrix::from_vec(m.rows() - at, c, b.to_vec()).expect("shape"),
    )
}

/// Repeats the last observation `horizon` times.
pub fn persistence_baseline(window: &Matrix, horizon: usize) -> Result<Matrix> {
    if window.rows() == 0 {
        return Err(EchoError::Input("persistence needs a nonempty window".into()));
    }
    let last = window.row(window.rows() - 1);
    let mut out = Matrix::zeros(horizon, window.cols());
    for s in 0..horizon {
        out.row_mut(s).copy_from_slice(last);
    }
    Ok(out)
}

/// Closed-form trainable parameter count for a configuration.
pub fn expected_param_count(config: &ModelConfig, channels: usize) -> usize {
    let e = config.embedding_dim;
    let width = config.step_width(channels);
    let m = config.group.readout_dim;
    let d = config.fusion.d_model;
    let l = config.group.units.len();
    let tau = config.horizon;
    let encoder = if config.embedding_enabled { 2 * channels * e } else { 0 };
    let readouts: usize = config.group.units.iter().map(|u| m * u.size + m).sum();
    let adapters = (d * m + d) + (d * width + d);
    let attention = config.fusion.layers * 4 * d * d;
    let (base, head) = match config.variant {
        Variant::EchoSolo => (0, tau * width * l * d + tau * width),
        Variant::EchoMlp => {
            let h = config.base_hidden;
            (
                (config.lookback + l) * d * h + h + h * tau * d + tau * d,
                width * d + width,
            )
        }
    };
    let decoder = if config.embedding_enabled { channels * width + channels } else { 0 };
    encoder + readouts + adapters + attention + base + head + decoder
}

/// Sums `dL/dθ` of several samples in index order.
pub fn sum_grads(grads: &[Trainable]) -> Option<Trainable> {
    let mut it = grads.iter();
    let mut acc = it.next()?.clone();
    for g in it {
        for (dst, src) in acc.tensors_mut().into_iter().zip(g.tensors()) {
            axpy(1.0, src, dst);
        }
    }
    Some(acc)
}
