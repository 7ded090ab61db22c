//! Heterogeneous reservoir groups and their per-unit MLP readouts.
//!
//! Each unit's state is mapped to a shared width `m` by
//! `y = relu(W·x + θ)`; the group output concatenates the `L` readouts.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, EchoError, Result};
use crate::nn::{Linear, Parameters};
use crate::numerics::{Activation, Matrix, RngStream};
use crate::par;
use crate::reservoir::{XEsnConfig, XEsnUnit};

/// Tuned group layout: `(size, spectral radius, sparsity column, outer activation)`.
pub const DEFAULT_GROUP_TABLE: [(usize, f64, f64, Activation); 10] = [
    (100, 0.90, 0.60, Activation::Tanh),
    (105, 0.85, 0.55, Activation::Sigmoid),
    (110, 0.80, 0.50, Activation::Relu),
    (115, 0.75, 0.45, Activation::Tanh),
    (120, 0.70, 0.40, Activation::Sigmoid),
    (125, 0.65, 0.35, Activation::Relu),
    (130, 0.60, 0.30, Activation::Tanh),
    (135, 0.55, 0.25, Activation::Sigmoid),
    (140, 0.50, 0.20, Activation::Relu),
    (145, 0.45, 0.15, Activation::Tanh),
];

/// How to read the table's sparsity column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityReading {
    /// The value is the fraction of nonzero connections.
    #[default]
    Density,
    /// The value is the fraction of zero connections.
    ZeroFraction,
}

/// How each unit's `(σ1, σ2)` pair is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    /// Use the pair written in each unit config.
    #[default]
    Table,
    /// Draw both activations uniformly from the random set per unit.
    RandomPairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupConfig {
    pub units: Vec<XEsnConfig>,
    pub readout_dim: usize,
    pub activation_mode: ActivationMode,
}

impl Default for GroupConfig {
    fn default() -> Self {
        default_group()
    }
}

/// The ten-unit group with sizes 100..145 and radii 0.90..0.45.
pub fn default_group() -> GroupConfig {
    GroupConfig::from_table(SparsityReading::Density)
}

impl GroupConfig {
    pub fn from_table(reading: SparsityReading) -> Self {
        let units = DEFAULT_GROUP_TABLE
            .iter()
            .enumerate()
            .map(|(i, &(size, radius, sparsity, outer))| XEsnConfig {
                size,
                spectral_radius: radius,
                density: match reading {
                    SparsityReading::Density => sparsity,
                    SparsityReading::ZeroFraction => 1.0 - sparsity,
                },
                inner: Activation::Tanh,
                outer,
                seed: i as u64,
                ..XEsnConfig::default()
            })
            .collect();
        Self {
            units,
            readout_dim: 32,
            activation_mode: ActivationMode::Table,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Divides every unit size by `factor` (rounding, at least 1).
    pub fn shrink(mut self, factor: f64) -> Self {
        for u in &mut self.units {
            u.size = ((u.size as f64 / factor).round() as usize).max(1);
        }
        self
    }

    /// Keeps only the first `n` units.
    pub fn truncate(mut self, n: usize) -> Self {
        self.units.truncate(n);
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.units.is_empty() {
            v.push("group must contain at least one unit".to_string());
        }
        if self.readout_dim == 0 {
            v.push("group readout_dim must be at least 1".to_string());
        }
        for (i, u) in self.units.iter().enumerate() {
            v.extend(u.violations(&format!("group unit {}: ", i + 1)));
        }
        v
    }
}

/// The frozen part of a group: the reservoirs themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirGroup {
    units: Vec<XEsnUnit>,
}

impl ReservoirGroup {
    /// Initializes every unit from its own substream of `rng`.
    pub fn new(config: &GroupConfig, input_dim: usize, rng: &RngStream) -> Result<Self> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(EchoError::Config(violations.join("; ")));
        }
        let units = config
            .units
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let unit_rng = rng.substream(i as u64).substream(cfg.seed);
                let mut cfg = cfg.clone();
                if config.activation_mode == ActivationMode::RandomPairs {
                    let mut pick = unit_rng.substream(5);
                    let set = Activation::RANDOM_SET;
                    cfg.inner = set[pick.below(set.len())];
                    cfg.outer = set[pick.below(set.len())];
                }
                XEsnUnit::new(cfg, input_dim, &unit_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { units })
    }

    pub fn from_units(units: Vec<XEsnUnit>) -> Self {
        Self { units }
    }

    pub fn units(&self) -> &[XEsnUnit] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [XEsnUnit] {
        &mut self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.units.iter().map(XEsnUnit::size).collect()
    }

    pub fn reset(&mut self) {
        self.units.iter_mut().for_each(XEsnUnit::reset);
    }

    pub(crate) fn ensure_state(&mut self) {
        self.units.iter_mut().for_each(XEsnUnit::ensure_state);
    }

    /// Advances every unit by one input (units run concurrently).
    pub fn step(&mut self, h: &[f64]) -> Result<()> {
        let mut results: Vec<Result<()>> = self.units.iter().map(|_| Ok(())).collect();
        let mut pairs: Vec<(&mut XEsnUnit, &mut Result<()>)> =
            self.units.iter_mut().zip(results.iter_mut()).collect();
        par::for_each_mut(&mut pairs, |_, (unit, res)| {
            **res = unit.step_mcra(h).map(|_| ());
        });
        results.into_iter().collect()
    }

    /// Runs every unit from a zero state over the rows of `inputs`;
    /// entry `l` holds unit `l`'s `T × N_r` trajectory.
    pub fn trajectories(&mut self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        let mut out: Vec<Result<Matrix>> = self.units.iter().map(|_| Ok(Matrix::zeros(0, 0))).collect();
        let mut pairs: Vec<(&mut XEsnUnit, &mut Result<Matrix>)> =
            self.units.iter_mut().zip(out.iter_mut()).collect();
        par::for_each_mut(&mut pairs, |_, (unit, res)| {
            **res = unit.run_rows(inputs);
        });
        out.into_iter().collect()
    }

    pub fn states(&self) -> Vec<&[f64]> {
        self.units.iter().map(XEsnUnit::state).collect()
    }

    /// True when every unit's frozen weights are bitwise equal to `other`'s.
    pub fn same_weights(&self, other: &ReservoirGroup) -> bool {
        self.units.len() == other.units.len()
            && self.units.iter().zip(&other.units).all(|(a, b)| a.same_weights(b))
    }
}

/// Trainable readout `relu(W·x + θ)` from one unit's state to width `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpReadout {
    layer: Linear,
}

impl MlpReadout {
    pub fn new(readout_dim: usize, state_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            layer: Linear::new(readout_dim, state_dim, rng),
        }
    }

    pub fn from_linear(layer: Linear) -> Self {
        Self { layer }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer: self.layer.zeros_like(),
        }
    }

    pub fn layer(&self) -> &Linear {
        &self.layer
    }

    pub fn output_dim(&self) -> usize {
        self.layer.out_dim()
    }

    pub fn readout(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("readout input", self.layer.in_dim(), x.len())?;
        let mut y = self.layer.forward(x);
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(y)
    }

    /// Accumulates parameter gradients given the readout output `y` and
    /// `dL/dy`. The state input is frozen, so no input gradient is formed.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut MlpReadout) {
        let dpre: Vec<f64> = dy
            .iter()
            .zip(y)
            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
            .collect();
        self.layer.backward_params(x, &dpre, &mut grad.layer);
    }
}

impl Parameters for MlpReadout {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layer.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.tensors_mut()
    }
}

/// Reservoirs paired with their readouts.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupState {
    pub reservoirs: ReservoirGroup,
    pub readouts: Vec<MlpReadout>,
}

impl GroupState {
    pub fn new(config: &GroupConfig, input_dim: usize, rng: &RngStream) -> Result<Self> {
        let reservoirs = ReservoirGroup::new(config, input_dim, &rng.substream(0))?;
        let mut rr = rng.substream(1);
        let readouts = reservoirs
            .units()
            .iter()
            .map(|u| MlpReadout::new(config.readout_dim, u.size(), &mut rr))
            .collect();
        Ok(Self {
            reservoirs,
            readouts,
        })
    }

    /// Steps every unit on `h` and concatenates the readouts in unit order.
    pub fn group_forward(&mut self, h: &[f64]) -> Result<Vec<f64>> {
        self.reservoirs.step(h)?;
        read_group(&self.reservoirs.states(), &self.readouts)
    }
}

/// Concatenated readouts of the given states.
pub fn read_group(states: &[&[f64]], readouts: &[MlpReadout]) -> Result<Vec<f64>> {
    check_len("group readouts", states.len(), readouts.len())?;
    let mut out = Vec::with_capacity(readouts.iter().map(MlpReadout::output_dim).sum());
    for (x, r) in states.iter().zip(readouts) {
        out.extend(r.readout(x)?);
    }
    Ok(out)
}
