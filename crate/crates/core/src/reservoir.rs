//! Frozen recurrent reservoirs.
//!
//! A unit evolves its state with the matrix-gated composite update
//!
//! ```text
//! x' = σ2( W1·x + W2·clip(σ1(norm(W_in·h + θ + W·x)), -1, 1) )
//! ```
//!
//! where `W1`, `W2` are diagonal gates with `diag(W1) + diag(W2) = 1`. The
//! classical leaky-integrator update is the special case of scalar gates,
//! `σ1 = tanh`, `σ2 = identity` and no norm or clip. Nothing in a unit is
//! trained; weights are fixed at construction.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, EchoError, Result};
use crate::numerics::{
    layer_norm_in_place, scale_to_radius, spectral_radius, uniform_matrix, Activation, Matrix,
    RngStream,
};

const MAX_INIT_RETRIES: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GateMode {
    /// `W1 = (1 - α)·I`, `W2 = α·I`.
    ScalarLeak { alpha: f64 },
    /// Random diagonal gates, `diag(W1) ~ U[0, 1]`, `diag(W2) = 1 - diag(W1)`.
    DiagonalGates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XEsnConfig {
    pub size: usize,
    pub spectral_radius: f64,
    /// Fraction of nonzero recurrent connections.
    pub density: f64,
    pub input_scale: f64,
    /// Inner activation `σ1`.
    pub inner: Activation,
    /// Outer activation `σ2`.
    pub outer: Activation,
    pub gate_mode: GateMode,
    pub clip_enabled: bool,
    pub norm_enabled: bool,
    pub norm_eps: f64,
    /// Learned gates would need gradients through the recurrence; not
    /// supported, must stay `false`.
    pub trainable_gates: bool,
    /// Salt mixed into the unit's random substream.
    pub seed: u64,
}

impl Default for XEsnConfig {
    fn default() -> Self {
        Self {
            size: 100,
            spectral_radius: 0.9,
            density: 0.6,
            input_scale: 0.1,
            inner: Activation::Tanh,
            outer: Activation::Tanh,
            gate_mode: GateMode::DiagonalGates,
            clip_enabled: true,
            norm_enabled: true,
            norm_eps: 1e-5,
            trainable_gates: false,
            seed: 0,
        }
    }
}

impl XEsnConfig {
    /// Classical leaky-integrator configuration.
    pub fn classical(size: usize, spectral_radius: f64, density: f64, alpha: f64) -> Self {
        Self {
            size,
            spectral_radius,
            density,
            inner: Activation::Tanh,
            outer: Activation::Identity,
            gate_mode: GateMode::ScalarLeak { alpha },
            clip_enabled: false,
            norm_enabled: false,
            ..Self::default()
        }
    }

    /// Every violated constraint, prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.size == 0 {
            v.push(format!("{prefix}size must be at least 1"));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            v.push(format!(
                "{prefix}spectral_radius must lie in (0, 1), got {}",
                self.spectral_radius
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            v.push(format!("{prefix}density must lie in (0, 1], got {}", self.density));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            v.push(format!("{prefix}input_scale must be positive, got {}", self.input_scale));
        }
        if let GateMode::ScalarLeak { alpha } = self.gate_mode {
            if !(0.0..=1.0).contains(&alpha) {
                v.push(format!("{prefix}leak alpha must lie in [0, 1], got {alpha}"));
            }
        }
        if !(self.norm_eps >= 0.0 && self.norm_eps.is_finite()) {
            v.push(format!("{prefix}norm_eps must be non-negative, got {}", self.norm_eps));
        }
        if self.trainable_gates {
            v.push(format!(
                "{prefix}trainable_gates is not supported; reservoir gates are frozen"
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("");
        if v.is_empty() {
            Ok(())
        } else {
            Err(EchoError::Config(v.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XEsnUnit {
    config: XEsnConfig,
    w_in: Matrix,
    w: Matrix,
    bias: Vec<f64>,
    gate_state: Vec<f64>,
    gate_input: Vec<f64>,
    measured_radius: f64,
    #[serde(skip)]
    state: Vec<f64>,
}

impl XEsnUnit {
    /// Draws a unit for inputs of width `input_dim`.
    pub fn new(config: XEsnConfig, input_dim: usize, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let n = config.size;
        let s = config.input_scale;
        let w_in = uniform_matrix(n, input_dim, -s, s, 1.0, &mut rng.substream(1))?;

        let mut w = None;
        for attempt in 0..=MAX_INIT_RETRIES {
            let mut wr = rng.substream(2).substream(attempt);
            let raw = uniform_matrix(n, n, -1.0, 1.0, config.density, &mut wr)?;
            match scale_to_radius(&raw, config.spectral_radius) {
                Ok(scaled) => {
                    w = Some(scaled);
                    break;
                }
                Err(EchoError::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let w = w.ok_or_else(|| {
            EchoError::Degenerate(format!(
                "recurrent matrix had zero spectral radius after {} retries",
                MAX_INIT_RETRIES
            ))
        })?;

        let mut br = rng.substream(3);
        let bias = (0..n).map(|_| br.uniform(-s, s)).collect();

        let (gate_state, gate_input) = match config.gate_mode {
            GateMode::ScalarLeak { alpha } => (vec![1.0 - alpha; n], vec![alpha; n]),
            GateMode::DiagonalGates => {
                let mut gr = rng.substream(4);
                let g: Vec<f64> = (0..n).map(|_| gr.uniform(0.0, 1.0)).collect();
                let other = g.iter().map(|x| 1.0 - x).collect();
                (g, other)
            }
        };
        let measured_radius = spectral_radius(&w)?.radius;
        Ok(Self {
            config,
            w_in,
            w,
            bias,
            gate_state,
            gate_input,
            measured_radius,
            state: vec![0.0; n],
        })
    }

    /// Assembles a unit from explicit weights (gates given by their diagonals).
    pub fn from_parts(
        config: XEsnConfig,
        w_in: Matrix,
        w: Matrix,
        bias: Vec<f64>,
        gate_state: Vec<f64>,
    ) -> Result<Self> {
        let n = config.size;
        check_len("recurrent rows", n, w.rows())?;
        check_len("recurrent cols", n, w.cols())?;
        check_len("input weight rows", n, w_in.rows())?;
        check_len("bias", n, bias.len())?;
        check_len("gate", n, gate_state.len())?;
        let gate_input = gate_state.iter().map(|g| 1.0 - g).collect();
        let measured_radius = spectral_radius(&w)?.radius;
        Ok(Self {
            config,
            w_in,
            w,
            bias,
            gate_state,
            gate_input,
            measured_radius,
            state: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &XEsnConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.cols()
    }

    pub fn input_weights(&self) -> &Matrix {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &Matrix {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `diag(W1)`, the gate on the previous state.
    pub fn state_gate(&self) -> &[f64] {
        &self.gate_state
    }

    /// `diag(W2)`, the gate on the activated drive.
    pub fn input_gate(&self) -> &[f64] {
        &self.gate_input
    }

    /// Spectral radius of `W` measured right after scaling.
    pub fn measured_radius(&self) -> f64 {
        self.measured_radius
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, x: &[f64]) -> Result<()> {
        check_len("reservoir state", self.size(), x.len())?;
        self.state.copy_from_slice(x);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.clear();
        self.state.resize(self.config.size, 0.0);
    }

    /// Restores the state buffer after deserialization.
    pub(crate) fn ensure_state(&mut self) {
        if self.state.len() != self.config.size {
            self.reset();
        }
    }

    fn drive(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_len("reservoir input", self.input_dim(), h.len())?;
        let mut pre = self.bias.clone();
        self.w_in.matvec_acc(h, &mut pre);
        self.w.matvec_acc(&self.state, &mut pre);
        Ok(pre)
    }

    /// Leaky-integrator update with scalar rate `alpha`, ignoring the unit's
    /// gates and activation pair.
    pub fn step_classic(&mut self, h: &[f64], alpha: f64) -> Result<&[f64]> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EchoError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let pre = self.drive(h)?;
        for (x, p) in self.state.iter_mut().zip(pre) {
            *x = (1.0 - alpha) * *x + alpha * p.tanh();
        }
        Ok(&self.state)
    }

    /// Matrix-gated composite update.
    pub fn step_mcra(&mut self, h: &[f64]) -> Result<&[f64]> {
        let mut inner = self.drive(h)?;
        if self.config.norm_enabled {
            layer_norm_in_place(&mut inner, self.config.norm_eps);
        }
        let (s1, s2) = (self.config.inner, self.config.outer);
        let clip = self.config.clip_enabled;
        for (i, x) in self.state.iter_mut().enumerate() {
            let mut c = s1.apply(inner[i]);
            if clip {
                c = c.clamp(-1.0, 1.0);
            }
            *x = s2.apply(self.gate_state[i] * *x + self.gate_input[i] * c);
        }
        if self.state.iter().any(|x| !x.is_finite()) {
            return Err(EchoError::Divergence("reservoir state became non-finite".into()));
        }
        Ok(&self.state)
    }

    /// Resets, then steps through `sequence`, returning states from index
    /// `washout` onward. The final state is kept for streaming continuation.
    pub fn run(&mut self, sequence: &[Vec<f64>], washout: usize) -> Result<Vec<Vec<f64>>> {
        if sequence.is_empty() {
            return Err(EchoError::Input("cannot run a reservoir on an empty sequence".into()));
        }
        if washout >= sequence.len() {
            return Err(EchoError::Input(format!(
                "washout {washout} must be shorter than the sequence ({})",
                sequence.len()
            )));
        }
        self.reset();
        let mut out = Vec::with_capacity(sequence.len() - washout);
        for (t, h) in sequence.iter().enumerate() {
            let x = self.step_mcra(h)?;
            if t >= washout {
                out.push(x.to_vec());
            }
        }
        Ok(out)
    }

    /// Like [`XEsnUnit::run`] over the rows of `inputs`, collecting every
    /// state into a `T × N_r` matrix.
    pub fn run_rows(&mut self, inputs: &Matrix) -> Result<Matrix> {
        self.reset();
        let mut out = Matrix::zeros(inputs.rows(), self.size());
        for t in 0..inputs.rows() {
            let x = self.step_mcra(inputs.row(t))?;
            out.row_mut(t).copy_from_slice(x);
        }
        Ok(out)
    }

    /// Heap bytes held by the evolving state.
    pub fn state_bytes(&self) -> usize {
        self.state.capacity() * std::mem::size_of::<f64>()
    }

    /// True when every frozen tensor is bitwise equal to `other`'s.
    pub fn same_weights(&self, other: &XEsnUnit) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        bits(self.w_in.as_slice(), other.w_in.as_slice())
            && bits(self.w.as_slice(), other.w.as_slice())
            && bits(&self.bias, &other.bias)
            && bits(&self.gate_state, &other.gate_state)
            && bits(&self.gate_input, &other.gate_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm2;
    use proptest::prelude::*;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, 0xE5)
    }

    #[test]
    fn init_scales_to_configured_radius() {
        let unit = XEsnUnit::new(XEsnConfig::default(), 4, &rng(1)).unwrap();
        let r = spectral_radius(unit.recurrent_weights()).unwrap().radius;
        assert!((0.899..=0.901).contains(&r), "{r}");
        assert!(unit
            .state_gate()
            .iter()
            .zip(unit.input_gate())
            .all(|(a, b)| (a + b - 1.0).abs() < 1e-15 && (0.0..=1.0).contains(a)));
    }

    #[test]
    fn init_is_deterministic() {
        let a = XEsnUnit::new(XEsnConfig::default(), 3, &rng(9)).unwrap();
        let b = XEsnUnit::new(XEsnConfig::default(), 3, &rng(9)).unwrap();
        assert_eq!(a, b);
        let c = XEsnUnit::new(XEsnConfig::default(), 3, &rng(10)).unwrap();
        assert!(!a.same_weights(&c));
    }

    #[test]
    fn scalar_leak_gates() {
        let cfg = XEsnConfig {
            gate_mode: GateMode::ScalarLeak { alpha: 0.3 },
            size: 10,
            ..XEsnConfig::default()
        };
        let unit = XEsnUnit::new(cfg, 2, &rng(2)).unwrap();
        assert!(unit.state_gate().iter().all(|&g| (g - 0.7).abs() < 1e-15));
        assert!(unit.input_gate().iter().all(|&g| (g - 0.3).abs() < 1e-15));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            XEsnConfig { spectral_radius: 1.0, ..XEsnConfig::default() },
            XEsnConfig { size: 0, ..XEsnConfig::default() },
            XEsnConfig { input_scale: 0.0, ..XEsnConfig::default() },
            XEsnConfig { gate_mode: GateMode::ScalarLeak { alpha: 1.5 }, ..XEsnConfig::default() },
            XEsnConfig { trainable_gates: true, ..XEsnConfig::default() },
        ] {
            assert!(matches!(XEsnUnit::new(cfg, 2, &rng(0)), Err(EchoError::Config(_))));
        }
    }

    #[test]
    fn classic_fixed_point_and_frozen_leak() {
        let cfg = XEsnConfig { size: 6, ..XEsnConfig::default() };
        let mut unit = XEsnUnit::from_parts(
            cfg.clone(),
            Matrix::zeros(6, 2),
            Matrix::zeros(6, 6),
            vec![0.0; 6],
            vec![0.5; 6],
        )
        .unwrap();
        assert_eq!(unit.step_classic(&[0.0, 0.0], 0.4).unwrap(), &[0.0; 6]);

        let mut unit = XEsnUnit::new(cfg.clone(), 2, &rng(3)).unwrap();
        let x0: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        unit.set_state(&x0).unwrap();
        assert_eq!(unit.step_classic(&[3.0, -1.0], 0.0).unwrap(), x0.as_slice());
    }

    #[test]
    fn classic_direct_evaluation() {
        let cfg = XEsnConfig { size: 3, ..XEsnConfig::default() };
        let mut unit = XEsnUnit::from_parts(
            cfg,
            Matrix::identity(3),
            Matrix::zeros(3, 3),
            vec![0.0; 3],
            vec![0.5; 3],
        )
        .unwrap();
        let x = unit.step_classic(&[0.5, 0.5, 0.5], 1.0).unwrap();
        assert!(x.iter().all(|&v| v == 0.5f64.tanh()));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut unit = XEsnUnit::new(XEsnConfig { size: 5, ..XEsnConfig::default() }, 3, &rng(4))
            .unwrap();
        assert!(matches!(unit.step_mcra(&[1.0]), Err(EchoError::Shape { .. })));
        assert!(matches!(unit.step_classic(&[1.0], 0.5), Err(EchoError::Shape { .. })));
    }

    /// Hand evaluation of the zero-input step: with zero drive the norm
    /// output is zero, so `x' = σ2(W2·clip(σ1(0)))`.
    #[test]
    fn zero_drive_with_norm_matches_hand_evaluation() {
        for s1 in Activation::RANDOM_SET {
            for s2 in Activation::RANDOM_SET {
                let cfg = XEsnConfig {
                    size: 4,
                    inner: s1,
                    outer: s2,
                    ..XEsnConfig::default()
                };
                let gates = vec![0.2, 0.4, 0.6, 0.8];
                let mut w = Matrix::identity(4);
                w.set(0, 1, 0.3);
                let mut unit = XEsnUnit::from_parts(
                    cfg,
                    Matrix::identity(4),
                    w,
                    vec![0.0; 4],
                    gates.clone(),
                )
                .unwrap();
                let x = unit.step_mcra(&[0.0; 4]).unwrap().to_vec();
                let c = match s1 {
                    Activation::Sigmoid => 0.5,
                    _ => 0.0,
                };
                for i in 0..4 {
                    let expect = match s2 {
                        Activation::Tanh => ((1.0 - gates[i]) * c).tanh(),
                        Activation::Sigmoid => 1.0 / (1.0 + (-(1.0 - gates[i]) * c).exp()),
                        _ => (1.0 - gates[i]) * c,
                    };
                    assert!((x[i] - expect).abs() < 1e-15, "{s1}/{s2} #{i}");
                }
            }
        }
    }

    #[test]
    fn clipped_outputs_stay_bounded() {
        let cfg = XEsnConfig {
            size: 30,
            inner: Activation::Relu,
            outer: Activation::LeakyRelu,
            norm_enabled: false,
            ..XEsnConfig::default()
        };
        let mut unit = XEsnUnit::new(cfg, 2, &rng(5)).unwrap();
        let mut r = rng(6);
        for _ in 0..500 {
            let h = [r.uniform(-1e6, 1e6), r.uniform(-1e6, 1e6)];
            let x = unit.step_mcra(&h).unwrap();
            // |x'| <= g|x| + (1-g)·1 keeps the state inside [-1, 1].
            assert!(x.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn run_single_step_and_washout() {
        let mut unit = XEsnUnit::new(XEsnConfig { size: 8, ..XEsnConfig::default() }, 2, &rng(7))
            .unwrap();
        let seq = vec![vec![0.3, -0.1]];
        let states = unit.run(&seq, 0).unwrap();
        let mut fresh = XEsnUnit::new(XEsnConfig { size: 8, ..XEsnConfig::default() }, 2, &rng(7))
            .unwrap();
        assert_eq!(states[0], fresh.step_mcra(&seq[0]).unwrap());
        assert!(unit.run(&[], 0).is_err());
        assert!(unit.run(&seq, 1).is_err());

        let seq: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64 * 0.1, 0.0]).collect();
        let all = unit.run(&seq, 0).unwrap();
        let tail = unit.run(&seq, 4).unwrap();
        assert_eq!(&all[4..], tail.as_slice());
        assert_eq!(unit.state(), all[9].as_slice());
    }

    #[test]
    fn reset_behaviour() {
        let cfg = XEsnConfig { size: 12, ..XEsnConfig::default() };
        let seq: Vec<Vec<f64>> = (0..20).map(|t| vec![(t as f64).sin()]).collect();
        let mut a = XEsnUnit::new(cfg.clone(), 1, &rng(8)).unwrap();
        a.run(&seq, 0).unwrap();
        a.reset();
        assert_eq!(norm2(a.state()), 0.0);
        a.reset();
        assert_eq!(norm2(a.state()), 0.0);
        let ra = a.run(&seq, 0).unwrap();
        let mut b = XEsnUnit::new(cfg, 1, &rng(8)).unwrap();
        assert_eq!(ra, b.run(&seq, 0).unwrap());
    }

    #[test]
    fn fading_memory_in_classical_mode() {
        let cfg = XEsnConfig::classical(50, 0.9, 0.5, 0.5);
        let mut a = XEsnUnit::new(cfg, 1, &rng(11)).unwrap();
        let mut b = a.clone();
        let mut r = rng(12);
        let x0: Vec<f64> = (0..50).map(|_| r.uniform(-1.0, 1.0)).collect();
        b.set_state(&x0).unwrap();
        let d0 = norm2(&x0);
        for _ in 0..500 {
            let h = [r.uniform(-1.0, 1.0)];
            a.step_mcra(&h).unwrap();
            b.step_mcra(&h).unwrap();
        }
        let d: Vec<f64> = a.state().iter().zip(b.state()).map(|(x, y)| x - y).collect();
        assert!(norm2(&d) < 1e-4 * d0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn classical_reduction(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
            let cfg = XEsnConfig::classical(16, 0.8, 0.4, alpha);
            let mut unit = XEsnUnit::new(cfg, 3, &rng(seed)).unwrap();
            let mut r = rng(seed ^ 1);
            let x: Vec<f64> = (0..16).map(|_| r.uniform(-1.0, 1.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| r.uniform(-2.0, 2.0)).collect();
            let mut other = unit.clone();
            unit.set_state(&x).unwrap();
            other.set_state(&x).unwrap();
            let a = unit.step_mcra(&h).unwrap().to_vec();
            let b = other.step_classic(&h, alpha).unwrap();
            for (p, q) in a.iter().zip(b) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn bounded_outer_never_diverges(
            seed in any::<u64>(),
            pair in (0usize..4, 0usize..2),
            scale in 1.0f64..1e8,
        ) {
            let outer = [Activation::Tanh, Activation::Sigmoid][pair.1];
            let cfg = XEsnConfig {
                size: 20,
                inner: Activation::RANDOM_SET[pair.0],
                outer,
                ..XEsnConfig::default()
            };
            let mut unit = XEsnUnit::new(cfg, 2, &rng(seed)).unwrap();
            let mut r = rng(seed.wrapping_add(3));
            for _ in 0..50 {
                let h = [r.uniform(-scale, scale), r.uniform(-scale, scale)];
                let x = unit.step_mcra(&h).unwrap();
                prop_assert!(x.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            }
        }
    }
}
