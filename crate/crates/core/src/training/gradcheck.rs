use serde::{Deserialize, Serialize};

use super::{batch_gradient, huber, Dataset, WindowRef};
use crate::error::Result;
use crate::models::ForecastModel;
use crate::numerics::{Matrix, RngStream};

/// Which parameter groups a gradient check perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradSlice {
    Encoder,
    Readouts,
    Combiner,
    Base,
    Head,
    Decoder,
    All,
}

impl GradSlice {
    fn covers(self, group: &str) -> bool {
        match self {
            GradSlice::All => true,
            GradSlice::Encoder => group == "encoder",
            GradSlice::Readouts => group == "readouts",
            GradSlice::Combiner => group == "combiner",
            GradSlice::Base => group == "base",
            GradSlice::Head => group == "head",
            GradSlice::Decoder => group == "decoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Largest relative error per parameter group checked.
    pub groups: Vec<(String, f64)>,
    pub coordinates: usize,
}

/// Relative errors below this magnitude are measured against it instead.
const REL_FLOOR: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn eval_loss(model: &ForecastModel, data: &Dataset, traj: &[Matrix], windows: &[WindowRef], delta: f64) -> Result<f64> {
    let (k, tau) = (model.lookback(), model.horizon());
    let mut total = 0.0;
    for w in windows {
        let states: Vec<&[f64]> = traj.iter().map(|m| m.row(w.state)).collect();
        let pred = model.forward(&data.window(w, k), &states, false, &mut RngStream::new(0, 0))?.0;
        total += huber(data.target(w, tau).as_slice(), pred.as_slice(), delta)?;
    }
    Ok(total / windows.len().max(1) as f64)
}

/// Compares backpropagated gradients of the mean Huber loss over `windows`
/// (dropout off) with central differences. `stride` checks every n-th
/// coordinate of each tensor.
pub fn grad_check(
    model: &ForecastModel,
    data: &Dataset,
    windows: &[WindowRef],
    delta: f64,
    slice: GradSlice,
    stride: usize,
) -> Result<GradCheckReport> {
    let stride = stride.max(1);
    let (_, analytic) = batch_gradient(model, data, windows, delta)?;
    let traj = model.reservoir_trajectories(&data.series)?;
    let analytic_groups = analytic.groups();
    let mut probe = model.clone();
    let mut groups = Vec::new();
    let mut coordinates = 0;
    let mut max_rel_err: f64 = 0.0;
    for (gi, (name, tensors)) in analytic_groups.iter().enumerate() {
        if !slice.covers(name) || tensors.iter().all(|t| t.is_empty()) {
            continue;
        }
        let mut group_max: f64 = 0.0;
        for (ti, grad) in tensors.iter().enumerate() {
            for j in (0..grad.len()).step_by(stride) {
                let original = probe.params.groups_mut()[gi].1[ti][j];
                probe.params.groups_mut()[gi].1[ti][j] = original + STEP;
                let up = eval_loss(&probe, data, &traj, windows, delta)?;
                probe.params.groups_mut()[gi].1[ti][j] = original - STEP;
                let down = eval_loss(&probe, data, &traj, windows, delta)?;
                probe.params.groups_mut()[gi].1[ti][j] = original;
                let numeric = (up - down) / (2.0 * STEP);
                let a = grad[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                group_max = group_max.max(rel);
                coordinates += 1;
            }
        }
        max_rel_err = max_rel_err.max(group_max);
        groups.push((name.to_string(), group_max));
    }
    Ok(GradCheckReport {
        max_rel_err,
        groups,
        coordinates,
    })
}
