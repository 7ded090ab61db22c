use std::ops::Range;

use crate::data::SeriesSplits;
use crate::error::{EchoError, Result};
use crate::numerics::Matrix;

/// Rolling `(window, target)` pairs: rows `t−k..t` and `t..t+τ` for
/// `t = k ..= T−τ`, in temporal order.
pub fn build_windows(series: &Matrix, k: usize, tau: usize) -> Result<Vec<(Matrix, Matrix)>> {
    window_starts(series.rows(), k, tau)?
        .map(|s| Ok((rows(series, s..s + k)?, rows(series, s + k..s + k + tau)?)))
        .collect()
}

fn window_starts(len: usize, k: usize, tau: usize) -> Result<Range<usize>> {
    if k == 0 {
        return Err(EchoError::Config("lookback must be at least 1".into()));
    }
    if len < k + tau {
        return Err(EchoError::Input(format!(
            "series of {len} rows is shorter than lookback {k} plus horizon {tau}"
        )));
    }
    Ok(0..len - k - tau + 1)
}

pub(crate) fn rows(m: &Matrix, r: Range<usize>) -> Result<Matrix> {
    let c = m.cols();
    Matrix::from_vec(r.len(), c, m.as_slice()[r.start * c..r.end * c].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// One forecasting example located in the concatenated series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    /// First window row.
    pub start: usize,
    /// Reservoir state index: the last window row.
    pub state: usize,
    /// First target row.
    pub target: usize,
}

/// A normalized series with its split boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub series: Matrix,
    pub ranges: [Range<usize>; 3],
}

impl Dataset {
    pub fn from_splits(splits: &SeriesSplits) -> Self {
        Self {
            series: splits.concat().values,
            ranges: splits.ranges(),
        }
    }

    pub fn channels(&self) -> usize {
        self.series.cols()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        self.ranges[split.index()].clone()
    }

    /// Windows lying entirely inside `split`, skipping those whose state
    /// index falls before `washout`.
    pub fn windows(&self, split: Split, k: usize, tau: usize, washout: usize) -> Result<Vec<WindowRef>> {
        let r = self.range(split);
        Ok(window_starts(r.len(), k, tau)?
            .map(|s| {
                let start = r.start + s;
                WindowRef {
                    start,
                    state: start + k - 1,
                    target: start + k,
                }
            })
            .filter(|w| w.state >= washout)
            .collect())
    }

    pub fn window(&self, w: &WindowRef, k: usize) -> Matrix {
        rows(&self.series, w.start..w.start + k).expect("window inside series")
    }

    pub fn target(&self, w: &WindowRef, tau: usize) -> Matrix {
        rows(&self.series, w.target..w.target + tau).expect("target inside series")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> Matrix {
        Matrix::from_vec(t, 1, (0..t).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_windows(&ramp(5), 2, 1).unwrap().len(), 3);
        assert_eq!(build_windows(&ramp(7), 4, 3).unwrap().len(), 1);
        assert!(matches!(build_windows(&ramp(6), 4, 3), Err(EchoError::Input(_))));
    }

    #[test]
    fn first_target_starts_at_lookback() {
        let w = build_windows(&ramp(10), 3, 2).unwrap();
        assert_eq!(w[0].0.as_slice(), [0.0, 1.0, 2.0]);
        assert_eq!(w[0].1.as_slice(), [3.0, 4.0]);
        assert_eq!(w.last().unwrap().1.as_slice(), [8.0, 9.0]);
    }

    #[test]
    fn dataset_windows_stay_in_split() {
        let d = Dataset {
            series: ramp(30),
            ranges: [0..20, 20..25, 25..30],
        };
        let val = d.windows(Split::Val, 3, 2, 0).unwrap();
        assert_eq!(val.len(), 1);
        assert_eq!(d.window(&val[0], 3).as_slice(), [20.0, 21.0, 22.0]);
        assert_eq!(d.target(&val[0], 2).as_slice(), [23.0, 24.0]);
        assert_eq!(val[0].state, 22);
        let train = d.windows(Split::Train, 3, 2, 5).unwrap();
        assert_eq!(train[0].state, 5);
        assert_eq!(train.len(), 16 - 3);
    }
}
