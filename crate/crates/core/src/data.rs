//! Series ingestion, z-score normalization, chronological splits and
//! synthetic generators.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::numerics::{Matrix, RngStream};

/// A multichannel series: `T × N_u` values with channel names and optional
/// opaque timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Matrix,
    pub names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
}

impl Series {
    pub fn new(values: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(EchoError::Shape {
                context: "channel names",
                expected: values.cols(),
                actual: names.len(),
            });
        }
        Ok(Self {
            values,
            names,
            timestamps: None,
        })
    }

    /// Names channels `c0, c1, ...`.
    pub fn unnamed(values: Matrix) -> Self {
        let names = (0..values.cols()).map(|i| format!("c{i}")).collect();
        Self {
            values,
            names,
            timestamps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// Rows in `range`, timestamps included.
    pub fn slice(&self, range: Range<usize>) -> Series {
        let c = self.channels();
        let data = self.values.as_slice()[range.start * c..range.end * c].to_vec();
        Series {
            values: Matrix::from_vec(range.len(), c, data).expect("row slice"),
            names: self.names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[range].to_vec()),
        }
    }

    /// Keeps only the listed channels, in the listed order.
    pub fn select(&self, channels: &[usize]) -> Result<Series> {
        for &c in channels {
            if c >= self.channels() {
                return Err(EchoError::Config(format!(
                    "channel {c} out of range for {} channels",
                    self.channels()
                )));
            }
        }
        let mut values = Matrix::zeros(self.len(), channels.len());
        for t in 0..self.len() {
            let row = self.values.row(t);
            for (j, &c) in channels.iter().enumerate() {
                values.set(t, j, row[c]);
            }
        }
        Ok(Series {
            values,
            names: channels.iter().map(|&c| self.names[c].clone()).collect(),
            timestamps: self.timestamps.clone(),
        })
    }

    /// Appends `other` below `self`.
    pub fn concat(&self, other: &Series) -> Result<Series> {
        if other.channels() != self.channels() {
            return Err(EchoError::Shape {
                context: "series concatenation",
                expected: self.channels(),
                actual: other.channels(),
            });
        }
        let mut data = self.values.as_slice().to_vec();
        data.extend_from_slice(other.values.as_slice());
        let timestamps = match (&self.timestamps, &other.timestamps) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Ok(Series {
            values: Matrix::from_vec(self.len() + other.len(), self.channels(), data)?,
            names: self.names.clone(),
            timestamps,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    /// Fill empty cells from the previous row instead of failing.
    pub forward_fill: bool,
}

fn is_time_column(name: &str) -> bool {
    let n = name.trim().to_ascii_lowercase();
    n == "date" || n == "timestamp"
}

/// Reads a comma-separated file with a header row. A first column named
/// `date` or `timestamp` is kept as opaque text. Row and column numbers in
/// errors are 1-based and count data rows and file columns.
pub fn load_csv(path: &Path, options: LoadOptions) -> Result<Series> {
    let file = File::open(path).map_err(|e| EchoError::Load {
        row: 0,
        col: 0,
        msg: format!("cannot open {}: {e}", path.display()),
    })?;
    read_csv(BufReader::new(file), options)
}

pub fn read_csv<R: Read>(reader: R, options: LoadOptions) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let load = |row, col, msg: String| EchoError::Load { row, col, msg };
    let headers = rdr.headers().map_err(|e| load(0, 0, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(load(0, 0, "missing header row".into()));
    }
    let has_time = is_time_column(&headers[0]);
    let first = usize::from(has_time);
    let names: Vec<String> = headers.iter().skip(first).map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(load(0, 0, "no data columns".into()));
    }
    let width = headers.len();
    let mut data = Vec::new();
    let mut stamps = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| load(row, 0, e.to_string()))?;
        if record.len() != width {
            return Err(load(
                row,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        if has_time {
            stamps.push(record[0].to_string());
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate().skip(first) {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                match (&prev, options.forward_fill) {
                    (Some(p), true) => p[j - first],
                    _ => return Err(load(row, j + 1, "missing value".into())),
                }
            } else {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| load(row, j + 1, format!("non-numeric cell {cell:?}")))?
            };
            values.push(v);
        }
        data.extend_from_slice(&values);
        prev = Some(values);
    }
    let rows = data.len() / names.len();
    if rows == 0 {
        return Err(load(1, 0, "empty data".into()));
    }
    Ok(Series {
        values: Matrix::from_vec(rows, names.len(), data)?,
        names,
        timestamps: has_time.then_some(stamps),
    })
}

/// Writes `series` in the format [`load_csv`] reads. Values use the
/// shortest representation that parses back to the same float.
pub fn save_csv(series: &Series, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(series, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(series: &Series, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| EchoError::Io(std::io::Error::other(e));
    let mut header: Vec<&str> = Vec::new();
    if series.timestamps.is_some() {
        header.push("date");
    }
    header.extend(series.names.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..series.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = &series.timestamps {
            rec.push(ts[t].clone());
        }
        rec.extend(series.values.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-channel mean and standard deviation from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &Series) -> Result<Self> {
        if train.is_empty() {
            return Err(EchoError::Input("cannot normalize an empty series".into()));
        }
        let t = train.len() as f64;
        let c = train.channels();
        let mut mean = vec![0.0; c];
        for i in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(train.values.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t);
        let mut var = vec![0.0; c];
        for i in 0..train.len() {
            for (j, v) in train.values.row(i).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let mut std = Vec::with_capacity(c);
        for (j, v) in var.iter().enumerate() {
            let s = (v / t).sqrt();
            if !(s > 1e-12 * mean[j].abs().max(1.0)) {
                return Err(EchoError::Config(format!(
                    "channel {:?} has zero variance in the training split",
                    train.names[j]
                )));
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        crate::error::check_len("normalizer channels", self.channels(), m.cols())
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    pub fn apply_series(&self, s: &Series) -> Result<Series> {
        Ok(Series {
            values: self.apply(&s.values)?,
            ..s.clone()
        })
    }
}

/// Train, validation and test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitPreset::Standard.fractions()
    }
}

impl SplitFractions {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(f > 0.0 && f < 1.0) {
                v.push(format!("split.{name} must lie in (0, 1), got {f}"));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            v.push(format!("split fractions must sum to 1, got {sum}"));
        }
        v
    }
}

/// Named split layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPreset {
    /// 70/10/20.
    Standard,
    /// 60/20/20, the hourly-benchmark layout expressed as fractions.
    Ett,
}

impl SplitPreset {
    pub fn fractions(self) -> SplitFractions {
        match self {
            SplitPreset::Standard => SplitFractions {
                train: 0.7,
                val: 0.1,
                test: 0.2,
            },
            SplitPreset::Ett => SplitFractions {
                train: 0.6,
                val: 0.2,
                test: 0.2,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSplits {
    pub train: Series,
    pub val: Series,
    pub test: Series,
}

impl SeriesSplits {
    /// Global row ranges of the three parts.
    pub fn ranges(&self) -> [Range<usize>; 3] {
        let a = self.train.len();
        let b = a + self.val.len();
        [0..a, a..b, b..b + self.test.len()]
    }

    pub fn concat(&self) -> Series {
        self.train
            .concat(&self.val)
            .and_then(|s| s.concat(&self.test))
            .expect("splits share channels")
    }

    /// Fits a normalizer on train and applies it to all three parts.
    pub fn normalized(&self) -> Result<(SeriesSplits, Normalizer)> {
        let norm = Normalizer::fit(&self.train)?;
        Ok((
            SeriesSplits {
                train: norm.apply_series(&self.train)?,
                val: norm.apply_series(&self.val)?,
                test: norm.apply_series(&self.test)?,
            },
            norm,
        ))
    }
}

/// Chronological split. Validation and test get `floor(f·T)` rows, train
/// gets the rest. Each part must hold at least `min_len` rows.
pub fn split(series: &Series, fractions: SplitFractions, min_len: usize) -> Result<SeriesSplits> {
    let v = fractions.violations();
    if !v.is_empty() {
        return Err(EchoError::Config(v.join("; ")));
    }
    let t = series.len();
    let floor = |f: f64| (f * t as f64 + 1e-9).floor() as usize;
    let n_val = floor(fractions.val);
    let n_test = floor(fractions.test);
    let n_train = t - n_val - n_test;
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < min_len {
            return Err(EchoError::Config(format!(
                "{name} split has {n} rows, needs at least {min_len}"
            )));
        }
    }
    Ok(SeriesSplits {
        train: series.slice(0..n_train),
        val: series.slice(n_train..n_train + n_val),
        test: series.slice(n_train + n_val..t),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

fn lorenz_rhs(s: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    [
        p.sigma * (s[1] - s[0]),
        s[0] * (p.rho - s[2]) - s[1],
        s[0] * s[1] - p.beta * s[2],
    ]
}

fn rk4_step(s: [f64; 3], dt: f64, p: &LorenzParams) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = lorenz_rhs(s, p);
    let k2 = lorenz_rhs(add(s, k1, dt / 2.0), p);
    let k3 = lorenz_rhs(add(s, k2, dt / 2.0), p);
    let k4 = lorenz_rhs(add(s, k3, dt), p);
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates the Lorenz system with fixed-step RK4. Row `i` is the state
/// after `i + 1` steps from `init`.
pub fn lorenz_generate(steps: usize, dt: f64, init: [f64; 3], params: LorenzParams) -> Result<Series> {
    if steps == 0 || !(dt > 0.0) {
        return Err(EchoError::Config(format!(
            "lorenz needs steps >= 1 and dt > 0, got {steps} and {dt}"
        )));
    }
    let mut data = Vec::with_capacity(steps * 3);
    let mut s = init;
    for _ in 0..steps {
        s = rk4_step(s, dt, &params);
        data.extend_from_slice(&s);
    }
    Series::new(
        Matrix::from_vec(steps, 3, data)?,
        vec!["x".into(), "y".into(), "z".into()],
    )
}

/// `sin(2π f t) + noise` per channel, `t = 0, 1, ...`, one channel per entry
/// of `freqs`.
pub fn sine_generate(steps: usize, freqs: &[f64], noise_std: f64, rng: &mut RngStream) -> Result<Series> {
    if steps == 0 || freqs.is_empty() {
        return Err(EchoError::Config("sine needs steps >= 1 and at least one frequency".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(EchoError::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut values = Matrix::zeros(steps, freqs.len());
    for t in 0..steps {
        for (j, f) in freqs.iter().enumerate() {
            let mut v = (2.0 * std::f64::consts::PI * f * t as f64).sin();
            if noise_std > 0.0 {
                v += noise_std * rng.normal();
            }
            values.set(t, j, v);
        }
    }
    Ok(Series::unnamed(values))
}
