use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::numerics::RngStream;

/// Dense row-major matrix of `f64`. Sparse reservoirs store their zero
/// pattern implicitly as exact zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EchoError::Shape {
                context: "matrix construction",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(i), x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), out);
            }
        }
    }

    /// `self += scale · a bᵀ`
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s != 0.0 {
                axpy(s, b, self.row_mut(i));
            }
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), orow);
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn shared dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a != 0.0 {
                    axpy(a, brow, &mut out.data[i * other.cols..(i + 1) * other.cols]);
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt shared dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(arow, other.row(j));
            }
        }
        out
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(1.0, &other.data, &mut self.data);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Random matrix whose entries are independently nonzero with probability
/// `density`, nonzero values uniform on `[low, high]`.
pub fn uniform_matrix(
    rows: usize,
    cols: usize,
    low: f64,
    high: f64,
    density: f64,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(EchoError::Config(format!(
            "uniform range requires low < high, got [{low}, {high}]"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(EchoError::Config(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    for x in m.data.iter_mut() {
        if density >= 1.0 || rng.bernoulli(density) {
            *x = rng.uniform(low, high);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_density_fills_every_entry() {
        let mut rng = RngStream::new(1, 0);
        let m = uniform_matrix(2, 2, -1.0, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(m.nnz(), 4);
        assert!(m.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn empty_interval_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            uniform_matrix(2, 2, 0.5, 0.5, 1.0, &mut rng),
            Err(EchoError::Config(_))
        ));
        assert!(uniform_matrix(2, 2, -1.0, 1.0, 0.0, &mut rng).is_err());
        assert!(uniform_matrix(2, 2, -1.0, 1.0, 1.5, &mut rng).is_err());
    }

    #[test]
    fn density_is_respected() {
        let mut rng = RngStream::new(42, 9);
        let m = uniform_matrix(100, 100, -1.0, 1.0, 0.3, &mut rng).unwrap();
        let frac = m.nnz() as f64 / 10_000.0;
        assert!((0.25..=0.35).contains(&frac), "nonzero fraction {frac}");
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = RngStream::new(3, 0);
        let a = uniform_matrix(3, 4, -1.0, 1.0, 1.0, &mut rng).unwrap();
        let b = uniform_matrix(4, 5, -1.0, 1.0, 1.0, &mut rng).unwrap();
        let ab = a.matmul(&b);
        let ab_tn = a.transpose().matmul_tn(&b);
        let ab_nt = a.matmul_nt(&b.transpose());
        for ((x, y), z) in ab.as_slice().iter().zip(ab_tn.as_slice()).zip(ab_nt.as_slice()) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
        let v = vec![0.5, -1.0, 2.0, 0.25];
        let mv = a.matvec(&v);
        let vm = Matrix::from_vec(4, 1, v.clone()).unwrap();
        let expect = a.matmul(&vm);
        assert_eq!(mv, expect.into_vec());
    }
}
