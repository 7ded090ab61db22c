//! Spectral radius estimation for reservoir scaling.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, Matrix};
use crate::error::{EchoError, Result};

const MAX_POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;

/// How a spectral radius was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    /// Power iteration converged on a real dominant eigenpair.
    PowerIteration,
    /// Power iteration did not settle (typically a dominant complex pair);
    /// the radius comes from the full eigenvalue set.
    DenseQr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub method: RadiusMethod,
    pub iterations: usize,
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<SpectralEstimate> {
    if !m.is_square() {
        return Err(EchoError::Shape {
            context: "spectral_radius (square matrix)",
            expected: m.rows(),
            actual: m.cols(),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(SpectralEstimate {
            radius: 0.0,
            method: RadiusMethod::PowerIteration,
            iterations: 0,
        });
    }
    if let Some(est) = power_iteration(m) {
        return Ok(est);
    }
    let radius = eigenvalues(m)?
        .iter()
        .map(|&(re, im)| re.hypot(im))
        .fold(0.0, f64::max);
    Ok(SpectralEstimate {
        radius,
        method: RadiusMethod::DenseQr,
        iterations: MAX_POWER_ITERS,
    })
}

fn power_iteration(m: &Matrix) -> Option<SpectralEstimate> {
    let n = m.rows();
    // Deterministic, non-symmetric start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut prev = f64::NAN;
    for it in 1..=MAX_POWER_ITERS {
        let w = m.matvec(&v);
        let lambda = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 || !nw.is_finite() {
            return None;
        }
        if (lambda.abs() - prev).abs() < POWER_TOL {
            // A settled Rayleigh quotient must also be a genuine eigenpair;
            // a rotating complex pair can pause the quotient briefly.
            let resid: f64 = w
                .iter()
                .zip(&v)
                .map(|(wi, vi)| (wi - lambda * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid <= RESIDUAL_TOL.max(1e-6 * lambda.abs()) {
                return Some(SpectralEstimate {
                    radius: lambda.abs(),
                    method: RadiusMethod::PowerIteration,
                    iterations: it,
                });
            }
        }
        prev = lambda.abs();
        v = w.into_iter().map(|x| x / nw).collect();
    }
    None
}

/// All eigenvalues `(re, im)` of a square matrix: reduction to upper
/// Hessenberg form by stabilized elimination, then Francis double-shift QR.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    let n = m.rows();
    // 1-based working copy keeps the index arithmetic of the classic
    // formulation intact.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m.get(i, j);
        }
    }
    hessenberg(&mut a, n);
    for i in 1..=n {
        for j in 1..=n {
            if i > j + 1 {
                a[i][j] = 0.0;
            }
        }
    }
    hqr(&mut a, n)
}

fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().take(n + 1).skip(1) {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().take(n + 1).skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names)]
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<(f64, f64)>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[nn - 1][nn - 1];
            let mut w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != 0.0 {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = 0.0;
                    wi[nn] = 0.0;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if its >= 60 {
                return Err(EchoError::Degenerate(
                    "eigenvalue iteration did not converge".into(),
                ));
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            let mut z;
            loop {
                z = a[m][m];
                r = x - z;
                let s0 = y - z;
                p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s0;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

/// Rescales `m` so its spectral radius equals `target`.
pub fn scale_to_radius(m: &Matrix, target: f64) -> Result<Matrix> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(EchoError::Config(format!(
            "target spectral radius must be positive, got {target}"
        )));
    }
    let est = spectral_radius(m)?;
    if est.radius < 1e-12 {
        return Err(EchoError::Degenerate(format!(
            "spectral radius {} is zero; cannot rescale",
            est.radius
        )));
    }
    Ok(m.scaled(target / est.radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{uniform_matrix, RngStream};

    #[test]
    fn identity_radius_is_one() {
        let est = spectral_radius(&Matrix::identity(2)).unwrap();
        assert!((est.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_radius() {
        let est = spectral_radius(&Matrix::from_diag(&[0.5, -0.9])).unwrap();
        assert!((est.radius - 0.9).abs() < 1e-9, "{est:?}");
    }

    #[test]
    fn rotation_falls_back_to_dense() {
        // Eigenvalues ±i·0.8: pure complex pair, power iteration cycles.
        let m = Matrix::from_rows(&[vec![0.0, -0.8], vec![0.8, 0.0]]);
        let est = spectral_radius(&m).unwrap();
        assert_eq!(est.method, RadiusMethod::DenseQr);
        assert!((est.radius - 0.8).abs() < 1e-12);
    }

    #[test]
    fn non_square_rejected() {
        assert!(spectral_radius(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scaling_identity_and_diagonal() {
        let s = scale_to_radius(&Matrix::identity(3), 0.5).unwrap();
        assert_eq!(s, Matrix::identity(3).scaled(0.5));
        let d = scale_to_radius(&Matrix::from_diag(&[2.0, 1.0]), 0.9).unwrap();
        assert!((d.get(0, 0) - 0.9).abs() < 1e-9);
        assert!((d.get(1, 1) - 0.45).abs() < 1e-9);
    }

    #[test]
    fn nilpotent_is_degenerate() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(matches!(scale_to_radius(&m, 0.5), Err(EchoError::Degenerate(_))));
    }

    #[test]
    fn random_scaling_hits_target() {
        let mut rng = RngStream::new(5, 5);
        let m = uniform_matrix(100, 100, -1.0, 1.0, 1.0, &mut rng).unwrap();
        let s = scale_to_radius(&m, 0.7).unwrap();
        let r = spectral_radius(&s).unwrap().radius;
        assert!((0.699..=0.701).contains(&r), "{r}");
    }

    #[test]
    fn eigenvalues_of_triangular() {
        let m = Matrix::from_rows(&[
            vec![2.0, 1.0, 3.0],
            vec![0.0, -1.5, 4.0],
            vec![0.0, 0.0, 0.25],
        ]);
        let mut ev: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|e| e.0).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 1.5).abs() < 1e-12);
        assert!((ev[1] - 0.25).abs() < 1e-12);
        assert!((ev[2] - 2.0).abs() < 1e-12);
    }
}
