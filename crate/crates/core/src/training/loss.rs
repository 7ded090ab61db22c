use crate::error::{check_len, EchoError, Result};

/// Mean Huber loss over all entries.
pub fn huber(target: &[f64], pred: &[f64], delta: f64) -> Result<f64> {
    check_len("huber inputs", target.len(), pred.len())?;
    if !(delta > 0.0) {
        return Err(EchoError::Config(format!("huber delta must be positive, got {delta}")));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| huber_point(p - t, delta))
        .sum();
    Ok(sum / target.len() as f64)
}

pub fn huber_point(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber_point`] with respect to `e`.
pub fn huber_point_grad(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Gradient of [`huber`] with respect to `pred`.
pub fn huber_grad(target: &[f64], pred: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_len("huber inputs", target.len(), pred.len())?;
    let n = target.len().max(1) as f64;
    Ok(target
        .iter()
        .zip(pred)
        .map(|(t, p)| huber_point_grad(p - t, delta) / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_cases() {
        assert_eq!(huber(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_eq!(huber(&[0.0], &[0.5], 1.0).unwrap(), 0.125);
        assert_eq!(huber(&[0.0], &[-2.0], 1.0).unwrap(), 1.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(huber(&[0.0], &[0.0, 1.0], 1.0), Err(EchoError::Shape { .. })));
    }

    #[test]
    fn gradient_continuous_at_threshold() {
        for (delta, sign) in [(1.0, 1.0), (0.3, -1.0)] {
            let h = 1e-7;
            let at = sign * delta;
            let left = (huber_point(at, delta) - huber_point(at - h, delta)) / h;
            let right = (huber_point(at + h, delta) - huber_point(at, delta)) / h;
            assert!((left - delta * sign).abs() < 1e-6);
            assert!((right - delta * sign).abs() < 1e-6);
            assert_eq!(huber_point_grad(at, delta), delta * sign);
        }
    }

    proptest! {
        #[test]
        fn bounded_by_half_square(e in prop::collection::vec(-50.0f64..50.0, 1..64), delta in 0.01f64..5.0) {
            for &x in &e {
                prop_assert!(huber_point(x, delta) <= 0.5 * x * x);
            }
            let zeros = vec![0.0; e.len()];
            let mse_half = 0.5 * e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64;
            prop_assert!(huber(&zeros, &e, delta).unwrap() <= mse_half * (1.0 + 1e-12));
        }

        #[test]
        fn gradient_matches_differences(e in -4.0f64..4.0, delta in 0.1f64..2.0) {
            prop_assume!((e.abs() - delta).abs() > 1e-4);
            let h = 1e-6;
            let fd = (huber_point(e + h, delta) - huber_point(e - h, delta)) / (2.0 * h);
            prop_assert!((fd - huber_point_grad(e, delta)).abs() < 1e-6);
        }
    }
}
