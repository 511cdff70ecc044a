use super::params::ParameterVector;
use crate::error::{Error, Result};

/// Compares an analytic gradient with central differences.
///
/// `f` returns the scalar value and its analytic gradient (flat, laid out
/// like `theta`). Only the coordinates in `probes` are perturbed; pass `None`
/// to check every coordinate. Returns the largest
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, theta: &ParameterVector, h: f64, probes: Option<&[usize]>) -> Result<f64>
where
    F: Fn(&ParameterVector) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let (_, analytic) = f(theta)?;
    if analytic.len() != theta.total_len() {
        return Err(Error::LayoutMismatch(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.total_len()
        )));
    }
    let all: Vec<usize>;
    let coords = match probes {
        Some(p) => p,
        None => {
            all = (0..theta.total_len()).collect();
            &all
        }
    };

    let mut worst = 0.0f64;
    let mut shifted = theta.clone();
    for &i in coords {
        let orig = theta.as_slice()[i];
        shifted.as_mut_slice()[i] = orig + h;
        let plus = f(&shifted)?.0;
        shifted.as_mut_slice()[i] = orig - h;
        let minus = f(&shifted)?.0;
        shifted.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("f(θ ± h) at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::RealArray;

    fn theta() -> ParameterVector {
        let mut p = ParameterVector::new();
        p.push("x", RealArray::row(&[0.3, -1.2, 2.0])).unwrap();
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let f = |p: &ParameterVector| {
            let x = p.as_slice();
            let v = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
            Ok((v, g))
        };
        assert!(finite_diff_check(f, &theta(), 1e-5, None).unwrap() < 1e-7);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = |p: &ParameterVector| Ok((4.0, vec![0.0; p.total_len()]));
        assert_eq!(finite_diff_check(f, &theta(), 1e-5, None).unwrap(), 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |p: &ParameterVector| {
            let x = p.as_slice();
            Ok((x[0] * x[0], vec![1.0, 0.0, 0.0]))
        };
        assert!(finite_diff_check(f, &theta(), 1e-5, Some(&[0])).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_values_are_errors() {
        let f = |p: &ParameterVector| {
            let x = p.as_slice()[0];
            let v = if x > 0.3 { f64::INFINITY } else { x };
            Ok((v, vec![1.0, 0.0, 0.0]))
        };
        assert!(matches!(
            finite_diff_check(f, &theta(), 1e-5, Some(&[0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_step_is_rejected() {
        let f = |p: &ParameterVector| Ok((0.0, vec![0.0; p.total_len()]));
        assert!(finite_diff_check(f, &theta(), 0.0, None).is_err());
    }
}
