//! Central finite differences, the independent oracle for every adjoint.

use super::{NumericsError, ParamVector};

/// Central-difference gradient `(f(θ+h·e_j) − f(θ−h·e_j)) / 2h`.
pub fn finite_diff<F>(f: F, theta: &ParamVector, h: f64) -> Result<ParamVector, NumericsError>
where
    F: Fn(&ParamVector) -> Result<f64, NumericsError>,
{
    let mut grads = finite_diff_multi(|p| Ok(vec![f(p)?]), theta, h)?;
    Ok(grads.remove(0))
}

/// Central differences of a vector-valued function, one gradient per
/// output. Each perturbed point is evaluated once for all outputs.
pub fn finite_diff_multi<F>(
    f: F,
    theta: &ParamVector,
    h: f64,
) -> Result<Vec<ParamVector>, NumericsError>
where
    F: Fn(&ParamVector) -> Result<Vec<f64>, NumericsError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumericsError::InvalidStep(h));
    }
    let mut probe = theta.clone();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for j in 0..theta.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[j] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[j] = orig;
        if columns.is_empty() {
            columns = vec![Vec::with_capacity(theta.len()); plus.len()];
        }
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            if !p.is_finite() || !m.is_finite() {
                return Err(NumericsError::NonFiniteEvaluation { coordinate: j });
            }
            columns[i].push((p - m) / (2.0 * h));
        }
    }
    columns
        .into_iter()
        .map(|c| theta.with_data(c))
        .collect()
}

/// Largest elementwise relative error `|a − n| / max(|a|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let theta = ParamVector::from_flat("x", vec![1.0, 2.0]);
        let g = finite_diff(
            |p| Ok(0.5 * p.data().iter().map(|v| v * v).sum::<f64>()),
            &theta,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
        assert!((g.data()[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cube() {
        let theta = ParamVector::from_flat("x", vec![1.0]);
        let g = finite_diff(|p| Ok(p.data()[0].powi(3)), &theta, 1e-5).unwrap();
        assert!((g.data()[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_names_the_coordinate() {
        let theta = ParamVector::from_flat("x", vec![1.0, 1e-6]);
        let err = finite_diff(|p| Ok(p.data()[1].ln()), &theta, 1e-5).unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteEvaluation { coordinate: 1 }));
        assert!(finite_diff(|_| Ok(0.0), &theta, 0.0).is_err());
    }
}
