use crate::numerics::ParamVector;

use super::{FairMooError, ObjectiveBundle};

/// Per-objective "rates" of a shared direction `d` and the potential-delay
/// functionals built from them.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayDiagnostics {
    /// `∇l_i·d`.
    pub alignment: Vec<f64>,
    /// Signed length of the projection of `d` onto `∇l_i`, `(∇l_i·d)/‖∇l_i‖`.
    pub proj: Vec<f64>,
    /// `1/proj_i`, `None` where `proj_i ≤ 0`.
    pub potential_delay: Vec<Option<f64>>,
    /// `Σ 1/proj_i`; `None` unless every projection is positive.
    pub f: Option<f64>,
    /// `Σ 1/(∇l_i·d)`; `None` unless every alignment is positive.
    pub f_prime: Option<f64>,
    /// `max_i ‖∇l_i‖`.
    pub m: f64,
    /// `F ≤ M·F′ + 1e-9`; `None` when either side is undefined.
    pub bound_holds: Option<bool>,
}

impl DelayDiagnostics {
    /// Objectives that `d` does not strictly descend.
    pub fn undefined(&self) -> Vec<usize> {
        (0..self.proj.len())
            .filter(|&i| self.potential_delay[i].is_none())
            .collect()
    }
}

pub fn delay_diagnostics(
    bundle: &ObjectiveBundle,
    d: &ParamVector,
) -> Result<DelayDiagnostics, FairMooError> {
    if d.data().iter().all(|&x| x == 0.0) {
        return Err(FairMooError::ZeroDirection);
    }
    let norms = bundle.grad_norms();
    let mut alignment = Vec::with_capacity(bundle.k());
    for g in bundle.grads() {
        alignment.push(g.dot(d)?);
    }
    let proj: Vec<f64> = alignment
        .iter()
        .zip(&norms)
        .map(|(&a, &n)| if n > 0.0 { a / n } else { 0.0 })
        .collect();
    let potential_delay: Vec<Option<f64>> =
        proj.iter().map(|&p| (p > 0.0).then(|| 1.0 / p)).collect();
    let f = potential_delay.iter().copied().sum::<Option<f64>>();
    let f_prime = alignment
        .iter()
        .map(|&a| (a > 0.0).then(|| 1.0 / a))
        .sum::<Option<f64>>();
    let m = norms.iter().copied().fold(0.0, f64::max);
    let bound_holds = match (f, f_prime) {
        (Some(f), Some(fp)) => Some(f <= m * fp + 1e-9),
        _ => None,
    };
    Ok(DelayDiagnostics {
        alignment,
        proj,
        potential_delay,
        f,
        f_prime,
        m,
        bound_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_objective_along_its_gradient() {
        let b = ObjectiveBundle::from_rows(vec![1.0], vec![vec![3.0, 4.0]]).unwrap();
        let d = ParamVector::from_flat("theta", vec![3.0, 4.0]);
        let diag = delay_diagnostics(&b, &d).unwrap();
        assert_eq!(diag.proj, vec![5.0]);
        assert_eq!(diag.potential_delay, vec![Some(0.2)]);
        assert_eq!(diag.bound_holds, Some(true));
    }

    #[test]
    fn orthogonal_objective_is_flagged() {
        let b = ObjectiveBundle::from_rows(vec![1.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = ParamVector::from_flat("theta", vec![1.0, 0.0]);
        let diag = delay_diagnostics(&b, &d).unwrap();
        assert_eq!(diag.undefined(), vec![1]);
        assert_eq!(diag.f, None);
        assert_eq!(diag.f_prime, None);
        assert_eq!(diag.bound_holds, None);
    }

    #[test]
    fn zero_direction_rejected() {
        let b = ObjectiveBundle::from_rows(vec![1.0], vec![vec![1.0]]).unwrap();
        let d = ParamVector::from_flat("theta", vec![0.0]);
        assert!(matches!(delay_diagnostics(&b, &d), Err(FairMooError::ZeroDirection)));
    }
}
