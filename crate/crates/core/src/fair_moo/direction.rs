use crate::numerics::ParamVector;

use super::{FairMooError, FairWeights, ObjectiveBundle};

/// `d = Σ w_i ∇l_i`, summed in ascending objective index.
pub fn aggregate_direction(
    bundle: &ObjectiveBundle,
    weights: &FairWeights,
) -> Result<ParamVector, FairMooError> {
    if weights.w.len() != bundle.k() {
        return Err(FairMooError::DimensionMismatch {
            expected: bundle.k(),
            got: weights.w.len(),
        });
    }
    let mut d = bundle.grads()[0].zeros_like();
    for (g, &w) in bundle.grads().iter().zip(&weights.w) {
        d.axpy(w, g)?;
    }
    Ok(d)
}

/// `θ − η·d`.
pub fn update_step(theta: &ParamVector, d: &ParamVector, lr: f64) -> Result<ParamVector, FairMooError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(FairMooError::InvalidLearningRate(lr));
    }
    let mut next = theta.clone();
    next.axpy(-lr, d)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fair_moo::{gram, mpd_weights_closed, SolverConfig, StrategyTag};

    fn weights(w: &[f64]) -> FairWeights {
        FairWeights::new(w.to_vec(), StrategyTag::Ls)
    }

    #[test]
    fn selects_and_cancels() {
        let b = ObjectiveBundle::from_rows(
            vec![1.0; 3],
            vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(aggregate_direction(&b, &weights(&[1., 0., 0.])).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(aggregate_direction(&b, &weights(&[1., 1., 1.])).unwrap().data(), &[0.0, 0.0]);
        assert!(aggregate_direction(&b, &weights(&[1., 1.])).is_err());
    }

    #[test]
    fn single_objective_is_scaled_gradient() {
        let g = vec![1.0, -2.0, 2.0];
        let b = ObjectiveBundle::from_rows(vec![1.0], vec![g.clone()]).unwrap();
        let w = mpd_weights_closed(&gram(&b), &SolverConfig { eps_reg: 0.0, ..Default::default() }).unwrap();
        let d = aggregate_direction(&b, &w).unwrap();
        let scale = 9f64.powf(-2.0 / 3.0);
        for (di, gi) in d.data().iter().zip(&g) {
            assert!((di - scale * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn update() {
        let theta = ParamVector::from_flat("theta", vec![1.0, 1.0]);
        let d = ParamVector::from_flat("theta", vec![1.0, -1.0]);
        assert_eq!(update_step(&theta, &d, 0.5).unwrap().data(), &[0.5, 1.5]);
        assert_eq!(update_step(&theta, &d.zeros_like(), 0.5).unwrap(), theta);
        assert!(update_step(&theta, &d, 0.0).is_err());
        assert!(update_step(&theta, &ParamVector::from_flat("x", vec![0.0; 2]), 0.1).is_err());
    }
}
