use crate::numerics::tensor::dot;
use crate::numerics::{sym_eig, SymEigen, SymMatrix};

use super::{FairMooError, ObjectiveBundle};

/// Relative tolerance of the numerical PSD test.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// `K_ij = ∇l_i·∇l_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix(SymMatrix);

impl GramMatrix {
    pub fn from_sym(k: SymMatrix) -> Self {
        Self(k)
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.dim()
    }

    /// Eigendecomposition, failing if the smallest eigenvalue is below
    /// `-1e-9·λ_max`.
    pub fn checked_eig(&self) -> Result<SymEigen, FairMooError> {
        let eig = sym_eig(&self.0)?;
        let max = eig.values.first().copied().unwrap_or(0.0);
        let min = eig.values.last().copied().unwrap_or(0.0);
        if min < -PSD_TOLERANCE * max.max(0.0) {
            return Err(FairMooError::Indefinite { min, max });
        }
        Ok(eig)
    }
}

/// Gram matrix of the bundle's gradients; each pair is computed once.
pub fn gram(bundle: &ObjectiveBundle) -> GramMatrix {
    let g = bundle.grads();
    GramMatrix(SymMatrix::from_upper(bundle.k(), |i, j| {
        dot(g[i].data(), g[j].data())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_rows_give_identity() {
        let b = ObjectiveBundle::from_rows(
            vec![1.0; 3],
            vec![vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]],
        )
        .unwrap();
        assert_eq!(gram(&b).matrix(), &SymMatrix::identity(3));
    }

    #[test]
    fn worked_example() {
        let b = ObjectiveBundle::from_rows(
            vec![1.0; 3],
            vec![vec![1., 0.], vec![0., 2.], vec![1., 2.]],
        )
        .unwrap();
        let expected =
            SymMatrix::from_rows(&[vec![1., 0., 1.], vec![0., 4., 4.], vec![1., 4., 5.]]).unwrap();
        assert_eq!(gram(&b).matrix(), &expected);
    }

    #[test]
    fn indefinite_rejected() {
        let k = GramMatrix::from_sym(SymMatrix::diagonal(&[1.0, -0.1]));
        assert!(matches!(k.checked_eig(), Err(FairMooError::Indefinite { .. })));
        let k = GramMatrix::from_sym(SymMatrix::diagonal(&[1.0, -1e-12]));
        assert!(k.checked_eig().is_ok());
    }
}
