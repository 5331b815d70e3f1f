use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

use super::DiffusionError;

/// Denominator of the masked losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the total element count, so small regions contribute
    /// little loss.
    #[default]
    FullCount,
    /// Divide by the number of masked elements (at least one).
    MaskedCount,
}

impl Normalization {
    /// Divisor for a loss over `total` elements of which `masked` are in the mask.
    pub fn divisor(self, total: usize, masked: f64) -> f64 {
        match self {
            Normalization::FullCount => total as f64,
            Normalization::MaskedCount => masked.max(1.0),
        }
    }
}

/// `‖m ⊙ (ε − ε̂)‖² / divisor`.
///
/// `mask` is either the shape of `eps` or a trailing block of it (one
/// spatial mask repeated over the leading axes).
pub fn masked_mse(eps: &Tensor, eps_hat: &Tensor, mask: &Tensor, norm: Normalization) -> Result<f64, DiffusionError> {
    if eps.shape() != eps_hat.shape() {
        return Err(DiffusionError::Shape(format!(
            "eps {:?} vs eps_hat {:?}",
            eps.shape(),
            eps_hat.shape()
        )));
    }
    let (es, ms) = (eps.shape(), mask.shape());
    if ms.len() > es.len() || es[es.len() - ms.len()..] != *ms {
        return Err(DiffusionError::Shape(format!(
            "mask {ms:?} does not broadcast against {es:?}"
        )));
    }
    let m = mask.data();
    let mut acc = 0.0;
    for (i, (&t, &p)) in eps.data().iter().zip(eps_hat.data()).enumerate() {
        let r = m[i % m.len()] * (t - p);
        acc += r * r;
    }
    let masked = mask.sum() * (eps.len() / mask.len()) as f64;
    Ok(acc / norm.divisor(eps.len(), masked))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions() {
        let eps = Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let hat = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let ones = Tensor::full(&[2], 1.0);
        let full = masked_mse(&eps, &hat, &ones, Normalization::FullCount).unwrap();
        assert_eq!(full, (1.0 + 1.0 + 0.25 + 4.0) / 4.0);
        assert_eq!(masked_mse(&eps, &hat, &Tensor::zeros(&[2]), Normalization::FullCount).unwrap(), 0.0);
        assert_eq!(masked_mse(&eps, &eps, &ones, Normalization::FullCount).unwrap(), 0.0);
        let first = Tensor::vector(&[1.0, 0.0]);
        assert_eq!(masked_mse(&eps, &hat, &first, Normalization::FullCount).unwrap(), 1.25 / 4.0);
        assert_eq!(masked_mse(&eps, &hat, &first, Normalization::MaskedCount).unwrap(), 1.25 / 2.0);
        assert!(masked_mse(&eps, &hat, &Tensor::vector(&[1.0; 3]), Normalization::FullCount).is_err());
    }
}
