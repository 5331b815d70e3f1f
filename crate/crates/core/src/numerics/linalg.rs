//! Small symmetric matrices: cyclic Jacobi eigendecomposition and
//! fractional powers through the eigenbasis.

use super::NumericsError;

/// Largest dimension accepted by [`sym_eig`].
pub const MAX_SYM_DIM: usize = 16;

/// Exactly symmetric `k×k` matrix, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds the matrix from its upper triangle: `f(i, j)` is called once
    /// per pair `i ≤ j` and mirrored.
    pub fn from_upper(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = f(i, j);
                entries[i * k + j] = v;
                entries[j * k + i] = v;
            }
        }
        Self { k, entries }
    }

    /// Accepts rows that are symmetric up to `1e-12` relative; the stored
    /// matrix mirrors the upper triangle.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(NumericsError::InvalidShape(vec![k]));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..k {
            for j in i + 1..k {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(NumericsError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self::from_upper(k, |i, j| rows[i][j]))
    }

    pub fn identity(k: usize) -> Self {
        Self::from_upper(k, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_upper(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Plain matrix product; the result is symmetrized from its upper
    /// triangle, which is exact when the operands commute.
    pub fn mul(&self, other: &SymMatrix) -> SymMatrix {
        let k = self.k;
        SymMatrix::from_upper(k, |i, j| (0..k).map(|p| self.get(i, p) * other.get(p, j)).sum())
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix {
            k: self.k,
            entries: self.entries.iter().map(|v| v * c).collect(),
        }
    }

    /// `P·K·Pᵀ` for the permutation sending index `i` to `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> SymMatrix {
        let mut inv = vec![0; self.k];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        SymMatrix::from_upper(self.k, |i, j| self.get(inv[i], inv[j]))
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Eigendecomposition `K = Q·diag(values)·Qᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Row-major `k×k`; column `j` is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector_entry(&self, row: usize, col: usize) -> f64 {
        self.vectors[row * self.dim() + col]
    }

    /// `Q·diag(f(λ))·Qᵀ`, built once per upper-triangle pair.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let k = self.dim();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        SymMatrix::from_upper(k, |i, j| {
            let mut acc = 0.0;
            for p in 0..k {
                acc += self.vector_entry(i, p) * mapped[p] * self.vector_entry(j, p);
            }
            acc
        })
    }

    /// `max |QᵀQ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                let d: f64 = (0..k)
                    .map(|r| self.vector_entry(r, a) * self.vector_entry(r, b))
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix with `k ≤ 16`.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen, NumericsError> {
    let k = m.dim();
    if k > MAX_SYM_DIM {
        return Err(NumericsError::DimensionTooLarge(k));
    }
    let mut a = m.entries.clone();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                off += a[i * k + j] * a[i * k + j];
            }
        }
        if off.sqrt() <= f64::EPSILON * 1e-3 * frob || off == 0.0 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * k + p];
                let aqq = a[q * k + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                a[p * k + q] = 0.0;
                a[q * k + p] = 0.0;
                for r in 0..k {
                    let vrp = v[r * k + p];
                    let vrq = v[r * k + q];
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| a[y * k + y].total_cmp(&a[x * k + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i * k + i]).collect();
    let mut vectors = vec![0.0; k * k];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..k {
            vectors[r * k + col] = v[r * k + src];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// `Q·(Λ + eps_reg·I)^p·Qᵀ`.
///
/// For negative `p` every shifted eigenvalue must be positive; for
/// non-integer `p` none may be negative.
pub fn mat_frac_power(m: &SymMatrix, p: f64, eps_reg: f64) -> Result<SymMatrix, NumericsError> {
    let eig = sym_eig(m)?;
    frac_power_of(&eig, p, eps_reg)
}

/// [`mat_frac_power`] from an existing decomposition.
pub fn frac_power_of(eig: &SymEigen, p: f64, eps_reg: f64) -> Result<SymMatrix, NumericsError> {
    if !(eps_reg >= 0.0) || !p.is_finite() {
        return Err(NumericsError::InvalidPower { p, eps_reg });
    }
    for &l in &eig.values {
        let shifted = l + eps_reg;
        if (p < 0.0 && shifted <= 0.0) || (p.fract() != 0.0 && shifted < 0.0) {
            return Err(NumericsError::Singular { eigenvalue: l, p });
        }
    }
    if p == 1.0 && eps_reg == 0.0 {
        return Ok(eig.reconstruct_with(|l| l));
    }
    Ok(eig.reconstruct_with(|l| (l + eps_reg).powf(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let e = sym_eig(&SymMatrix::diagonal(&[1.0, 9.0, 4.0])).unwrap();
        assert_eq!(e.values, vec![9.0, 4.0, 1.0]);
    }

    #[test]
    fn fractional_powers_of_diagonals() {
        let w = mat_frac_power(&SymMatrix::identity(3), -2.0 / 3.0, 0.0).unwrap();
        assert!(w.max_abs_diff(&SymMatrix::identity(3)) < 1e-15);
        let w = mat_frac_power(&SymMatrix::diagonal(&[8.0, 27.0]), -2.0 / 3.0, 0.0).unwrap();
        assert!((w.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((w.get(1, 1) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(w.get(0, 1), 0.0);
    }

    #[test]
    fn singular_negative_power_names_eigenvalue() {
        let k = SymMatrix::diagonal(&[1.0, 0.0]);
        match mat_frac_power(&k, -0.5, 0.0) {
            Err(NumericsError::Singular { eigenvalue, .. }) => assert_eq!(eigenvalue, 0.0),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(mat_frac_power(&k, -0.5, 1e-10).is_ok());
    }

    #[test]
    fn rejects_asymmetric_rows_and_large_dims() {
        assert!(matches!(
            SymMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]),
            Err(NumericsError::NotSymmetric { i: 0, j: 1 })
        ));
        assert!(sym_eig(&SymMatrix::identity(17)).is_err());
    }
}
