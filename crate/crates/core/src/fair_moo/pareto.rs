use super::{gram, FairMooError, ObjectiveBundle};

/// Largest `k` accepted by [`pareto_stationarity`].
pub const MAX_PARETO_OBJECTIVES: usize = 8;

const FW_TOL: f64 = 1e-8;
const FW_MAX_ITERS: usize = 100_000;

/// `min_{λ∈Δ} ‖Σ λ_i ∇l_i‖`, zero exactly at Pareto-stationary points.
///
/// Minimizes `λᵀKλ` by away-step Frank–Wolfe with exact line search until
/// the duality gap is below `1e-8²` (relative to the largest squared
/// gradient norm when that exceeds one), then keeps the best of that point,
/// the simplex vertices and the closed-form minimizer of every edge. The
/// returned norm is evaluated from the gradients, not from `K`.
pub fn pareto_stationarity(bundle: &ObjectiveBundle) -> Result<f64, FairMooError> {
    let k = bundle.k();
    if k > MAX_PARETO_OBJECTIVES {
        return Err(FairMooError::TooManyObjectives {
            max: MAX_PARETO_OBJECTIVES,
            got: k,
        });
    }
    let kmat = gram(bundle);
    let km = |i: usize, j: usize| kmat.matrix().get(i, j);

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        candidates.push(v);
    }
    for i in 0..k {
        for j in i + 1..k {
            // Minimizer of ‖(1−t)g_i + t·g_j‖² over t ∈ [0,1].
            let den = km(i, i) - 2.0 * km(i, j) + km(j, j);
            if den > 0.0 {
                let t = ((km(i, i) - km(i, j)) / den).clamp(0.0, 1.0);
                let mut v = vec![0.0; k];
                v[i] = 1.0 - t;
                v[j] = t;
                candidates.push(v);
            }
        }
    }
    candidates.push(frank_wolfe(&kmat.matrix().rows(), k));

    let mut best = f64::INFINITY;
    for lambda in &candidates {
        let norm = combination_norm(bundle, lambda)?;
        if norm < best {
            best = norm;
        }
    }
    Ok(best)
}

fn combination_norm(bundle: &ObjectiveBundle, lambda: &[f64]) -> Result<f64, FairMooError> {
    let mut d = bundle.grads()[0].zeros_like();
    for (g, &l) in bundle.grads().iter().zip(lambda) {
        if l != 0.0 {
            d.axpy(l, g)?;
        }
    }
    Ok(d.norm())
}

fn frank_wolfe(k: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mul = |l: &[f64]| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| k[i][j] * l[j]).sum()).collect()
    };
    let scale = (0..n).map(|i| k[i][i]).fold(1.0, f64::max);
    let tol = FW_TOL * FW_TOL * scale;
    let mut lambda = vec![1.0 / n as f64; n];
    for _ in 0..FW_MAX_ITERS {
        let grad: Vec<f64> = mul(&lambda).iter().map(|v| 2.0 * v).collect();
        let gl: f64 = grad.iter().zip(&lambda).map(|(a, b)| a * b).sum();
        let s = argmin(&grad, |_| true);
        let a = argmax(&grad, |i| lambda[i] > 0.0);
        let fw_gap = gl - grad[s];
        if fw_gap <= tol {
            break;
        }
        let away_gap = grad[a] - gl;
        let (dir, max_step) = if fw_gap >= away_gap {
            let mut d: Vec<f64> = lambda.iter().map(|v| -v).collect();
            d[s] += 1.0;
            (d, 1.0)
        } else {
            let mut d = lambda.clone();
            d[a] -= 1.0;
            let la = lambda[a];
            (d, if la < 1.0 { la / (1.0 - la) } else { f64::INFINITY })
        };
        let gd: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let kd = mul(&dir);
        let dkd: f64 = dir.iter().zip(&kd).map(|(a, b)| a * b).sum();
        if !(gd < 0.0) {
            break;
        }
        let step = if dkd > 0.0 { (-gd / (2.0 * dkd)).min(max_step) } else { max_step };
        if !step.is_finite() || step <= 0.0 {
            break;
        }
        for (l, d) in lambda.iter_mut().zip(&dir) {
            *l = (*l + step * d).max(0.0);
        }
        let total: f64 = lambda.iter().sum();
        for l in &mut lambda {
            *l /= total;
        }
    }
    lambda
}

fn argmin(v: &[f64], ok: impl Fn(usize) -> bool) -> usize {
    (0..v.len()).filter(|&i| ok(i)).fold(usize::MAX, |b, i| {
        if b == usize::MAX || v[i] < v[b] { i } else { b }
    })
}

fn argmax(v: &[f64], ok: impl Fn(usize) -> bool) -> usize {
    (0..v.len()).filter(|&i| ok(i)).fold(usize::MAX, |b, i| {
        if b == usize::MAX || v[i] > v[b] { i } else { b }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn bundle(rows: Vec<Vec<f64>>) -> ObjectiveBundle {
        ObjectiveBundle::from_rows(vec![1.0; rows.len()], rows).unwrap()
    }

    #[test]
    fn single_gradient_is_its_norm() {
        assert_eq!(pareto_stationarity(&bundle(vec![vec![3.0, 4.0]])).unwrap(), 5.0);
    }

    #[test]
    fn opposite_gradients_are_stationary() {
        let s = pareto_stationarity(&bundle(vec![vec![1.0, -2.0], vec![-1.0, 2.0]])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn interior_minimum_in_three_dimensions() {
        // Three unit vectors at 120° span a plane through the origin.
        let h = 3f64.sqrt() / 2.0;
        let s = pareto_stationarity(&bundle(vec![
            vec![1.0, 0.0, 1.0],
            vec![-0.5, h, 1.0],
            vec![-0.5, -h, 1.0],
        ]))
        .unwrap();
        assert!((s - 1.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn agrees_with_coarse_grid() {
        let mut r = crate::seeds::rng(11);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect())
                .collect();
            let b = bundle(rows);
            let s = pareto_stationarity(&b).unwrap();
            let mut grid = f64::INFINITY;
            let n = 200;
            for i in 0..=n {
                for j in 0..=n - i {
                    let l = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                    grid = grid.min(combination_norm(&b, &l).unwrap());
                }
            }
            assert!(s <= grid + 1e-12 && grid - s < 2e-2, "{s} vs {grid}");
        }
    }

    #[test]
    fn too_many_objectives() {
        let b = bundle(vec![vec![1.0]; 9]);
        assert!(matches!(pareto_stationarity(&b), Err(FairMooError::TooManyObjectives { .. })));
    }
}
