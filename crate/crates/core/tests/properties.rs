use fairmoo::diffusion::{box_mask, downscale_mask, masked_mse, make_schedule, q_sample, Normalization, Rect};
use fairmoo::fair_moo::{
    aggregate_direction, delay_diagnostics, gram, mpd_weights_closed, update_step, FairWeights, GramMatrix,
    ObjectiveBundle, SolverConfig, StrategyTag,
};
use fairmoo::numerics::{mat_frac_power, sym_eig, ParamVector, SymMatrix, Tensor};
use proptest::prelude::*;

fn sym_from(k: usize, vals: &[f64]) -> SymMatrix {
    let mut it = vals.iter();
    let mut upper = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            upper[i * k + j] = *it.next().unwrap();
        }
    }
    SymMatrix::from_upper(k, |i, j| upper[i * k + j])
}

fn symmetric(max_k: usize, range: f64) -> impl Strategy<Value = SymMatrix> {
    (1..=max_k).prop_flat_map(move |k| {
        prop::collection::vec(-range..range, k * (k + 1) / 2).prop_map(move |v| sym_from(k, &v))
    })
}

/// `GᵀG + δI` from a random `k×n` gradient matrix.
fn spd(k: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, SymMatrix)> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 6), k).prop_map(move |rows| {
        let m = SymMatrix::from_upper(k, |i, j| {
            rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() + if i == j { 0.1 } else { 0.0 }
        });
        (rows, m)
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sym_eig_orthonormal_and_reconstructs(m in symmetric(8, 10.0)) {
        let eig = sym_eig(&m).unwrap();
        prop_assert!(eig.orthonormality_error() <= 1e-12);
        let back = eig.reconstruct_with(|l| l);
        prop_assert!(back.max_abs_diff(&m) <= 1e-10 * m.max_abs().max(1.0));
        for w in eig.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }
}

proptest! {
    #[test]
    fn unit_power_is_identity((_, k) in spd(4)) {
        let p = mat_frac_power(&k, 1.0, 0.0).unwrap();
        prop_assert!(p.max_abs_diff(&k) <= 1e-12 * k.max_abs().max(1.0));
    }

    #[test]
    fn powers_add((_, k) in spd(4), a in -1.5..1.5f64, b in -1.5..1.5f64) {
        let pa = mat_frac_power(&k, a, 0.0).unwrap();
        let pb = mat_frac_power(&k, b, 0.0).unwrap();
        let pab = mat_frac_power(&k, a + b, 0.0).unwrap();
        prop_assert!(pa.mul(&pb).max_abs_diff(&pab) <= 1e-9 * pab.max_abs().max(1.0));
    }

    #[test]
    fn scaling_gram_scales_weights((_, k) in spd(3), c in 0.01..100.0f64) {
        let cfg = SolverConfig { eps_reg: 0.0, ..Default::default() };
        let w = mpd_weights_closed(&GramMatrix::from_sym(k.clone()), &cfg).unwrap();
        let wc = mpd_weights_closed(&GramMatrix::from_sym(k.scale(c)), &cfg).unwrap();
        prop_assume!(!w.floor_applied && !wc.floor_applied);
        let f = c.powf(-2.0 / 3.0);
        for (a, b) in w.w.iter().zip(&wc.w) {
            prop_assert!(close(a * f, *b, 1e-12), "{} vs {}", a * f, b);
        }
    }

    #[test]
    fn permutation_equivariance((rows, _) in spd(3), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let cfg = SolverConfig::default();
        let bundle = ObjectiveBundle::from_rows(vec![1.0; 3], rows.clone()).unwrap();
        let permuted = ObjectiveBundle::from_rows(vec![1.0; 3], perm.iter().map(|&p| rows[p].clone()).collect()).unwrap();
        let w = mpd_weights_closed(&gram(&bundle), &cfg).unwrap();
        let wp = mpd_weights_closed(&gram(&permuted), &cfg).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((wp.w[i] - w.w[p]).abs() <= 1e-12 * w.w[p].abs().max(1.0));
        }
        let d = aggregate_direction(&bundle, &w).unwrap();
        let dp = aggregate_direction(&permuted, &wp).unwrap();
        for (a, b) in d.data().iter().zip(dp.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * d.norm().max(1.0));
        }
    }

    #[test]
    fn single_objective_is_scaled_gradient_descent(g in prop::collection::vec(-3.0..3.0f64, 1..8), lr in 1e-3..1.0f64) {
        let gg: f64 = g.iter().map(|x| x * x).sum();
        prop_assume!(gg > 1e-3);
        let cfg = SolverConfig { eps_reg: 0.0, ..Default::default() };
        let bundle = ObjectiveBundle::from_rows(vec![1.0], vec![g.clone()]).unwrap();
        let w = mpd_weights_closed(&gram(&bundle), &cfg).unwrap();
        let theta = ParamVector::from_flat("theta", vec![0.5; g.len()]);
        let next = update_step(&theta, &aggregate_direction(&bundle, &w).unwrap(), lr).unwrap();
        let step = lr * gg.powf(-2.0 / 3.0);
        for (j, x) in next.data().iter().enumerate() {
            prop_assert!(close(*x, 0.5 - step * g[j], 1e-12));
        }
    }

    #[test]
    fn diagonal_gram_descends_every_objective(diag in prop::collection::vec(1e-3..1e3f64, 3)) {
        // Orthogonal gradients with ‖g_i‖² = K_ii.
        let rows: Vec<Vec<f64>> = (0..3).map(|i| {
            let mut r = vec![0.0; 3];
            r[i] = diag[i].sqrt();
            r
        }).collect();
        let bundle = ObjectiveBundle::from_rows(vec![1.0; 3], rows).unwrap();
        let cfg = SolverConfig { eps_reg: 0.0, ..Default::default() };
        let w = mpd_weights_closed(&gram(&bundle), &cfg).unwrap();
        let d = aggregate_direction(&bundle, &w).unwrap();
        for (i, g) in bundle.grads().iter().enumerate() {
            let a = g.dot(&d).unwrap();
            prop_assert!(close(a, diag[i].powf(1.0 / 3.0), 1e-10));
        }
    }

    #[test]
    fn delay_bound_holds(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 5), 1..5), d in prop::collection::vec(-5.0..5.0f64, 5)) {
        let dv = ParamVector::from_flat("theta", d.clone());
        let bundle = ObjectiveBundle::from_rows(vec![1.0; rows.len()], rows.clone()).unwrap();
        prop_assume!(dv.norm() > 1e-6);
        let diag = delay_diagnostics(&bundle, &dv).unwrap();
        if let (Some(f), Some(fp)) = (diag.f, diag.f_prime) {
            prop_assert!(f <= diag.m * fp + 1e-9);
        } else {
            prop_assert!(diag.alignment.iter().any(|&a| a <= 0.0));
        }
    }

    #[test]
    fn q_sample_is_linear_in_z0(
        a in -2.0..2.0f64, b in -2.0..2.0f64, t in 1usize..=1000,
        z in prop::collection::vec(-1.0..1.0f64, 16), z2 in prop::collection::vec(-1.0..1.0f64, 16),
    ) {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let z0 = Tensor::new(vec![4, 4], z).unwrap();
        let z1 = Tensor::new(vec![4, 4], z2).unwrap();
        let zero = Tensor::zeros(&[4, 4]);
        let mixed = z0.scale(a).add(&z1.scale(b)).unwrap();
        let lhs = q_sample(&mixed, t, &zero, &s).unwrap();
        let rhs = q_sample(&z0, t, &zero, &s).unwrap().scale(a).add(&q_sample(&z1, t, &zero, &s).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-14);
        // The noise term enters additively.
        let eps = Tensor::full(&[4, 4], 0.3);
        let with = q_sample(&z0, t, &eps, &s).unwrap();
        let ab = s.alpha_bar(t).unwrap();
        let expected = q_sample(&z0, t, &zero, &s).unwrap().add(&eps.scale((1.0 - ab).sqrt())).unwrap();
        prop_assert!(with.sub(&expected).unwrap().max_abs() <= 1e-15);
    }

    #[test]
    fn latent_masks_follow_any_overlap(factor in prop::sample::select(vec![1usize, 2, 4, 8]), x0 in 0usize..31, y0 in 0usize..31, w in 1usize..16, h in 1usize..16) {
        let size = 32;
        let r = Rect::new(x0, y0, (x0 + w).min(size), (y0 + h).min(size)).unwrap();
        let m = downscale_mask(Some(&r), size, factor).unwrap();
        let img = box_mask(Some(&r), size).unwrap();
        let l = size / factor;
        for cy in 0..l {
            for cx in 0..l {
                let mut any = false;
                for py in cy * factor..(cy + 1) * factor {
                    for px in cx * factor..(cx + 1) * factor {
                        any |= img.data()[py * size + px] > 0.0;
                    }
                }
                prop_assert_eq!(m.data()[cy * l + cx], if any { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn masked_loss_ignores_errors_outside_the_mask(
        eps in prop::collection::vec(-2.0..2.0f64, 64),
        hat in prop::collection::vec(-2.0..2.0f64, 64),
        noise in prop::collection::vec(-5.0..5.0f64, 64),
        x0 in 0usize..7, y0 in 0usize..7,
    ) {
        let r = Rect::new(x0, y0, x0 + 2, y0 + 2).unwrap();
        let mask = box_mask(Some(&r), 8).unwrap();
        let eps = Tensor::new(vec![8, 8], eps).unwrap();
        let hat = Tensor::new(vec![8, 8], hat).unwrap();
        let scrambled = Tensor::from_fn(&[8, 8], |i| if mask.data()[i] > 0.0 { hat.data()[i] } else { noise[i] });
        for norm in [Normalization::FullCount, Normalization::MaskedCount] {
            prop_assert_eq!(masked_mse(&eps, &hat, &mask, norm).unwrap(), masked_mse(&eps, &scrambled, &mask, norm).unwrap());
        }
    }
}

#[test]
fn fixed_weights_select_rows() {
    let bundle = ObjectiveBundle::from_rows(vec![1.0; 2], vec![vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
    let w = FairWeights {
        w: vec![0.0, 1.0],
        strategy: StrategyTag::Ls,
        floor_applied: false,
    };
    assert_eq!(aggregate_direction(&bundle, &w).unwrap().data(), &[3.0, -1.0]);
}
