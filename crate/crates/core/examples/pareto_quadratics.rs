//! MPD descent on three convex quadratics in 10 dimensions, tracking the
//! Pareto-stationarity meter `min_λ ‖Σλ_i∇l_i‖` until it reads below 1e-3.

use fairmoo::fair_moo::{
    aggregate_direction, gram, mpd_weights_closed, pareto_stationarity, update_step, ObjectiveBundle, SolverConfig,
};
use fairmoo::numerics::ParamVector;

const DIM: usize = 10;

/// `l_i(x) = ½‖x − c_i‖²_{A_i}` with diagonal `A_i`.
struct Quadratic {
    center: [f64; DIM],
    curvature: [f64; DIM],
}

impl Quadratic {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut l = 0.0;
        let mut g = vec![0.0; DIM];
        for j in 0..DIM {
            let r = x[j] - self.center[j];
            l += 0.5 * self.curvature[j] * r * r;
            g[j] = self.curvature[j] * r;
        }
        (l, g)
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let objectives: Vec<Quadratic> = (0..3)
        .map(|i| Quadratic {
            center: std::array::from_fn(|j| ((i * DIM + j) as f64 * 0.7).sin()),
            curvature: std::array::from_fn(|j| 0.5 + ((i + 2 * j) % 5) as f64 * 0.25),
        })
        .collect();
    let cfg = SolverConfig::default();
    let mut x = ParamVector::from_flat("theta", vec![3.0; DIM]);
    for step in 0..10_000 {
        let (losses, grads): (Vec<f64>, Vec<Vec<f64>>) = objectives.iter().map(|q| q.eval(x.data())).unzip();
        let bundle = ObjectiveBundle::from_rows(losses.clone(), grads)?;
        let meter = pareto_stationarity(&bundle)?;
        if step % 200 == 0 || meter < 1e-3 {
            println!("step {step:5}  losses {losses:.4?}  stationarity {meter:.3e}");
        }
        if meter < 1e-3 {
            println!("Pareto-stationary to 1e-3 after {step} steps");
            return Ok(());
        }
        let w = mpd_weights_closed(&gram(&bundle), &cfg)?;
        let d = aggregate_direction(&bundle, &w)?;
        x = update_step(&x, &d, 0.05)?;
    }
    println!("meter did not reach 1e-3 in 10000 steps");
    Ok(())
}
