//! Potential-delay diagnostics of an update direction: per-objective rates,
//! the total delay `F(d)` and the bound `F(d) ≤ M·F′(d)`.

use fairmoo::fair_moo::{aggregate_direction, delay_diagnostics, gram, mpd_weights_closed, ObjectiveBundle, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bundle = ObjectiveBundle::from_rows(
        vec![1.0, 0.2, 0.05],
        vec![vec![3.0, 0.2, 0.0, 0.1], vec![0.1, 0.4, 0.1, 0.0], vec![0.0, 0.05, 0.08, 0.02]],
    )?;
    let mpd = mpd_weights_closed(&gram(&bundle), &SolverConfig::default())?;
    let uniform = fairmoo::fair_moo::FairWeights {
        w: vec![1.0; 3],
        ..mpd.clone()
    };
    for (name, w) in [("uniform", &uniform), ("mpd", &mpd)] {
        let d = aggregate_direction(&bundle, w)?;
        let diag = delay_diagnostics(&bundle, &d)?;
        println!("{name}: w = {:.4?}", w.w);
        println!("  rates (projection of d on each gradient) {:.4?}", diag.proj);
        println!("  potential delays {:?}", diag.potential_delay);
        match (diag.f, diag.f_prime, diag.bound_holds) {
            (Some(f), Some(fp), Some(holds)) => {
                println!("  F = {f:.4}  M·F' = {:.4}  bound holds: {holds}", diag.m * fp)
            }
            _ => println!("  F undefined: d does not descend objectives {:?}", diag.undefined()),
        }
    }
    Ok(())
}
