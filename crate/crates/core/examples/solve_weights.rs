//! MPD weights from a Gram matrix: closed form against the numerical oracle.

use fairmoo::fair_moo::{mpd_residual, mpd_weights_closed, mpd_weights_oracle, GramMatrix, SolverConfig};
use fairmoo::numerics::SymMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SolverConfig::default();
    let cases = [
        ("orthogonal, unequal norms", vec![vec![1.0, 0.0, 0.0], vec![0.0, 8.0, 0.0], vec![0.0, 0.0, 0.125]]),
        ("coupled", vec![vec![2.0, 0.5, 0.3], vec![0.5, 1.0, 0.2], vec![0.3, 0.2, 0.7]]),
        ("strongly aligned", vec![vec![1.0, 1.9], vec![1.9, 4.0]]),
    ];
    for (name, rows) in cases {
        let k = GramMatrix::from_sym(SymMatrix::from_rows(&rows)?);
        let closed = mpd_weights_closed(&k, &cfg)?;
        let oracle = mpd_weights_oracle(&k, &cfg)?;
        println!("{name}");
        println!(
            "  closed form  w = {:?}  residual {:.3e}  floored {}",
            closed.w,
            mpd_residual(&k, &closed.w, &cfg),
            closed.floor_applied
        );
        println!(
            "  oracle       w = {:?}  residual {:.3e}  ({} iterations)",
            oracle.weights.w, oracle.residual, oracle.iterations
        );
    }
    Ok(())
}
