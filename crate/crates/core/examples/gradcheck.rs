//! Tape gradients of random small denoisers against central differences.
//!
//! `cargo run --release --example gradcheck -- [COUNT]`

use fairmoo::harness::gradcheck::FD_TOLERANCE;
use fairmoo::harness::random_gradcheck;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let count: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let mut worst = 0.0_f64;
    for seed in 0..count {
        let r = random_gradcheck(seed)?;
        let m = r.max_rel_err.iter().copied().fold(0.0, f64::max);
        worst = worst.max(m);
        println!(
            "seed {seed:3}  hidden {:?}  batch {}  adapter rank {:?}  params {:6}  max rel err {m:.2e}",
            r.hidden, r.batch_size, r.adapter_rank, r.params
        );
    }
    println!("worst {worst:.2e} (tolerance {FD_TOLERANCE:.0e})");
    Ok(())
}
