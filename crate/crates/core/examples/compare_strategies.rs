//! Global-only, linear scalarization and MPD fine-tuned from the same
//! backbones over a few seeds.
//!
//! `cargo run --release --example compare_strategies -- [STEPS]`

use fairmoo::fair_moo::Strategy;
use fairmoo::harness::{compare_strategies, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let mut base = RunConfig {
        image_size: 16,
        hidden: vec![128, 128],
        steps,
        eval_every: steps.max(1),
        ..Default::default()
    };
    base.pretrain.steps = 400;
    let cfgs: Vec<RunConfig> = [Strategy::GlobalOnly, Strategy::Ls { weights: None }, Strategy::Mpd]
        .into_iter()
        .map(|strategy| RunConfig {
            strategy,
            ..base.clone()
        })
        .collect();
    let table = compare_strategies(&cfgs, &[0, 1, 2], None)?;
    print!("{}", table.to_table());
    Ok(())
}
