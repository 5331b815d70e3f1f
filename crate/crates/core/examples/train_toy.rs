//! A short end-to-end run: pretrain the backbone on the global loss, then
//! fine-tune an adapter with MPD weighting and write the run directory.
//!
//! `cargo run --release --example train_toy -- [STEPS] [OUT_DIR]`

use fairmoo::harness::{run_training, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next().unwrap_or_else(|| "target/train-toy".into());
    let mut cfg = RunConfig {
        image_size: 16,
        hidden: vec![128, 128],
        steps,
        eval_every: (steps / 4).max(1),
        out_dir: out.into(),
        ..Default::default()
    };
    cfg.pretrain.steps = 400;
    let record = run_training(&cfg)?;
    for e in &record.evals {
        println!(
            "step {:5}  eval l_global {:.5}  l_face {:.5}  l_hand {:.5}",
            e.step, e.metrics.l_global, e.metrics.l_face, e.metrics.l_hand
        );
    }
    if let Some(last) = record.metrics.last() {
        println!("last weights {:.4?}  pareto stationarity {:.3e}", last.weights.w, last.pareto_stat);
    }
    println!("floor fired on {} of {} steps", record.floor_steps(), record.metrics.len());
    println!("wrote {}", record.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
    Ok(())
}
