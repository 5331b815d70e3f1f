//! Exports synthetic scenes as raw `f64` tensors plus a JSON list of boxes.
//!
//! `cargo run --example synth_dataset -- [COUNT] [OUT_DIR]`

use fairmoo::harness::cli::synth;
use fairmoo::numerics::io::read_tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/synth".into()));
    print!("{}", synth(count, 42, &out, 32, 8)?);
    let images = read_tensor(&out, "train")?;
    let latents = read_tensor(&out, "train_latent")?;
    println!("images {:?}, latents {:?}", images.shape(), latents.shape());
    let masks: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("masks.json"))?)?;
    println!("first entry: {}", masks[0]);
    Ok(())
}
