//! Low-rank adapter on a frozen denoiser: a fresh adapter and β = 0 leave
//! the base unchanged, and folding `β·B·A` into the weights reproduces the
//! runtime combination.

use fairmoo::adapters::{attach_adapter, combined_forward, merge_adapter, AdapterSpec};
use fairmoo::diffusion::{Denoise, Denoiser};
use fairmoo::numerics::Tensor;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = Denoiser::new(64, vec![32, 32])?;
    let theta = base.init(1);
    let spec = AdapterSpec::all_layers(&base, 4, 0.4);
    let (model, adapter, partition) = attach_adapter(&base, &theta, &spec, 2)?;
    println!("frozen: {:?}", partition.frozen);
    println!("trainable: {:?}", partition.trainable);

    let mut rng = fairmoo::seeds::rng(3);
    let input = Tensor::from_fn(&[5, base.input_dim()], |_| rng.gen_range(-1.0..1.0));
    let reference = base.predict(&theta, &input)?;
    let fresh = model.predict(&adapter.params, &input)?;
    println!("fresh adapter reproduces base bit-exactly: {}", fresh == reference);

    // Train-like perturbation of both projections.
    let moved = adapter.params.data().iter().map(|x| x + rng.gen_range(-0.2..0.2)).collect();
    let adapter = adapter.with_params(adapter.params.with_data(moved)?)?;
    let off = combined_forward(&base, &theta, &adapter, 0.0, &input)?;
    println!("β = 0 reproduces base bit-exactly: {}", off == reference);

    let runtime = combined_forward(&base, &theta, &adapter, spec.beta, &input)?;
    let merged = base.predict(&merge_adapter(&base, &theta, &adapter, spec.beta)?, &input)?;
    let gap = runtime.sub(&merged)?.max_abs();
    println!("merged vs runtime max |Δ| = {gap:e}");
    println!("adapter moved the output by {:.3e}", runtime.sub(&reference)?.max_abs());
    Ok(())
}
