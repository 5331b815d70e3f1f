//! A synthetic scene, its latent masks and the three region losses of a
//! noisy sample under a trivial predictor.

use fairmoo::diffusion::{make_schedule, masked_mse, q_sample, synth_sample, Normalization, Rect, SceneSpec, Texture};
use fairmoo::numerics::Tensor;

fn show(name: &str, t: &Tensor, side: usize) {
    println!("{name}:");
    for r in 0..side {
        let row: String = (0..side)
            .map(|c| if t.data()[r * side + c] > 0.0 { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec {
        image_size: 32,
        latent_factor: 4,
        face_box: Some(Rect::new(5, 3, 15, 13)?),
        hand_box: Some(Rect::new(21, 18, 27, 25)?),
        face_texture: Texture { frequency: 0.9, amplitude: 0.6 },
        hand_texture: Texture { frequency: 1.3, amplitude: 0.5 },
        background: Texture { frequency: 0.05, amplitude: 0.4 },
    };
    let sample = synth_sample(7, &spec)?;
    show("face latent mask (any-overlap)", &sample.masks.face_latent, 8);
    show("hand latent mask", &sample.masks.hand_latent, 8);

    let schedule = make_schedule(1000, 1e-4, 0.02)?;
    let eps = Tensor::from_fn(&[8, 8], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
    let zt = q_sample(&sample.z0, 500, &eps, &schedule)?;
    println!("ᾱ_500 = {:.4}, ‖z_t‖∞ = {:.3}", schedule.alpha_bar(500)?, zt.max_abs());

    // A predictor that outputs zeros: the loss is the energy of ε per region.
    let zero = Tensor::zeros(&[8, 8]);
    let ones = Tensor::full(&[8, 8], 1.0);
    for norm in [Normalization::FullCount, Normalization::MaskedCount] {
        let g = masked_mse(&eps, &zero, &ones, norm)?;
        let f = masked_mse(&eps, &zero, &sample.masks.face_latent, norm)?;
        let h = masked_mse(&eps, &zero, &sample.masks.hand_latent, norm)?;
        println!("{norm:?}: l_global {g:.4}  l_face {f:.4}  l_hand {h:.4}");
    }
    Ok(())
}
