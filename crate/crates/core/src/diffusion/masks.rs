use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

use super::{DiffusionError, Rect};

/// Binary `[L, L]` mask, `L = image_size / factor`; cell `(r, c)` is set
/// iff the `factor × factor` image patch it covers overlaps `rect`.
/// `None` gives the all-zero mask.
pub fn downscale_mask(rect: Option<&Rect>, image_size: usize, factor: usize) -> Result<Tensor, DiffusionError> {
    if factor == 0 || image_size == 0 || image_size % factor != 0 {
        return Err(DiffusionError::Divisibility { image_size, factor });
    }
    let l = image_size / factor;
    let mut mask = Tensor::zeros(&[l, l]);
    if let Some(r) = rect {
        let data = mask.data_mut();
        for row in 0..l {
            for col in 0..l {
                if r.overlaps(col * factor, row * factor, (col + 1) * factor, (row + 1) * factor) {
                    data[row * l + col] = 1.0;
                }
            }
        }
    }
    Ok(mask)
}

/// Mask at image resolution.
pub fn box_mask(rect: Option<&Rect>, image_size: usize) -> Result<Tensor, DiffusionError> {
    downscale_mask(rect, image_size, 1)
}

/// Average pooling of an `[S, S]` image over `factor × factor` patches.
pub fn pool_latent(image: &Tensor, factor: usize) -> Result<Tensor, DiffusionError> {
    let (h, w) = image.dims2()?;
    if h != w {
        return Err(DiffusionError::Shape(format!("image must be square, got {h}×{w}")));
    }
    if factor == 0 || h % factor != 0 {
        return Err(DiffusionError::Divisibility { image_size: h, factor });
    }
    let l = h / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let src = image.data();
    Ok(Tensor::from_fn(&[l, l], |i| {
        let (row, col) = (i / l, i % l);
        let mut acc = 0.0;
        for y in row * factor..(row + 1) * factor {
            for x in col * factor..(col + 1) * factor {
                acc += src[y * h + x];
            }
        }
        acc * inv
    }))
}

/// Face and hand masks of one sample at image and latent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMasks {
    pub face_image: Tensor,
    pub hand_image: Tensor,
    pub face_latent: Tensor,
    pub hand_latent: Tensor,
    pub latent_factor: usize,
    pub face_box: Option<Rect>,
    pub hand_box: Option<Rect>,
}

impl RegionMasks {
    pub fn new(
        face_box: Option<Rect>,
        hand_box: Option<Rect>,
        image_size: usize,
        latent_factor: usize,
    ) -> Result<Self, DiffusionError> {
        Ok(Self {
            face_image: box_mask(face_box.as_ref(), image_size)?,
            hand_image: box_mask(hand_box.as_ref(), image_size)?,
            face_latent: downscale_mask(face_box.as_ref(), image_size, latent_factor)?,
            hand_latent: downscale_mask(hand_box.as_ref(), image_size, latent_factor)?,
            latent_factor,
            face_box,
            hand_box,
        })
    }

    /// Per-sample entry of the `masks.json` export.
    pub fn record(&self) -> MaskRecord {
        MaskRecord {
            face: self.face_box,
            hand: self.hand_box,
            latent_factor: self.latent_factor,
        }
    }
}

/// Boxes of one exported sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub face: Option<Rect>,
    pub hand: Option<Rect>,
    pub latent_factor: usize,
}
