use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::seeds;

use super::{pool_latent, DiffusionError, RegionMasks};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`; `x` is the column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self, DiffusionError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(DiffusionError::InvalidScene(format!(
                "empty rectangle ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Whether `[x0, x1) × [y0, y1)` shares at least one pixel with `self`.
    pub fn overlaps(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
        x0 < self.x1 && x1 > self.x0 && y0 < self.y1 && y1 > self.y0
    }

    /// Center in units of the image side, in `[0, 1]`.
    pub fn center(&self, image_size: usize) -> (f64, f64) {
        let s = image_size as f64;
        (
            (self.x0 + self.x1) as f64 / (2.0 * s),
            (self.y0 + self.y1) as f64 / (2.0 * s),
        )
    }
}

/// Sinusoidal texture; `frequency` is in cycles per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub frequency: f64,
    pub amplitude: f64,
}

/// Layout and appearance of one synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub latent_factor: usize,
    pub face_box: Option<Rect>,
    pub hand_box: Option<Rect>,
    /// Oriented stripes inside the face box.
    pub face_texture: Texture,
    /// Grid pattern inside the hand box.
    pub hand_texture: Texture,
    /// Smooth two-wave field everywhere.
    pub background: Texture,
}

impl SceneSpec {
    pub const DEFAULT_FACE: Texture = Texture {
        frequency: 0.3,
        amplitude: 0.5,
    };
    pub const DEFAULT_HAND: Texture = Texture {
        frequency: 0.4,
        amplitude: 0.5,
    };
    pub const DEFAULT_BACKGROUND: Texture = Texture {
        frequency: 0.04,
        amplitude: 0.4,
    };

    /// Default textures with boxes placed uniformly at random: face sides in
    /// `[S/5, S/3]`, hand sides in `[S/8, S/4]`, both at least 2 pixels.
    pub fn random<R: Rng + ?Sized>(image_size: usize, latent_factor: usize, rng: &mut R) -> Self {
        let s = image_size;
        let mut place = |lo: usize, hi: usize| {
            let lo = lo.max(2).min(s);
            let hi = hi.max(lo).min(s);
            let w = rng.gen_range(lo..=hi);
            let h = rng.gen_range(lo..=hi);
            let x0 = rng.gen_range(0..=s - w);
            let y0 = rng.gen_range(0..=s - h);
            Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }
        };
        let face = place(s / 5, s / 3);
        let hand = place(s / 8, s / 4);
        Self {
            image_size,
            latent_factor,
            face_box: Some(face),
            hand_box: Some(hand),
            face_texture: Self::DEFAULT_FACE,
            hand_texture: Self::DEFAULT_HAND,
            background: Self::DEFAULT_BACKGROUND,
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let s = self.image_size;
        if s == 0 {
            return Err(DiffusionError::InvalidScene("image_size must be positive".into()));
        }
        if self.latent_factor == 0 || s % self.latent_factor != 0 {
            return Err(DiffusionError::Divisibility {
                image_size: s,
                factor: self.latent_factor,
            });
        }
        for (name, b) in [("face", &self.face_box), ("hand", &self.hand_box)] {
            if let Some(r) = b {
                if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > s || r.y1 > s {
                    return Err(DiffusionError::InvalidScene(format!(
                        "{name} box {r:?} is empty or outside the {s}×{s} image"
                    )));
                }
                if 4 * r.area() > s * s {
                    return Err(DiffusionError::InvalidScene(format!(
                        "{name} box {r:?} covers more than a quarter of the image"
                    )));
                }
            }
        }
        for t in [self.face_texture, self.hand_texture, self.background] {
            if !(t.frequency.is_finite() && t.amplitude.is_finite() && t.amplitude >= 0.0) {
                return Err(DiffusionError::InvalidScene(format!("invalid texture {t:?}")));
            }
        }
        Ok(())
    }

    /// `[face_cx, face_cy, hand_cx, hand_cy]` in image units; zeros for an
    /// absent box.
    pub fn cond(&self) -> [f64; 4] {
        let c = |b: &Option<Rect>| b.map(|r| r.center(self.image_size)).unwrap_or((0.0, 0.0));
        let (f, h) = (c(&self.face_box), c(&self.hand_box));
        [f.0, f.1, h.0, h.1]
    }
}

/// Output of [`synth_sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[S, S]` image in `[−1, 1]`.
    pub image: Tensor,
    /// `[L, L]` pooled image.
    pub z0: Tensor,
    pub masks: RegionMasks,
    pub cond: [f64; 4],
}

/// Renders `spec`; phases and orientations are drawn from `seed`.
pub fn synth_sample(seed: u64, spec: &SceneSpec) -> Result<SceneSample, DiffusionError> {
    spec.validate()?;
    let mut rng = seeds::rng(seed);
    let tau = std::f64::consts::TAU;
    let mut phase = || rng.gen_range(0.0..tau);
    let bg = [(phase(), phase()), (phase(), phase())];
    let (face_angle, face_phase) = (phase() / 2.0, phase());
    let (hand_px, hand_py) = (phase(), phase());

    let s = spec.image_size;
    let (fb, ff, fh) = (spec.background, spec.face_texture, spec.hand_texture);
    let (fc, fs) = (face_angle.cos(), face_angle.sin());
    let image = Tensor::from_fn(&[s, s], |i| {
        let (y, x) = ((i / s) as f64, (i % s) as f64);
        let smooth = 0.5
            * fb.amplitude
            * ((tau * fb.frequency * x + bg[0].0).sin() * (tau * fb.frequency * y + bg[0].1).cos()
                + (tau * fb.frequency * (x + y) * 0.7 + bg[1].0).sin());
        let (xi, yi) = (i % s, i / s);
        let mut v = smooth;
        if spec.face_box.is_some_and(|r| r.contains(xi, yi)) {
            v = 0.5 * smooth + ff.amplitude * (tau * ff.frequency * (x * fc + y * fs) + face_phase).sin();
        }
        if spec.hand_box.is_some_and(|r| r.contains(xi, yi)) {
            v = 0.5 * smooth
                + fh.amplitude
                    * (tau * fh.frequency * x + hand_px).sin().signum()
                    * (tau * fh.frequency * y + hand_py).sin();
        }
        v.clamp(-1.0, 1.0)
    });
    let z0 = pool_latent(&image, spec.latent_factor)?;
    let masks = RegionMasks::new(spec.face_box, spec.hand_box, s, spec.latent_factor)?;
    Ok(SceneSample {
        image,
        z0,
        masks,
        cond: spec.cond(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = SceneSpec::random(32, 1, &mut seeds::rng(1));
        assert_eq!(synth_sample(9, &spec).unwrap(), synth_sample(9, &spec).unwrap());
        assert_ne!(synth_sample(9, &spec).unwrap().image, synth_sample(10, &spec).unwrap().image);
    }

    #[test]
    fn values_in_range_and_masks_match_boxes() {
        for seed in 0..50 {
            let spec = SceneSpec::random(32, 4, &mut seeds::rng(seed));
            spec.validate().unwrap();
            let s = synth_sample(seed, &spec).unwrap();
            assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(s.masks.face_image.sum(), spec.face_box.unwrap().area() as f64);
            assert_eq!(s.masks.hand_image.sum(), spec.hand_box.unwrap().area() as f64);
            assert_eq!(s.z0.shape(), &[8, 8]);
        }
    }

    #[test]
    fn oversized_box_rejected() {
        let mut spec = SceneSpec::random(8, 1, &mut seeds::rng(0));
        spec.face_box = Some(Rect::new(0, 0, 5, 4).unwrap());
        assert!(spec.validate().is_err());
        spec.face_box = Some(Rect::new(0, 0, 4, 4).unwrap());
        assert!(spec.validate().is_ok());
        spec.face_box = Some(Rect { x0: 6, y0: 0, x1: 9, y1: 1 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn textured_regions_vary_more_than_background() {
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        for seed in 0..100 {
            let spec = SceneSpec::random(32, 1, &mut seeds::rng(seed));
            let s = synth_sample(seed, &spec).unwrap();
            let (mut face, mut bg) = (Vec::new(), Vec::new());
            for (i, &v) in s.image.data().iter().enumerate() {
                if s.masks.face_image.data()[i] == 1.0 && s.masks.hand_image.data()[i] == 0.0 {
                    face.push(v);
                } else if s.masks.face_image.data()[i] == 0.0 && s.masks.hand_image.data()[i] == 0.0 {
                    bg.push(v);
                }
            }
            if face.len() >= 16 {
                assert!(var(&face) > var(&bg), "seed {seed}");
            }
        }
    }
}
