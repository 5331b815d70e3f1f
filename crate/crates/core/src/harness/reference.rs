//! Double-double reference forward of the toy denoiser and its losses.
//!
//! Central differences of an `f64` loss carry round-off of order
//! `ε·|l| / h`, which swamps gradient entries near `1e-6` at `h = 1e-5`.
//! Evaluated here with about 32 significant digits, the same differences
//! are limited by truncation alone. The code shares nothing with the tape.

use std::ops::{Add, Mul, Neg, Sub};

use crate::adapters::AdaptedDenoiser;
use crate::diffusion::{Denoiser, Normalization, TrainBatch};
use crate::numerics::{ParamVector, Tensor};

use super::HarnessError;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: e }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

const LN2: Dd = Dd {
    hi: 6.931471805599452862e-01,
    lo: 2.319046813846299558e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact scaling by `2^k`.
    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        let q = quick_two_sum(q1, q2);
        q + Dd::from(q3)
    }

    /// `(s, k)` with `e^x = (1 + s)·2^k`; `s` is accurate even when tiny.
    fn exp_parts(self) -> (Dd, i32) {
        let k = (self.hi / LN2.hi).round();
        // |r| ≤ ln2/2, scaled to |r| < 4e-4 so the series converges fast.
        let r = (self - LN2 * k).ldexp(-10);
        let mut term = r;
        let mut sum = r;
        for i in 2..=24 {
            term = (term * r).div(Dd::from(i as f64));
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 − 1 = 2s + s², applied once per halving.
        for _ in 0..10 {
            sum = sum.ldexp(1) + sum * sum;
        }
        (sum, k as i32)
    }

    pub fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        let (s, k) = self.exp_parts();
        (s + Dd::ONE).ldexp(k)
    }

    pub fn tanh(self) -> Dd {
        let neg = self.hi < 0.0;
        let a = if neg { -self } else { self };
        let t = if a.hi > 40.0 {
            // 1 − 2e^{-2a} + … with e^{-80} below half an ulp of the lo word.
            Dd::ONE - (-a.ldexp(1)).exp().ldexp(1)
        } else {
            let (s, k) = (-a.ldexp(1)).exp_parts();
            if k == 0 {
                // tanh a = −expm1(−2a) / (2 + expm1(−2a)).
                (-s).div(Dd::from(2.0) + s)
            } else {
                let e = (s + Dd::ONE).ldexp(k);
                (Dd::ONE - e).div(Dd::ONE + e)
            }
        };
        if neg {
            -t
        } else {
            t
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let s = two_sum(self.hi, b.hi);
        let t = two_sum(self.lo, b.lo);
        let s = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(s.hi, s.lo + t.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = two_prod(self.hi, b.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }
}

fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |s, (&x, &y)| s + x * y)
}

struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Effective weight, row-major `[fan_out, fan_in]`.
    w: Vec<Dd>,
    b: Vec<Dd>,
}

impl Layer {
    fn col(&self, j: usize) -> impl Iterator<Item = Dd> + '_ {
        (0..self.fan_out).map(move |i| self.w[i * self.fan_in + j])
    }
}

/// What a unit change of one trainable coordinate does to the
/// pre-activations of its layer.
enum Coord {
    Weight { layer: usize, i: usize, j: usize },
    Bias { layer: usize, i: usize },
    LoraA { layer: usize, r: usize, j: usize, rank: usize },
    LoraB { layer: usize, i: usize, r: usize },
}

/// Per-row sums `Σd²`, `Σm_f²d²`, `Σm_h²d²` with `d = ε̂ − ε`.
type Sums = [Dd; 3];

fn add3(a: Sums, b: Sums) -> Sums {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub3(a: Sums, b: Sums) -> Sums {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Reference model in double-double with cached activations of one batch.
pub struct Reference {
    layers: Vec<Layer>,
    coords: Vec<Coord>,
    /// `lora_a`, `lora_b` per layer, as given.
    lora: Vec<Option<(Vec<Dd>, Vec<Dd>)>>,
    beta: Dd,
    /// `inputs[l][row]`: input of layer `l`.
    inputs: Vec<Vec<Vec<Dd>>>,
    /// `pre[l][row]`: pre-activation of layer `l`.
    pre: Vec<Vec<Vec<Dd>>>,
    eps: Vec<Vec<Dd>>,
    masks: [Vec<Vec<Dd>>; 2],
    row_sums: Vec<Sums>,
    divisors: [f64; 3],
}

fn to_dd(xs: &[f64]) -> Vec<Dd> {
    xs.iter().map(|&x| Dd::from(x)).collect()
}

fn rows_of(t: &Tensor, cols: usize) -> Vec<Vec<Dd>> {
    t.data().chunks(cols).map(to_dd).collect()
}

fn layer_index(name: &str) -> Option<(usize, &str)> {
    let (layer, field) = name.split_once('.')?;
    let idx: usize = layer.strip_prefix("fc")?.parse().ok()?;
    Some((idx.checked_sub(1)?, field))
}

fn shape_err(m: impl Into<String>) -> HarnessError {
    HarnessError::Config(format!("reference model: {}", m.into()))
}

impl Reference {
    /// Reference of the bare denoiser; every weight and bias is trainable.
    pub fn for_base(base: &Denoiser, theta: &ParamVector, batch: &TrainBatch, norm: Normalization) -> Result<Self, HarnessError> {
        let layers = Self::layers(base, theta)?;
        let mut coords = Vec::with_capacity(theta.len());
        for seg in theta.segments() {
            let (layer, field) = layer_index(&seg.name).ok_or_else(|| shape_err(format!("segment `{}`", seg.name)))?;
            let fan_in = layers[layer].fan_in;
            for k in 0..seg.len() {
                coords.push(match field {
                    "weight" => Coord::Weight {
                        layer,
                        i: k / fan_in,
                        j: k % fan_in,
                    },
                    "bias" => Coord::Bias { layer, i: k },
                    _ => return Err(shape_err(format!("segment `{}`", seg.name))),
                });
            }
        }
        let n = layers.len();
        Self::build(layers, coords, vec![None; n], 0.0, batch, norm)
    }

    /// Reference of the adapted denoiser with adapter parameters `phi`; only
    /// the projections are trainable.
    pub fn for_adapted(
        model: &AdaptedDenoiser,
        phi: &ParamVector,
        batch: &TrainBatch,
        norm: Normalization,
    ) -> Result<Self, HarnessError> {
        let mut layers = Self::layers(&model.base, &model.base_params)?;
        let rank = model.spec.rank;
        let mut lora: Vec<Option<(Vec<Dd>, Vec<Dd>)>> = vec![None; layers.len()];
        let mut coords = Vec::with_capacity(phi.len());
        for seg in phi.segments() {
            let (layer, field) = layer_index(&seg.name).ok_or_else(|| shape_err(format!("segment `{}`", seg.name)))?;
            let values = to_dd(phi.slice(&seg.name).expect("segment of phi"));
            let entry = lora[layer].get_or_insert_with(|| (Vec::new(), Vec::new()));
            let (fan_in, fan_out) = (layers[layer].fan_in, layers[layer].fan_out);
            match field {
                "lora_a" if seg.len() == rank * fan_in => {
                    entry.0 = values;
                    coords.extend((0..seg.len()).map(|k| Coord::LoraA {
                        layer,
                        r: k / fan_in,
                        j: k % fan_in,
                        rank,
                    }));
                }
                "lora_b" if seg.len() == fan_out * rank => {
                    entry.1 = values;
                    coords.extend((0..seg.len()).map(|k| Coord::LoraB {
                        layer,
                        i: k / rank,
                        r: k % rank,
                    }));
                }
                _ => return Err(shape_err(format!("segment `{}` {:?}", seg.name, seg.shape))),
            }
        }
        let beta = Dd::from(model.spec.beta);
        for (l, entry) in lora.iter().enumerate() {
            let Some((a, b)) = entry else { continue };
            if a.is_empty() || b.is_empty() {
                return Err(shape_err(format!("layer fc{} lacks a projection", l + 1)));
            }
            let layer = &mut layers[l];
            for i in 0..layer.fan_out {
                for j in 0..layer.fan_in {
                    let ba = (0..rank).fold(Dd::ZERO, |s, r| s + b[i * rank + r] * a[r * layer.fan_in + j]);
                    let idx = i * layer.fan_in + j;
                    layer.w[idx] = layer.w[idx] + beta * ba;
                }
            }
        }
        Self::build(layers, coords, lora, model.spec.beta, batch, norm)
    }

    fn layers(base: &Denoiser, theta: &ParamVector) -> Result<Vec<Layer>, HarnessError> {
        base.layers()
            .iter()
            .map(|l| {
                let w = theta.slice(&format!("{}.weight", l.name));
                let b = theta.slice(&format!("{}.bias", l.name));
                match (w, b) {
                    (Some(w), Some(b)) if w.len() == l.fan_in * l.fan_out && b.len() == l.fan_out => Ok(Layer {
                        fan_in: l.fan_in,
                        fan_out: l.fan_out,
                        w: to_dd(w),
                        b: to_dd(b),
                    }),
                    _ => Err(shape_err(format!("parameters of {}", l.name))),
                }
            })
            .collect()
    }

    fn build(
        layers: Vec<Layer>,
        coords: Vec<Coord>,
        lora: Vec<Option<(Vec<Dd>, Vec<Dd>)>>,
        beta: f64,
        batch: &TrainBatch,
        norm: Normalization,
    ) -> Result<Self, HarnessError> {
        let (rows, width) = batch.input().dims2().map_err(|e| shape_err(e.to_string()))?;
        let io = layers.last().map(|l| l.fan_out).unwrap_or(0);
        if layers.first().map(|l| l.fan_in) != Some(width) || batch.eps.len() != rows * io {
            return Err(shape_err("batch does not fit the network"));
        }
        let total = batch.eps.len();
        let mask_rows = |m: &Tensor| -> Result<Vec<Vec<Dd>>, HarnessError> {
            if m.len() == total {
                Ok(rows_of(m, io))
            } else if m.len() > 0 && total % m.len() == 0 && m.len() == io {
                Ok(vec![to_dd(m.data()); rows])
            } else {
                Err(shape_err(format!("mask of {} entries", m.len())))
            }
        };
        let masks = [mask_rows(batch.face_mask())?, mask_rows(batch.hand_mask())?];
        let divisors = [
            total as f64,
            norm.divisor(total, batch.face_mask().sum()),
            norm.divisor(total, batch.hand_mask().sum()),
        ];
        let mut me = Self {
            layers,
            coords,
            lora,
            beta: Dd::from(beta),
            inputs: Vec::new(),
            pre: Vec::new(),
            eps: rows_of(&batch.eps, io),
            masks,
            row_sums: Vec::new(),
            divisors,
        };
        let n = me.layers.len();
        me.inputs = vec![Vec::with_capacity(rows); n];
        me.pre = vec![Vec::with_capacity(rows); n];
        for row in 0..rows {
            let mut x = to_dd(batch.input().row(row));
            for l in 0..n {
                let z = me.affine(l, &x);
                me.inputs[l].push(x);
                x = me.activate(l, &z);
                me.pre[l].push(z);
            }
            me.row_sums.push(me.sums(row, &x));
        }
        Ok(me)
    }

    fn affine(&self, l: usize, x: &[Dd]) -> Vec<Dd> {
        let layer = &self.layers[l];
        (0..layer.fan_out)
            .map(|i| dot(&layer.w[i * layer.fan_in..(i + 1) * layer.fan_in], x) + layer.b[i])
            .collect()
    }

    fn activate(&self, l: usize, z: &[Dd]) -> Vec<Dd> {
        if l + 1 < self.layers.len() {
            z.iter().map(|v| v.tanh()).collect()
        } else {
            z.to_vec()
        }
    }

    fn sums(&self, row: usize, out: &[Dd]) -> Sums {
        let mut s = [Dd::ZERO; 3];
        for (k, (&o, &e)) in out.iter().zip(&self.eps[row]).enumerate() {
            let d = o - e;
            let d2 = d * d;
            s[0] = s[0] + d2;
            for m in 0..2 {
                let mk = self.masks[m][row][k];
                s[m + 1] = s[m + 1] + mk * mk * d2;
            }
        }
        s
    }

    /// Row sums after replacing the pre-activation of layer `l` by `z`.
    fn forward_from(&self, l: usize, row: usize, z: &[Dd]) -> Sums {
        let mut x = self.activate(l, z);
        for k in l + 1..self.layers.len() {
            let zk = self.affine(k, &x);
            x = self.activate(k, &zk);
        }
        self.sums(row, &x)
    }

    /// Row sums after adding `delta` to unit `i` of layer `l`'s pre-activation.
    fn forward_unit(&self, l: usize, row: usize, i: usize, delta: Dd) -> Sums {
        let z = &self.pre[l][row];
        let zi = z[i] + delta;
        let last = l + 1 == self.layers.len();
        if last {
            let mut out = z.clone();
            out[i] = zi;
            return self.sums(row, &out);
        }
        // Only unit i of the activation moves; the next pre-activation
        // shifts along column i of the next weight.
        let da = zi.tanh() - z[i].tanh();
        let next: Vec<Dd> = self.pre[l + 1][row]
            .iter()
            .zip(self.layers[l + 1].col(i))
            .map(|(&zn, w)| zn + w * da)
            .collect();
        self.forward_from(l + 1, row, &next)
    }

    fn perturbed(&self, c: &Coord, s: Dd) -> Sums {
        let mut total = [Dd::ZERO; 3];
        for row in 0..self.row_sums.len() {
            let new = match *c {
                Coord::Weight { layer, i, j } => self.forward_unit(layer, row, i, s * self.inputs[layer][row][j]),
                Coord::Bias { layer, i } => self.forward_unit(layer, row, i, s),
                Coord::LoraA { layer, r, j, rank } => {
                    // W_eff[:, j] moves by β·s·B[:, r].
                    let (_, b) = self.lora[layer].as_ref().expect("adapted layer");
                    let xj = self.inputs[layer][row][j] * self.beta * s;
                    let z: Vec<Dd> = self.pre[layer][row]
                        .iter()
                        .enumerate()
                        .map(|(i, &zi)| zi + b[i * rank + r] * xj)
                        .collect();
                    self.forward_from(layer, row, &z)
                }
                Coord::LoraB { layer, i, r } => {
                    // W_eff[i, :] moves by β·s·A[r, :].
                    let (a, _) = self.lora[layer].as_ref().expect("adapted layer");
                    let fan_in = self.layers[layer].fan_in;
                    let ax = dot(&a[r * fan_in..(r + 1) * fan_in], &self.inputs[layer][row]);
                    self.forward_unit(layer, row, i, ax * self.beta * s)
                }
            };
            total = add3(total, sub3(new, self.row_sums[row]));
        }
        total
    }

    /// The three losses at the unperturbed parameters.
    pub fn losses(&self) -> [f64; 3] {
        let s = self.row_sums.iter().fold([Dd::ZERO; 3], |a, &b| add3(a, b));
        [0, 1, 2].map(|k| s[k].div(Dd::from(self.divisors[k])).to_f64())
    }

    /// Central differences `(l(θ + h·e_j) − l(θ − h·e_j)) / 2h` of the three
    /// losses, one vector per objective in parameter order.
    pub fn central_differences(&self, h: f64) -> [Vec<f64>; 3] {
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        let hd = Dd::from(h);
        for c in &self.coords {
            // Unperturbed sums cancel, leaving the difference of deltas.
            let d = sub3(self.perturbed(c, hd), self.perturbed(c, -hd));
            for k in 0..3 {
                out[k].push(d[k].div(Dd::from(2.0 * h * self.divisors[k])).to_f64());
            }
        }
        out
    }
}
