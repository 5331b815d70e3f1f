use crate::numerics::Tensor;

use super::DiffusionError;

/// Linear-β forward process; timesteps run from 1 to `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `β_t` linear from `beta_start` at `t = 1` to `beta_end` at `t = T`,
/// `ᾱ_t = Π_{s≤t} (1 − β_s)`.
pub fn make_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if t_max == 0 {
        return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..t_max)
        .map(|i| {
            if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(beta)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "every beta must lie in (0, 1), got {beta:?}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `ᾱ_1 … ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::InvalidTimestep { t, max: self.steps() });
        }
        Ok(self.alpha_bar[t - 1])
    }
}

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor, DiffusionError> {
    q_sample_with_alpha_bar(z0, s.alpha_bar(t)?, eps)
}

/// [`q_sample`] at an explicit `ᾱ ∈ [0, 1]`.
pub fn q_sample_with_alpha_bar(z0: &Tensor, alpha_bar: f64, eps: &Tensor) -> Result<Tensor, DiffusionError> {
    if z0.shape() != eps.shape() {
        return Err(DiffusionError::Shape(format!(
            "z0 {:?} vs eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(DiffusionError::InvalidSchedule(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(z0.zip_with(eps, |z, e| a * z + b * e)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_schedules() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.beta(), &[0.1, 0.2]);
        assert!((s.alpha_bars()[1] - 0.72).abs() < 1e-15);
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule_decays() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let ab = s.alpha_bars();
        let direct: f64 = s.beta().iter().map(|b| 1.0 - b).product();
        assert_eq!(ab[999], direct);
        assert!(ab[999] < 1e-4);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab.iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(1001).is_err());
    }

    #[test]
    fn limits() {
        let z0 = Tensor::vector(&[1.0, -2.0]);
        let eps = Tensor::vector(&[0.5, 0.25]);
        assert_eq!(q_sample_with_alpha_bar(&z0, 1.0, &eps).unwrap(), z0);
        assert_eq!(q_sample_with_alpha_bar(&z0, 0.0, &eps).unwrap(), eps);
        assert!(q_sample_with_alpha_bar(&z0, 0.5, &Tensor::vector(&[1.0])).is_err());
    }
}
