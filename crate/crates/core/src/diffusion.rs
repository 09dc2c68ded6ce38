//! Noise schedule and the closed-form diffusion algebra.
//!
//! Forward noising `z_t = sqrt(a_t) z_0 + sqrt(1 - a_t) eps`, its inverse for a
//! predicted noise, the DDIM update, and the training losses as evaluators.
//! Timesteps run over `0..=T` with `a_0 = 1`.

use ndarray::{Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{compensated_sum, ensure_same_shape, LatentSequence};

/// How the per-step DDIM noise scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SigmaPolicy {
    /// Deterministic DDIM.
    #[default]
    Zero,
    /// `sigma_t = eta * sqrt((1 - a_{t-1}) / (1 - a_t)) * sqrt(1 - a_t / a_{t-1})`.
    Eta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cum: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule over `steps` timesteps with all sigmas zero.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Schedule(format!(
                "betas must satisfy 0 < beta_min <= beta_max < 1, got {beta_min}..{beta_max}"
            )));
        }
        let denom = (steps - 1).max(1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|s| beta_min + s as f64 / denom * (beta_max - beta_min))
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alphas_cum = Vec::with_capacity(betas.len() + 1);
        alphas_cum.push(1.0);
        for b in &betas {
            let prev = *alphas_cum.last().unwrap();
            alphas_cum.push(prev * (1.0 - b));
        }
        let sigmas = vec![0.0; betas.len()];
        Ok(Self {
            betas,
            alphas_cum,
            sigmas,
        })
    }

    /// Replaces the sigmas according to `policy`.
    pub fn with_sigma_policy(mut self, policy: SigmaPolicy) -> Result<Self> {
        match policy {
            SigmaPolicy::Zero => self.sigmas.iter_mut().for_each(|s| *s = 0.0),
            SigmaPolicy::Eta(eta) => {
                if !(0.0..=1.0).contains(&eta) {
                    return Err(Error::Schedule(format!("eta {eta} outside [0, 1]")));
                }
                for t in 1..=self.steps() {
                    let a_t = self.alphas_cum[t];
                    let a_prev = self.alphas_cum[t - 1];
                    self.sigmas[t - 1] =
                        eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt();
                }
            }
        }
        Ok(self)
    }

    /// Sets explicit sigmas `sigma_1..sigma_T`.
    pub fn with_sigmas(mut self, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != self.steps() {
            return Err(Error::Schedule(format!(
                "expected {} sigmas, got {}",
                self.steps(),
                sigmas.len()
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Schedule("sigmas must be finite and non-negative".into()));
        }
        self.sigmas = sigmas;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `a_0..a_T`.
    pub fn alphas_cum(&self) -> &[f64] {
        &self.alphas_cum
    }

    /// `sigma_1..sigma_T`.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.alphas_cum.get(t).copied().ok_or(Error::Timestep {
            t,
            max: self.steps(),
        })
    }

    /// `sigma_t` for `t >= 1`; `sigma_0` is defined as zero.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        self.sigmas.get(t - 1).copied().ok_or(Error::Timestep {
            t,
            max: self.steps(),
        })
    }
}

/// Draws `z_t` from `z_0` given explicit noise.
pub fn q_sample(z0: &LatentSequence, t: usize, eps: &LatentSequence, sched: &NoiseSchedule) -> Result<LatentSequence> {
    ensure_same_shape("q_sample", z0.shape(), eps.shape())?;
    let a = sched.alpha(t)?;
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(Zip::from(z0).and(eps).map_collect(|&z, &e| ca * z + cn * e))
}

/// Predicted clean latent `(z_t - sqrt(1 - a_t) eps) / sqrt(a_t)`.
pub fn predict_z0(z_t: &LatentSequence, eps_pred: &LatentSequence, t: usize, sched: &NoiseSchedule) -> Result<LatentSequence> {
    ensure_same_shape("predict_z0", z_t.shape(), eps_pred.shape())?;
    let a = sched.alpha(t)?;
    if a <= 0.0 {
        return Err(Error::SingularSchedule { t });
    }
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(Zip::from(z_t).and(eps_pred).map_collect(|&z, &e| (z - cn * e) / ca))
}

/// Inverse of [`predict_z0`]: the noise that maps `z0_hat` to `z_t`.
pub fn eps_from_z0(z_t: &LatentSequence, z0_hat: &LatentSequence, t: usize, sched: &NoiseSchedule) -> Result<LatentSequence> {
    ensure_same_shape("eps_from_z0", z_t.shape(), z0_hat.shape())?;
    let a = sched.alpha(t)?;
    if a >= 1.0 {
        return Err(Error::Degenerate(format!("alpha_{t} = 1 leaves no noise to predict")));
    }
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(Zip::from(z_t).and(z0_hat).map_collect(|&z, &x| (z - ca * x) / cn))
}

/// One DDIM update from `t` to `t_prev`.
///
/// `noise` is only read when `sigma_t > 0`.
pub fn ddim_step(
    z_t: &LatentSequence,
    eps_pred: &LatentSequence,
    t: usize,
    t_prev: usize,
    noise: Option<&LatentSequence>,
    sched: &NoiseSchedule,
) -> Result<LatentSequence> {
    if t_prev >= t || t > sched.steps() {
        return Err(Error::InvalidArgument(format!(
            "ddim_step requires 0 <= t_prev < t <= T, got t={t} t_prev={t_prev} T={}",
            sched.steps()
        )));
    }
    let z0 = predict_z0(z_t, eps_pred, t, sched)?;
    let a_prev = sched.alpha(t_prev)?;
    let sigma = sched.sigma(t)?;
    let sigma_sq = sigma * sigma;
    let limit = 1.0 - a_prev;
    if sigma_sq > limit {
        return Err(Error::InvalidSigma { t, sigma_sq, limit });
    }
    let c0 = a_prev.sqrt();
    let cdir = (limit - sigma_sq).sqrt();
    let mut out = Zip::from(&z0).and(eps_pred).map_collect(|&x, &e| c0 * x + cdir * e);
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| {
            Error::InvalidArgument(format!("sigma_{t} = {sigma} > 0 but no noise was supplied"))
        })?;
        ensure_same_shape("ddim_step noise", out.shape(), noise.shape())?;
        out.zip_mut_with(noise, |o, &n| *o += sigma * n);
    }
    Ok(out)
}

fn mean_of(a: &Array4<f64>, b: &Array4<f64>, f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = a.len().max(1) as f64;
    compensated_sum(a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y))) / n
}

/// Mean squared noise-prediction error.
pub fn loss_diff(eps_true: &LatentSequence, eps_pred: &LatentSequence) -> Result<f64> {
    ensure_same_shape("loss_diff", eps_true.shape(), eps_pred.shape())?;
    Ok(mean_of(eps_true, eps_pred, |x, y| (x - y) * (x - y)))
}

/// Mean absolute latent reconstruction error.
pub fn loss_rec(z0_hat: &LatentSequence, z_target: &LatentSequence) -> Result<f64> {
    ensure_same_shape("loss_rec", z0_hat.shape(), z_target.shape())?;
    Ok(mean_of(z0_hat, z_target, |x, y| (x - y).abs()))
}

pub fn loss_inpaint(
    eps_true: &LatentSequence,
    eps_pred: &LatentSequence,
    z0_hat: &LatentSequence,
    z_target: &LatentSequence,
) -> Result<f64> {
    Ok(loss_diff(eps_true, eps_pred)? + loss_rec(z0_hat, z_target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array4;

    fn full(v: f64) -> Array4<f64> {
        Array4::from_elem((2, 1, 3, 3), v)
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert_relative_eq!(s.alphas_cum()[1], 0.9, epsilon = 1e-15);
        assert_relative_eq!(s.alphas_cum()[2], 0.72, epsilon = 1e-15);
        assert_eq!(s.alphas_cum()[0], 1.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alphas_cum(), &[1.0, 0.5]);
    }

    #[test]
    fn ten_step_product_matches_reference() {
        // tests/oracles/oracles.py
        let s = NoiseSchedule::linear(10, 0.02, 0.30).unwrap();
        assert!((s.alphas_cum()[10] - 0.1651838944805778).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn q_sample_closed_forms() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let z = q_sample(&full(0.0), 2, &full(1.0), &s).unwrap();
        assert!(z.iter().all(|v| (v - 0.28f64.sqrt()).abs() < 1e-12));
        assert!((z[[0, 0, 0, 0]] - 0.52915).abs() < 1e-5);
        let z = q_sample(&full(1.0), 2, &full(0.0), &s).unwrap();
        assert!((z[[1, 0, 2, 2]] - 0.84853).abs() < 1e-5);
        let z0 = Array4::from_shape_fn((2, 1, 3, 3), |(n, _, y, x)| (n + y * 3 + x) as f64);
        assert_eq!(q_sample(&z0, 0, &full(7.0), &s).unwrap(), z0);
        assert!(matches!(q_sample(&z0, 3, &full(0.0), &s), Err(Error::Timestep { .. })));
        assert!(q_sample(&z0, 1, &Array4::zeros((1, 1, 3, 3)), &s).is_err());
    }

    #[test]
    fn predict_z0_closed_forms() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let z = predict_z0(&full(0.72f64.sqrt()), &full(0.0), 2, &s).unwrap();
        assert!(z.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let z = predict_z0(&full(0.0), &full(0.0), 1, &s).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_ddim_step_is_predicted_z0() {
        let s = NoiseSchedule::linear(4, 0.05, 0.2).unwrap();
        let zt = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, y, x)| 0.3 * c as f64 - 0.1 * y as f64 + x as f64);
        let eps = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, y, x)| (c + y) as f64 * 0.5 - x as f64);
        let step = ddim_step(&zt, &eps, 1, 0, None, &s).unwrap();
        let z0 = predict_z0(&zt, &eps, 1, &s).unwrap();
        assert_eq!(step, z0);
        let zero = Array4::zeros((1, 2, 2, 2));
        assert_eq!(ddim_step(&zero, &zero, 3, 2, None, &s).unwrap(), zero);
    }

    #[test]
    fn ddim_with_true_noise_stays_on_curve() {
        let s = NoiseSchedule::linear(10, 0.02, 0.3).unwrap();
        let z0 = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, y, x)| ((n * 7 + c * 3 + y * 5 + x) as f64).sin());
        let eps = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, y, x)| ((n * 11 + c + y * 2 + x * 13) as f64).cos());
        for t in 1..=10 {
            let zt = q_sample(&z0, t, &eps, &s).unwrap();
            let next = ddim_step(&zt, &eps, t, t - 1, None, &s).unwrap();
            let expected = q_sample(&z0, t - 1, &eps, &s).unwrap();
            assert!(crate::tensor::max_abs_diff(&next, &expected) < 1e-12);
        }
    }

    #[test]
    fn sigma_checks() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap().with_sigmas(vec![0.5, 0.1, 0.1]).unwrap();
        let z = full(0.1);
        // sigma_1^2 > 1 - a_0 = 0
        assert!(matches!(ddim_step(&z, &z, 1, 0, Some(&z), &s), Err(Error::InvalidSigma { .. })));
        // sigma > 0 needs noise
        assert!(ddim_step(&z, &z, 3, 2, None, &s).is_err());
        let with = ddim_step(&z, &z, 3, 2, Some(&full(1.0)), &s).unwrap();
        let without = ddim_step(&z, &z, 3, 2, Some(&full(0.0)), &s).unwrap();
        assert!((with[[0, 0, 0, 0]] - without[[0, 0, 0, 0]] - 0.1).abs() < 1e-12);

        let eta = NoiseSchedule::linear(5, 0.1, 0.3).unwrap().with_sigma_policy(SigmaPolicy::Eta(1.0)).unwrap();
        assert_eq!(eta.sigma(1).unwrap(), 0.0);
        for t in 1..=5 {
            let lim = 1.0 - eta.alpha(t - 1).unwrap();
            assert!(eta.sigma(t).unwrap().powi(2) <= lim + 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let a = full(0.3);
        assert_eq!(loss_diff(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_diff(&full(0.0), &full(1.0)).unwrap(), 1.0);
        assert_eq!(loss_diff(&full(2.0), &full(-1.0)).unwrap(), 9.0);
        assert_eq!(loss_rec(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_rec(&full(0.5), &full(0.0)).unwrap(), 0.5);
        let total = loss_inpaint(&full(0.0), &full(1.0), &full(0.5), &full(0.0)).unwrap();
        assert_eq!(total, 1.5);
        assert!(loss_rec(&a, &Array4::zeros((1, 1, 1, 1))).is_err());
    }
}
