//! Discrete diffusion noise schedule and the sampler algebra built on it:
//! forward noising, clean-image prediction from a score, the noise implied
//! by a clean estimate, and the zeta-mixed DDIM-style reverse update.
//!
//! Timesteps are 1-based (`1..=T`) with the convention `alpha_bar(0) = 1`.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::cube::Field;
use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta_start: f64,
    beta_end: f64,
    // index 0 holds t = 1
    betas: Vec<f64>,
    // index t, with alpha_bars[0] = 1
    alpha_bars: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule constants are valid")
    }
}

impl DiffusionSchedule {
    /// Linearly increasing betas from `beta_start` to `beta_end` over `steps` entries.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(DiffusionSchedule {
            beta_start,
            beta_end,
            betas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t > self.steps() || (!allow_zero && t == 0) {
            return Err(Error::InvalidParameter(format!(
                "timestep {t} outside {}..={}",
                if allow_zero { 0 } else { 1 },
                self.steps()
            )));
        }
        Ok(())
    }

    /// Panics if `t` is 0 or beyond `T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Noise level `sqrt((1 - alpha_bar) / alpha_bar)` of the equivalent
    /// variance-exploding image.
    pub fn sigma_bar(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ((1.0 - ab) / ab).sqrt()
    }

    /// Timestep whose `sigma_bar` is closest to `sigma`.
    pub fn nearest_timestep(&self, sigma: f64) -> usize {
        (1..=self.steps())
            .min_by(|&a, &b| {
                (self.sigma_bar(a) - sigma)
                    .abs()
                    .total_cmp(&(self.sigma_bar(b) - sigma).abs())
            })
            .unwrap_or(1)
    }

    /// `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps` for a given noise field.
    pub fn forward_with_noise<F: Field + Clone>(&self, x0: &F, t: usize, eps: &F) -> Result<F> {
        self.check_t(t, true)?;
        x0.check_same_shape(eps)?;
        let (a, s) = (self.alpha_bar(t).sqrt(), (1.0 - self.alpha_bar(t)).sqrt());
        let mut out = x0.clone();
        for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
            *o = a * *o + s * e;
        }
        Ok(out)
    }

    /// Forward noising with a seeded standard-normal field.
    pub fn forward_sample<F: Field + Clone>(&self, x0: &F, t: usize, seed: u64) -> Result<F> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let eps = gaussian_like(x0, &mut rng);
        self.forward_with_noise(x0, t, &eps)
    }

    /// Tweedie estimate `(x_t + (1 - ab) score) / sqrt(ab)`.
    pub fn predict_clean<F: Field + Clone>(&self, x_t: &F, score: &F, t: usize) -> Result<F> {
        self.check_t(t, false)?;
        x_t.check_same_shape(score)?;
        let ab = self.alpha_bar(t);
        let (inv, var) = (1.0 / ab.sqrt(), 1.0 - ab);
        let mut out = x_t.clone();
        for (o, s) in out.values_mut().iter_mut().zip(score.values()) {
            *o = inv * (*o + var * s);
        }
        Ok(out)
    }

    /// Noise implied by a clean estimate: `(x_t - sqrt(ab) x0) / sqrt(1 - ab)`.
    pub fn implied_noise<F: Field + Clone>(&self, x_t: &F, x0_hat: &F, t: usize) -> Result<F> {
        self.check_t(t, false)?;
        x_t.check_same_shape(x0_hat)?;
        let ab = self.alpha_bar(t);
        let (a, inv) = (ab.sqrt(), 1.0 / (1.0 - ab).sqrt());
        let mut out = x_t.clone();
        for (o, x0) in out.values_mut().iter_mut().zip(x0_hat.values()) {
            *o = inv * (*o - a * x0);
        }
        Ok(out)
    }

    /// Reverse update to `t_to`:
    /// `sqrt(ab') x0 + sqrt(1 - ab') (sqrt(1 - zeta) eps_hat + sqrt(zeta) eps_new)`.
    ///
    /// Fresh noise is drawn from `rng` only when `zeta > 0`.
    pub fn reverse_step<F: Field + Clone, R: Rng + ?Sized>(
        &self,
        zeta: f64,
        x0_hat: &F,
        eps_hat: &F,
        t_from: usize,
        t_to: usize,
        rng: &mut R,
    ) -> Result<F> {
        if t_to >= t_from {
            return Err(Error::InvalidParameter(format!(
                "reverse step must decrease t (from {t_from} to {t_to})"
            )));
        }
        self.check_t(t_from, false)?;
        check_zeta(zeta)?;
        x0_hat.check_same_shape(eps_hat)?;
        let ab = self.alpha_bar(t_to);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (keep, fresh) = ((1.0 - zeta).sqrt(), zeta.sqrt());
        let mut out = x0_hat.clone();
        if zeta > 0.0 {
            for (o, e) in out.values_mut().iter_mut().zip(eps_hat.values()) {
                let g: f64 = StandardNormal.sample(rng);
                *o = a * *o + s * (keep * e + fresh * g);
            }
        } else {
            for (o, e) in out.values_mut().iter_mut().zip(eps_hat.values()) {
                *o = a * *o + s * e;
            }
        }
        Ok(out)
    }

    /// Ancestral DDPM step from `t` to `t - 1` given a noise prediction:
    /// `(x_t - beta / sqrt(1 - ab) eps) / sqrt(alpha) + sqrt(beta) z`.
    /// Not used by the solver; kept as the reference single-step sampler.
    pub fn ddpm_step<F: Field + Clone, R: Rng + ?Sized>(
        &self,
        x_t: &F,
        eps_theta: &F,
        t: usize,
        rng: &mut R,
    ) -> Result<F> {
        self.check_t(t, false)?;
        x_t.check_same_shape(eps_theta)?;
        let beta = self.beta(t);
        let coef = beta / (1.0 - self.alpha_bar(t)).sqrt();
        let inv = 1.0 / self.alpha(t).sqrt();
        let sd = if t > 1 { beta.sqrt() } else { 0.0 };
        let mut out = x_t.clone();
        for (o, e) in out.values_mut().iter_mut().zip(eps_theta.values()) {
            let z: f64 = if sd > 0.0 {
                StandardNormal.sample(rng)
            } else {
                0.0
            };
            *o = inv * (*o - coef * e) + sd * z;
        }
        Ok(out)
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&zeta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "zeta {zeta} outside [0, 1]"
        )))
    }
}

/// Field of the same shape filled with standard-normal draws.
pub fn gaussian_like<F: Field + Clone, R: Rng + ?Sized>(like: &F, rng: &mut R) -> F {
    let mut out = like.clone();
    for v in out.values_mut() {
        *v = StandardNormal.sample(rng);
    }
    out
}

/// Reverse-process knobs. The DDIM noise term is fixed at zero; `zeta` is
/// the only source of stochasticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub zeta: f64,
    pub t_start: usize,
    pub step_count: usize,
    pub seed: u64,
}

impl SamplerParams {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<()> {
        check_zeta(self.zeta)?;
        if !(1 <= self.step_count
            && self.step_count <= self.t_start
            && self.t_start <= schedule.steps())
        {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= steps ({}) <= t_start ({}) <= T ({})",
                self.step_count,
                self.t_start,
                schedule.steps()
            )));
        }
        Ok(())
    }
}

/// Strictly decreasing timesteps from `t_start` down to 1, `step_count`
/// entries, followed by a terminal 0.
///
/// Entry `k` is `round(t_start * (1 - k / (step_count - 1)))`, the last is
/// pinned to 1, then collisions are pushed apart (up from the tail, down
/// from the head) so the sequence stays strictly decreasing.
pub fn timestep_ladder(t_start: usize, step_count: usize) -> Result<Vec<usize>> {
    if step_count == 0 || step_count > t_start {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= steps ({step_count}) <= t_start ({t_start})"
        )));
    }
    if step_count == 1 {
        return Ok(vec![t_start, 0]);
    }
    let n = step_count;
    let mut ts: Vec<usize> = (0..n)
        .map(|k| (t_start as f64 * (1.0 - k as f64 / (n - 1) as f64)).round() as usize)
        .collect();
    ts[0] = t_start;
    ts[n - 1] = 1;
    for k in (0..n - 1).rev() {
        ts[k] = ts[k].max(ts[k + 1] + 1);
    }
    ts[0] = t_start;
    for k in 1..n {
        ts[k] = ts[k].min(ts[k - 1] - 1);
    }
    ts.push(0);
    Ok(ts)
}
