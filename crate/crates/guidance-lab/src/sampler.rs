//! Generation engine: noise schedule, classifier-free guidance, signed
//! compositional guidance terms, and seeded ancestral sampling (DDPM/DDIM).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concept::{Concept, Sign};
use crate::error::{Error, Result};
use crate::mixture::NoiseLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub kind: SamplerKind,
    pub ddim_eta: f64,
}

impl NoiseSchedule {
    /// Linear beta spacing over `timesteps` steps.
    pub fn linear(
        timesteps: usize,
        beta_min: f64,
        beta_max: f64,
        kind: SamplerKind,
        ddim_eta: f64,
    ) -> Result<Self> {
        if timesteps < 1 {
            return Err(Error::InvalidSchedule("timesteps must be >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "beta range ({beta_min}, {beta_max}) must satisfy 0 < min <= max < 1"
            )));
        }
        if !(0.0..=1.0).contains(&ddim_eta) {
            return Err(Error::InvalidSchedule(format!(
                "ddim_eta {ddim_eta} outside [0, 1]"
            )));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            timesteps,
            betas,
            alpha_bars,
            kind,
            ddim_eta,
        })
    }

    pub fn level(&self, t: usize) -> NoiseLevel {
        NoiseLevel {
            t,
            alpha_bar: self.alpha_bars[t],
        }
    }

    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// One signed, scaled guidance term of the compositional noise prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceTerm {
    pub direction: Sign,
    pub scale: f64,
    pub concept: Concept,
}

impl GuidanceTerm {
    pub fn new(direction: Sign, scale: f64, concept: Concept) -> Self {
        GuidanceTerm {
            direction,
            scale,
            concept,
        }
    }
}

/// Anything that predicts noise given a point, a noise level, and an
/// optional concept (None means unconditional).
pub trait EpsModel {
    fn dim(&self) -> usize;
    fn concept_dim(&self) -> usize;
    fn eps(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>>;
}

/// Compositional noise prediction:
/// `eps_hat = eps(x, t) + sum_j d_j * gamma_j * (eps(x, t, c_j) - eps(x, t))`.
///
/// With a single positive term this is exactly classifier-free guidance.
pub fn guided_eps<M: EpsModel + ?Sized>(
    model: &M,
    x: &[f64],
    level: &NoiseLevel,
    terms: &[GuidanceTerm],
) -> Result<Vec<f64>> {
    let uncond = model.eps(x, level, None)?;
    let mut out = uncond.clone();
    for term in terms {
        let cond = model.eps(x, level, Some(&term.concept))?;
        let s = term.direction.factor() * term.scale;
        for i in 0..out.len() {
            out[i] += s * (cond[i] - uncond[i]);
        }
    }
    Ok(out)
}

/// Single-prompt classifier-free guidance, kept separate so the N=1
/// reduction of the compositional form can be checked against it.
pub fn cfg_eps<M: EpsModel + ?Sized>(
    model: &M,
    x: &[f64],
    level: &NoiseLevel,
    concept: &Concept,
    gamma: f64,
) -> Result<Vec<f64>> {
    let uncond = model.eps(x, level, None)?;
    let cond = model.eps(x, level, Some(concept))?;
    Ok(uncond
        .iter()
        .zip(&cond)
        .map(|(u, c)| u + gamma * (c - u))
        .collect())
}

/// One ancestral DDPM update from step t to t-1.
/// Posterior variance `beta_tilde = (1 - ab_prev) / (1 - ab) * beta_t`.
pub fn ddpm_step(
    schedule: &NoiseSchedule,
    t: usize,
    x: &[f64],
    eps_hat: &[f64],
    noise: &[f64],
) -> Vec<f64> {
    let beta = schedule.betas[t];
    let alpha = 1.0 - beta;
    let ab = schedule.alpha_bars[t];
    let ab_prev = schedule.alpha_bar_prev(t);
    let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
    let sigma = var.sqrt();
    (0..x.len())
        .map(|i| {
            let mean = (x[i] - beta / (1.0 - ab).sqrt() * eps_hat[i]) / alpha.sqrt();
            mean + sigma * noise[i]
        })
        .collect()
}

/// One DDIM update from step t to t-1 with stochasticity eta.
/// eta = 0 is deterministic; eta = 1 matches the DDPM update law.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    t: usize,
    x: &[f64],
    eps_hat: &[f64],
    noise: &[f64],
    eta: f64,
) -> Vec<f64> {
    let ab = schedule.alpha_bars[t];
    let ab_prev = schedule.alpha_bar_prev(t);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
    let dir_coeff = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    (0..x.len())
        .map(|i| {
            let x0 = (x[i] - (1.0 - ab).sqrt() * eps_hat[i]) / ab.sqrt();
            ab_prev.sqrt() * x0 + dir_coeff * eps_hat[i] + sigma * noise[i]
        })
        .collect()
}

/// Ancestral sampling of `n` points. Each sample owns an RNG stream derived
/// from `(seed, index)`, so results do not depend on batch partitioning.
pub fn sample<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    terms: &[GuidanceTerm],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::EmptySampleRequest);
    }
    let dim = model.dim();
    let mut out = Vec::with_capacity(n);
    for index in 0..n {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for t in (0..schedule.timesteps).rev() {
            let level = schedule.level(t);
            let eps_hat = guided_eps(model, &x, &level, terms)?;
            let noise: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            x = match schedule.kind {
                SamplerKind::Ddpm => ddpm_step(schedule, t, &x, &eps_hat, &noise),
                SamplerKind::Ddim => ddim_step(schedule, t, &x, &eps_hat, &noise, schedule.ddim_eta),
            };
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample {
                    step: t,
                    scales: terms.iter().map(|term| term.scale).collect(),
                });
            }
        }
        out.push(x);
    }
    Ok(out)
}
