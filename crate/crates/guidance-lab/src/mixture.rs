//! The analytic ground-truth world: a Gaussian mixture with diagonal
//! covariances, its diffused marginals, exact epsilon-predictions, the
//! exactly-linear guidance oracle, and a Bayes posterior concept scorer.
//!
//! Everything here is closed form. The diffused mixture at noise level
//! alpha_bar has components `N(sqrt(ab)*mu, ab*Sigma + (1-ab)*I)`, so scores
//! and posteriors reduce to responsibility-weighted component terms computed
//! in log space.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::vecmath;

const LN_2PI: f64 = 1.8378770664093453;
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub cov_diag: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: Vec<GaussianComponent>,
}

/// One diffusion timestep: index plus its cumulative signal fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub t: usize,
    pub alpha_bar: f64,
}

impl NoiseLevel {
    pub fn new(t: usize, alpha_bar: f64) -> Result<Self> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(Error::AlphaBarOutOfRange(alpha_bar));
        }
        Ok(NoiseLevel { t, alpha_bar })
    }
}

/// Forward-process marginal of a single Gaussian component.
pub fn diffused_component(
    mean: &[f64],
    cov_diag: &[f64],
    alpha_bar: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::AlphaBarOutOfRange(alpha_bar));
    }
    let s = alpha_bar.sqrt();
    let mean = mean.iter().map(|m| s * m).collect();
    let cov = cov_diag
        .iter()
        .map(|v| alpha_bar * v + (1.0 - alpha_bar))
        .collect();
    Ok((mean, cov))
}

impl MixtureSpec {
    /// `count` equally weighted unit-covariance components spaced on a circle
    /// of the given radius. The default experiment world.
    pub fn ring(count: usize, radius: f64) -> Self {
        let components = (0..count)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                GaussianComponent {
                    weight: 1.0 / count as f64,
                    mean: vec![radius * angle.cos(), radius * angle.sin()],
                    cov_diag: vec![1.0, 1.0],
                }
            })
            .collect();
        MixtureSpec { dim: 2, components }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() < 2 {
            return Err(Error::InvalidMixture(
                "at least 2 components are required".into(),
            ));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_TOL:e}"
            )));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.weight < 0.0 {
                return Err(Error::InvalidMixture(format!("weight {k} is negative")));
            }
            if c.mean.len() != self.dim || c.cov_diag.len() != self.dim {
                return Err(Error::InvalidMixture(format!(
                    "component {k} has wrong dimension"
                )));
            }
            if c.cov_diag.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {k} has a non-positive covariance entry"
                )));
            }
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON form, used to tie checkpoints to the
    /// world they were trained on.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("mixture serializes");
        crate::config::fnv1a_hex(value.to_string().as_bytes())
    }

    fn log_density_component(x: &[f64], mean: &[f64], cov_diag: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let d = x[i] - mean[i];
            acc += -0.5 * (LN_2PI + cov_diag[i].ln() + d * d / cov_diag[i]);
        }
        acc
    }

    /// Conditional mixture weights for a concept: `max(embedding, 0)` times
    /// the world weights, renormalized. `None` concept means the full world.
    fn conditional_weights(&self, concept: Option<&Concept>) -> Result<Vec<f64>> {
        match concept {
            None => Ok(self.components.iter().map(|c| c.weight).collect()),
            Some(c) => {
                if c.len() != self.component_count() {
                    return Err(Error::LengthMismatch {
                        left: c.len(),
                        right: self.component_count(),
                    });
                }
                if c.is_empty_concept() {
                    return Ok(self.components.iter().map(|c| c.weight).collect());
                }
                let raw: Vec<f64> = c
                    .clipped()
                    .iter()
                    .zip(&self.components)
                    .map(|(w, comp)| w * comp.weight)
                    .collect();
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    return Err(Error::EmptyConditional(c.label.clone()));
                }
                Ok(raw.iter().map(|w| w / total).collect())
            }
        }
    }

    /// Exact epsilon-prediction for the diffused conditional mixture:
    /// `eps*(x, t, c) = -sqrt(1 - ab) * grad_x log p_t(x | c)`.
    pub fn eps_star(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
        let ab = level.alpha_bar;
        if !(ab > 0.0 && ab <= 1.0) {
            return Err(Error::AlphaBarOutOfRange(ab));
        }
        if ab == 1.0 {
            // factor sqrt(1-ab) = 0
            return Ok(vec![0.0; self.dim]);
        }
        let weights = self.conditional_weights(concept)?;
        let score = self.score_t(x, ab, &weights)?;
        Ok(score.iter().map(|s| -((1.0 - ab).sqrt()) * s).collect())
    }

    /// `grad_x log p_t(x)` for the diffused mixture with the given component
    /// weights; responsibilities are computed with log-sum-exp.
    fn score_t(&self, x: &[f64], alpha_bar: f64, weights: &[f64]) -> Result<Vec<f64>> {
        let mut log_terms = Vec::with_capacity(self.components.len());
        let mut diffused = Vec::with_capacity(self.components.len());
        for (comp, &w) in self.components.iter().zip(weights) {
            let (mean, cov) = diffused_component(&comp.mean, &comp.cov_diag, alpha_bar)?;
            let lt = if w > 0.0 {
                w.ln() + Self::log_density_component(x, &mean, &cov)
            } else {
                f64::NEG_INFINITY
            };
            log_terms.push(lt);
            diffused.push((mean, cov));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut score = vec![0.0; self.dim];
        let denom: f64 = log_terms.iter().map(|lt| (lt - max).exp()).sum();
        for (lt, (mean, cov)) in log_terms.iter().zip(&diffused) {
            let r = (lt - max).exp() / denom;
            if r == 0.0 {
                continue;
            }
            for i in 0..self.dim {
                score[i] += r * (-(x[i] - mean[i]) / cov[i]);
            }
        }
        Ok(score)
    }

    /// Log density of the diffused conditional mixture; used by tests to
    /// verify `eps_star` against numerical differentiation.
    pub fn log_density_t(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<f64> {
        let weights = self.conditional_weights(concept)?;
        let mut log_terms = Vec::with_capacity(self.components.len());
        for (comp, &w) in self.components.iter().zip(&weights) {
            if w <= 0.0 {
                continue;
            }
            let (mean, cov) = diffused_component(&comp.mean, &comp.cov_diag, level.alpha_bar)?;
            log_terms.push(w.ln() + Self::log_density_component(x, &mean, &cov));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + log_terms.iter().map(|lt| (lt - max).exp()).sum::<f64>().ln())
    }

    /// The linear guidance oracle:
    /// `CG*(x, t, c) = gamma * sum_k c_k (eps*(base_k) - eps*(empty))`.
    ///
    /// Linearity in the embedding holds by construction; negative entries
    /// contribute with negative sign.
    pub fn guidance_star(&self, x: &[f64], level: &NoiseLevel, concept: &Concept, gamma: f64) -> Result<Vec<f64>> {
        if concept.len() != self.component_count() {
            return Err(Error::LengthMismatch {
                left: concept.len(),
                right: self.component_count(),
            });
        }
        let eps0 = self.eps_star(x, level, None)?;
        let mut out = vec![0.0; self.dim];
        for (k, &w) in concept.embedding.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let eps_k = self.eps_star_single(x, level, k)?;
            for i in 0..self.dim {
                out[i] += gamma * w * (eps_k[i] - eps0[i]);
            }
        }
        Ok(out)
    }

    /// eps* conditioned on exactly one component (responsibility 1).
    fn eps_star_single(&self, x: &[f64], level: &NoiseLevel, k: usize) -> Result<Vec<f64>> {
        let ab = level.alpha_bar;
        if ab == 1.0 {
            return Ok(vec![0.0; self.dim]);
        }
        let comp = &self.components[k];
        let (mean, cov) = diffused_component(&comp.mean, &comp.cov_diag, ab)?;
        Ok((0..self.dim)
            .map(|i| (1.0 - ab).sqrt() * (x[i] - mean[i]) / cov[i])
            .collect())
    }

    /// Linear epsilon target: `eps*(empty) + CG*(c) / gamma` with gamma = 1.
    /// Coincides with `eps_star` for base concepts and the empty concept; for
    /// multi-component concepts it is the target family that keeps the
    /// trained model's guidance linear in the embedding.
    pub fn eps_linear(&self, x: &[f64], level: &NoiseLevel, concept: &Concept) -> Result<Vec<f64>> {
        let mut out = self.eps_star(x, level, None)?;
        let g = self.guidance_star(x, level, concept, 1.0)?;
        for i in 0..self.dim {
            out[i] += g[i];
        }
        Ok(out)
    }

    /// Bayes posterior mass of the concept's components at a clean point x0.
    pub fn posterior(&self, x0: &[f64], concept: &Concept) -> Result<f64> {
        if concept.len() != self.component_count() {
            return Err(Error::LengthMismatch {
                left: concept.len(),
                right: self.component_count(),
            });
        }
        let clipped = concept.clipped();
        if clipped.iter().all(|&w| w == 0.0) {
            return Err(Error::EmptyConditional(concept.label.clone()));
        }
        let mut log_terms = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            log_terms.push(comp.weight.ln() + Self::log_density_component(x0, &comp.mean, &comp.cov_diag));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_terms.iter().map(|lt| (lt - max).exp()).sum();
        let selected: f64 = log_terms
            .iter()
            .zip(&clipped)
            .filter(|(_, &w)| w > 0.0)
            .map(|(lt, _)| (lt - max).exp())
            .sum();
        Ok(selected / total)
    }

    /// i.i.d. draws from the mixture; deterministic for a fixed seed.
    pub fn sample_data(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::EmptySampleRequest);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        Ok((0..n).map(|_| self.draw(&weights, &mut rng)).collect())
    }

    fn draw<R: Rng>(&self, weights: &[f64], rng: &mut R) -> Vec<f64> {
        let k = categorical(weights, rng);
        let comp = &self.components[k];
        (0..self.dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                comp.mean[i] + comp.cov_diag[i].sqrt() * z
            })
            .collect()
    }

    /// One draw from the diffused conditional distribution at the given
    /// level: pick a component from the concept's support, sample x0, apply
    /// the forward process. Falls back to the full mixture when the clipped
    /// support is empty.
    pub fn sample_diffused<R: Rng>(
        &self,
        concept: Option<&Concept>,
        level: &NoiseLevel,
        rng: &mut R,
    ) -> Vec<f64> {
        let weights = self
            .conditional_weights(concept)
            .or_else(|_| self.conditional_weights(None))
            .expect("full mixture weights are valid");
        let x0 = self.draw(&weights, rng);
        let ab = level.alpha_bar;
        x0.iter()
            .map(|x| {
                let z: f64 = rng.sample(StandardNormal);
                ab.sqrt() * x + (1.0 - ab).sqrt() * z
            })
            .collect()
    }
}

fn categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Oracle-backed epsilon model with exactly linear conditional guidance.
/// Substituting it for a trained network isolates sampler behavior from
/// training noise.
pub struct LinearOracle<'a> {
    pub world: &'a MixtureSpec,
}

impl<'a> crate::sampler::EpsModel for LinearOracle<'a> {
    fn dim(&self) -> usize {
        self.world.dim
    }

    fn concept_dim(&self) -> usize {
        self.world.component_count()
    }

    fn eps(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
        match concept {
            None => self.world.eps_star(x, level, None),
            Some(c) => self.world.eps_linear(x, level, c),
        }
    }
}
