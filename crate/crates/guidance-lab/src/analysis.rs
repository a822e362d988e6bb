//! Quantitative analysis: the degree-of-modification estimator, decay-curve
//! fitting, empirical proposition checks, reproduction rates, and NR@p.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{Concept, Sign};
use crate::error::{Error, Result};
use crate::mixture::{MixtureSpec, NoiseLevel};
use crate::sampler::EpsModel;
use crate::vecmath;

/// Norm below which a guidance vector is treated as numerically zero; cosine
/// against such a vector is undefined and the probe is skipped.
pub const GUIDANCE_NORM_FLOOR: f64 = 1e-6;

/// Probes with `||y0 - CG*|| < this` leave the mixing coefficient undefined.
pub const LAMBDA_DENOM_FLOOR: f64 = 1e-8;

/// Floor applied to lambda values before the log in the decay fit.
pub const LAMBDA_LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Probe {
    pub x: Vec<f64>,
    pub level: NoiseLevel,
}

/// Probe points from the diffused data distribution, with levels drawn from
/// a band of the schedule (fractions of T).
pub fn make_probes(
    world: &MixtureSpec,
    schedule: &crate::sampler::NoiseSchedule,
    n: usize,
    seed: u64,
    band: (f64, f64),
) -> Vec<Probe> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let t_lo = ((schedule.timesteps as f64) * band.0) as usize;
    let t_hi = (((schedule.timesteps as f64) * band.1) as usize).clamp(t_lo + 1, schedule.timesteps);
    (0..n)
        .map(|_| {
            let t = rng.random_range(t_lo..t_hi);
            let level = schedule.level(t);
            let x = world.sample_diffused(None, &level, &mut rng);
            Probe { x, level }
        })
        .collect()
}

/// Conditional guidance of a model: `gamma * (eps(x,t,c) - eps(x,t))`.
pub fn model_guidance<M: EpsModel + ?Sized>(
    model: &M,
    x: &[f64],
    level: &NoiseLevel,
    concept: &Concept,
    gamma: f64,
) -> Result<Vec<f64>> {
    let cond = model.eps(x, level, Some(concept))?;
    let uncond = model.eps(x, level, None)?;
    Ok(cond
        .iter()
        .zip(&uncond)
        .map(|(c, u)| gamma * (c - u))
        .collect())
}

/// Where the inhibition ground truth y0 comes from, expressed in guidance
/// space via the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum Y0Source {
    /// Negation-style inhibition: `y0 = -eta * CG*(c_t)`.
    Negation { target: Concept, eta: f64 },
    /// Anchor-style inhibition: `y0 = CG*(c_a)`; an empty anchor gives zero.
    Anchor { anchor: Concept },
}

impl Y0Source {
    pub fn y0(&self, world: &MixtureSpec, x: &[f64], level: &NoiseLevel, gamma: f64) -> Result<Vec<f64>> {
        match self {
            Y0Source::Negation { target, eta } => Ok(vecmath::scale(
                &world.guidance_star(x, level, target, gamma)?,
                -eta,
            )),
            Y0Source::Anchor { anchor } => world.guidance_star(x, level, anchor, gamma),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub concept: Concept,
    pub lambda_hat: f64,
    pub stderr: f64,
    pub probes: usize,
}

/// Per-probe mixing coefficient of the decomposition
/// `CG(c) = lambda * y0 + (1 - lambda) * CG*(c)`, solved by least-squares
/// projection; returns `None` when y0 and CG* coincide at this probe.
pub fn lambda_at_probe<M: EpsModel + ?Sized>(
    model: &M,
    world: &MixtureSpec,
    concept: &Concept,
    y0_source: &Y0Source,
    probe: &Probe,
    gamma: f64,
) -> Result<Option<f64>> {
    let g = model_guidance(model, &probe.x, &probe.level, concept, gamma)?;
    let g_star = world.guidance_star(&probe.x, &probe.level, concept, gamma)?;
    let y0 = y0_source.y0(world, &probe.x, &probe.level, gamma)?;
    let axis = vecmath::sub(&y0, &g_star);
    let denom = vecmath::dot(&axis, &axis);
    if denom.sqrt() < LAMBDA_DENOM_FLOOR {
        return Ok(None);
    }
    let dev = vecmath::sub(&g, &g_star);
    Ok(Some(vecmath::dot(&dev, &axis) / denom))
}

/// Probe-averaged degree of modification at a concept.
pub fn lambda_hat<M: EpsModel + ?Sized>(
    model: &M,
    world: &MixtureSpec,
    concept: &Concept,
    y0_source: &Y0Source,
    probes: &[Probe],
    gamma: f64,
) -> Result<LambdaEstimate> {
    let mut values = Vec::with_capacity(probes.len());
    for probe in probes {
        if let Some(l) = lambda_at_probe(model, world, concept, y0_source, probe, gamma)? {
            values.push(l);
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidAnalysis(format!(
            "y0 and oracle guidance coincide at every probe for '{}'",
            concept.label
        )));
    }
    Ok(LambdaEstimate {
        concept: concept.clone(),
        lambda_hat: vecmath::mean(&values),
        stderr: vecmath::stderr_of_mean(&values),
        probes: values.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// Scale of the fitted exponential decay `lambda = exp(-d / sigma^2)`.
    /// NaN when the regression slope has the wrong sign.
    pub sigma_hat: f64,
    /// Spearman rank correlation of lambda against distance.
    pub spearman_rho: f64,
    /// RMSE between observed and fitted lambda values.
    pub rmse: f64,
    /// Set when the log floor clipped at least one lambda.
    pub floor_hit: bool,
}

/// Least-squares fit of `lambda = exp(-d / sigma^2)` via a through-origin
/// regression of `log(max(lambda, floor))` on distance.
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < 4 {
        return Err(Error::InvalidAnalysis(
            "decay fit needs at least 4 points".into(),
        ));
    }
    for (i, (di, _)) in points.iter().enumerate() {
        for (dj, _) in &points[i + 1..] {
            if di == dj {
                return Err(Error::InvalidAnalysis("distances must be distinct".into()));
            }
        }
    }
    if points.iter().all(|&(_, l)| l <= 0.0) {
        return Err(Error::InvalidAnalysis(
            "all lambda estimates are non-positive; no inhibition detected".into(),
        ));
    }
    let mut floor_hit = false;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d, l) in points {
        let lf = if l < LAMBDA_LOG_FLOOR {
            floor_hit = true;
            LAMBDA_LOG_FLOOR
        } else {
            l
        };
        num += d * lf.ln();
        den += d * d;
    }
    let slope = num / den; // expected negative: ln lambda = -d / sigma^2
    let sigma_hat = if slope < 0.0 { (-1.0 / slope).sqrt() } else { f64::NAN };
    let rmse = (points
        .iter()
        .map(|&(d, l)| {
            let fit = (slope * d).exp();
            (l - fit) * (l - fit)
        })
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let ds: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(DecayFit {
        sigma_hat,
        spearman_rho: vecmath::spearman(&ds, &ls),
        rmse,
        floor_hit,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropositionReport {
    /// (distance(c_d, c_t), mean cosine of reconstructed guidance vs CG*(c_t))
    pub p1_cosines: Vec<(f64, f64)>,
    /// (stack size, mean norm of the stacked attack guidance)
    pub p2_gain: Vec<(usize, f64)>,
    /// Fraction of (probe, detour, sign) draws with lambda(c_t +/- c_d) <
    /// lambda(c_t); None when the net shows no inhibition at c_t.
    pub p3_holds_fraction: Option<f64>,
    /// Same fraction split per detour distance.
    pub p3_per_detour: Vec<(f64, Option<f64>)>,
    /// Mean cosine of (g(c_t) - g(c_a)) vs (g*(c_t) - g*(c_a)); None without
    /// a non-empty anchor.
    pub p4_cosine: Option<f64>,
}

/// Inhibition is considered absent when |lambda(c_t)| stays below this, which
/// makes the P3 comparison vacuous.
const P3_APPLICABLE_LAMBDA: f64 = 0.05;

/// Empirical counterparts of the four propositions on a (usually inhibited)
/// model, measured against the analytic oracle.
#[allow(clippy::too_many_arguments)]
pub fn check_propositions<M: EpsModel + ?Sized>(
    model: &M,
    world: &MixtureSpec,
    target: &Concept,
    ladder: &[Concept],
    anchor: Option<&Concept>,
    y0_source: &Y0Source,
    probes: &[Probe],
    gamma: f64,
) -> Result<PropositionReport> {
    if ladder.is_empty() {
        return Err(Error::InvalidAnalysis("empty detour ladder".into()));
    }

    // P1: reconstructed guidance vs the oracle's target guidance
    let mut p1_cosines = Vec::with_capacity(ladder.len());
    for detour in ladder {
        let combined = target.combine(detour, Sign::Plus)?;
        let mut cosines = Vec::new();
        for probe in probes {
            let g_comb = model_guidance(model, &probe.x, &probe.level, &combined, gamma)?;
            let g_det = model_guidance(model, &probe.x, &probe.level, detour, gamma)?;
            let rec = vecmath::sub(&g_comb, &g_det);
            let g_star_t = world.guidance_star(&probe.x, &probe.level, target, gamma)?;
            if let Some(c) = vecmath::cosine(&rec, &g_star_t, GUIDANCE_NORM_FLOOR) {
                cosines.push(c);
            }
        }
        let dist = detour.distance(target)?;
        let mean = if cosines.is_empty() {
            f64::NAN
        } else {
            vecmath::mean(&cosines)
        };
        p1_cosines.push((dist, mean));
    }
    p1_cosines.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // P2: norm of the summed A1-style reconstruction over growing stacks
    let mut p2_gain = Vec::new();
    for n in 1..=ladder.len().min(3) {
        let mut norms = Vec::new();
        for probe in probes {
            let mut acc = vec![0.0; world.dim];
            for detour in &ladder[..n] {
                let combined = target.combine(detour, Sign::Plus)?;
                let g_comb = model_guidance(model, &probe.x, &probe.level, &combined, gamma)?;
                let g_det = model_guidance(model, &probe.x, &probe.level, detour, gamma)?;
                vecmath::add_scaled(&mut acc, &g_comb, 1.0);
                vecmath::add_scaled(&mut acc, &g_det, -1.0);
            }
            norms.push(vecmath::norm(&acc));
        }
        p2_gain.push((n, vecmath::mean(&norms)));
    }

    // P3: per-probe lambda comparisons along the ladder, both signs
    let mut lambda_target = Vec::new();
    for probe in probes {
        lambda_target.push(lambda_at_probe(model, world, target, y0_source, probe, gamma)?);
    }
    let mean_target: f64 = {
        let vals: Vec<f64> = lambda_target.iter().flatten().copied().collect();
        if vals.is_empty() {
            0.0
        } else {
            vecmath::mean(&vals)
        }
    };
    let applicable = mean_target.abs() >= P3_APPLICABLE_LAMBDA;
    let mut p3_per_detour = Vec::with_capacity(ladder.len());
    let mut holds_total = 0usize;
    let mut comparisons_total = 0usize;
    for detour in ladder {
        let dist = detour.distance(target)?;
        if !applicable {
            p3_per_detour.push((dist, None));
            continue;
        }
        let mut holds = 0usize;
        let mut comparisons = 0usize;
        for (probe, lt) in probes.iter().zip(&lambda_target) {
            let Some(lt) = lt else { continue };
            for sign in [Sign::Plus, Sign::Minus] {
                let moved = target.combine(detour, sign)?;
                if let Some(lm) =
                    lambda_at_probe(model, world, &moved, y0_source, probe, gamma)?
                {
                    comparisons += 1;
                    if lm < *lt {
                        holds += 1;
                    }
                }
            }
        }
        holds_total += holds;
        comparisons_total += comparisons;
        let frac = if comparisons == 0 {
            None
        } else {
            Some(holds as f64 / comparisons as f64)
        };
        p3_per_detour.push((dist, frac));
    }
    let p3_holds_fraction = if applicable && comparisons_total > 0 {
        Some(holds_total as f64 / comparisons_total as f64)
    } else {
        None
    };

    // P4: anchored difference stays colinear with the oracle's
    let p4_cosine = match anchor {
        Some(a) if !a.is_empty_concept() => {
            let mut cosines = Vec::new();
            for probe in probes {
                let g_t = model_guidance(model, &probe.x, &probe.level, target, gamma)?;
                let g_a = model_guidance(model, &probe.x, &probe.level, a, gamma)?;
                let gs_t = world.guidance_star(&probe.x, &probe.level, target, gamma)?;
                let gs_a = world.guidance_star(&probe.x, &probe.level, a, gamma)?;
                if let Some(c) = vecmath::cosine(
                    &vecmath::sub(&g_t, &g_a),
                    &vecmath::sub(&gs_t, &gs_a),
                    GUIDANCE_NORM_FLOOR,
                ) {
                    cosines.push(c);
                }
            }
            if cosines.is_empty() {
                None
            } else {
                Some(vecmath::mean(&cosines))
            }
        }
        _ => None,
    };

    Ok(PropositionReport {
        p1_cosines,
        p2_gain,
        p3_holds_fraction,
        p3_per_detour,
        p4_cosine,
    })
}

/// Fraction of points whose posterior concept score exceeds the threshold.
pub fn reproduction_rate(
    world: &MixtureSpec,
    points: &[Vec<f64>],
    concept: &Concept,
    threshold: f64,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidAnalysis("empty point list".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidAnalysis(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let mut hits = 0usize;
    for p in points {
        if world.posterior(p, concept)? > threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / points.len() as f64)
}

/// Normalized reproduction rate at percentile p: the fraction of test scores
/// strictly above the nearest-rank p-th percentile of the baseline scores.
pub fn nr_at_p(baseline: &[f64], test: &[f64], p: f64) -> Result<f64> {
    if baseline.is_empty() || test.is_empty() {
        return Err(Error::InvalidAnalysis("empty score list".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidAnalysis(format!("percentile {p} outside (0, 1)")));
    }
    let mut sorted = baseline.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // nearest-rank: 1-based index ceil(p * n)
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    Ok(test.iter().filter(|&&s| s > threshold).count() as f64 / test.len() as f64)
}

/// Mean cosine between the model's conditional guidance and the oracle's,
/// over probes and concepts, skipping probes where the oracle guidance is
/// numerically zero.
pub fn guidance_cosine<M: EpsModel + ?Sized>(
    model: &M,
    world: &MixtureSpec,
    concepts: &[Concept],
    probes: &[Probe],
    gamma: f64,
) -> Result<f64> {
    let mut cosines = Vec::new();
    for probe in probes {
        for c in concepts {
            let g = model_guidance(model, &probe.x, &probe.level, c, gamma)?;
            let g_star = world.guidance_star(&probe.x, &probe.level, c, gamma)?;
            if let Some(cs) = vecmath::cosine(&g, &g_star, 1e-2) {
                cosines.push(cs);
            }
        }
    }
    if cosines.is_empty() {
        return Err(Error::InvalidAnalysis(
            "no probe had non-degenerate oracle guidance".into(),
        ));
    }
    Ok(vecmath::mean(&cosines))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::LinearOracle;
    use crate::sampler::{NoiseSchedule, SamplerKind};

    fn setup() -> (MixtureSpec, NoiseSchedule) {
        let world = MixtureSpec::ring(6, 8.0);
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.19, SamplerKind::Ddpm, 1.0).unwrap();
        (world, schedule)
    }

    /// Model whose guidance is a fixed blend of y0 and the oracle guidance.
    struct BlendModel<'a> {
        world: &'a MixtureSpec,
        y0: Y0Source,
        lambda: f64,
    }

    impl<'a> EpsModel for BlendModel<'a> {
        fn dim(&self) -> usize {
            self.world.dim
        }
        fn concept_dim(&self) -> usize {
            self.world.component_count()
        }
        fn eps(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
            let mut out = self.world.eps_star(x, level, None)?;
            if let Some(c) = concept {
                let g_star = self.world.guidance_star(x, level, c, 1.0)?;
                let y0 = self.y0.y0(self.world, x, level, 1.0)?;
                for i in 0..out.len() {
                    out[i] += self.lambda * y0[i] + (1.0 - self.lambda) * g_star[i];
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn lambda_trivial_limits() {
        let (world, schedule) = setup();
        let target = Concept::base(0, 6).unwrap();
        let y0 = Y0Source::Negation {
            target: target.clone(),
            eta: 1.0,
        };
        let probes = make_probes(&world, &schedule, 32, 5, (0.2, 0.9));

        for (lam, expect) in [(0.0, 0.0), (1.0, 1.0), (0.3, 0.3)] {
            let model = BlendModel {
                world: &world,
                y0: y0.clone(),
                lambda: lam,
            };
            let est = lambda_hat(&model, &world, &target, &y0, &probes, 6.0).unwrap();
            assert!(
                (est.lambda_hat - expect).abs() < 1e-9,
                "lambda {lam}: {}",
                est.lambda_hat
            );
            assert!(est.stderr < 1e-9);
        }
    }

    #[test]
    fn lambda_ignores_orthogonal_residual() {
        // g = 0.3 y0 + 0.7 g* + r with r orthogonal to (y0 - g*): the
        // projection must still report 0.3. Verified on synthetic vectors.
        let g_star = [1.0, 0.0];
        let y0 = [0.0, 2.0];
        let axis = [y0[0] - g_star[0], y0[1] - g_star[1]];
        // r orthogonal to axis
        let r = [axis[1] * 0.37, -axis[0] * 0.37];
        let g = [
            0.3 * y0[0] + 0.7 * g_star[0] + r[0],
            0.3 * y0[1] + 0.7 * g_star[1] + r[1],
        ];
        let dev = [g[0] - g_star[0], g[1] - g_star[1]];
        let lambda = vecmath::dot(&dev, &axis) / vecmath::dot(&axis, &axis);
        assert!((lambda - 0.3).abs() < 1e-12);
    }

    #[test]
    fn lambda_errors_when_axis_degenerate() {
        let (world, schedule) = setup();
        let target = Concept::base(0, 6).unwrap();
        // anchor = target makes y0 == g* at every probe
        let y0 = Y0Source::Anchor {
            anchor: target.clone(),
        };
        let probes = make_probes(&world, &schedule, 8, 5, (0.2, 0.9));
        let oracle = LinearOracle { world: &world };
        assert!(lambda_hat(&oracle, &world, &target, &y0, &probes, 6.0).is_err());
    }

    #[test]
    fn lambda_scale_equivariance() {
        // scaling (g, y0, g*) by alpha > 0 leaves the projection unchanged:
        // exercised through gamma, which scales all three.
        let (world, schedule) = setup();
        let target = Concept::base(0, 6).unwrap();
        let y0 = Y0Source::Negation {
            target: target.clone(),
            eta: 1.0,
        };
        let probes = make_probes(&world, &schedule, 16, 5, (0.2, 0.9));
        let model = BlendModel {
            world: &world,
            y0: y0.clone(),
            lambda: 0.42,
        };
        let a = lambda_hat(&model, &world, &target, &y0, &probes, 1.0).unwrap();
        let b = lambda_hat(&model, &world, &target, &y0, &probes, 7.5).unwrap();
        assert!((a.lambda_hat - b.lambda_hat).abs() < 1e-9);
    }

    #[test]
    fn fit_decay_recovers_exact_exponential() {
        let sigma: f64 = 1.5;
        let points: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&d| (d, (-d / (sigma * sigma)).exp()))
            .collect();
        let fit = fit_decay(&points).unwrap();
        assert!((fit.sigma_hat - 1.5).abs() < 1e-6, "sigma {}", fit.sigma_hat);
        assert!((fit.spearman_rho + 1.0).abs() < 1e-12);
        assert!(fit.rmse < 1e-12);
        assert!(!fit.floor_hit);
    }

    #[test]
    fn fit_decay_flags_constant_lambda() {
        let points: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&d| (d, 0.5)).collect();
        let fit = fit_decay(&points).unwrap();
        assert!(fit.spearman_rho.abs() < 1e-9);
        assert!(fit.rmse > 0.05, "rmse {}", fit.rmse);
    }

    #[test]
    fn fit_decay_input_validation() {
        assert!(fit_decay(&[(0.5, 0.9), (1.0, 0.5), (2.0, 0.2)]).is_err());
        assert!(fit_decay(&[(1.0, 0.9), (1.0, 0.5), (2.0, 0.2), (3.0, 0.1)]).is_err());
        assert!(fit_decay(&[(0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, -0.1)]).is_err());
    }

    #[test]
    fn propositions_on_pure_oracle() {
        let (world, schedule) = setup();
        let oracle = LinearOracle { world: &world };
        let target = Concept::base(0, 6).unwrap();
        let ladder = crate::attack::detour_ladder(
            &Concept::base(2, 6).unwrap(),
            &[0.25, 0.5, 1.0, 2.0, 4.0],
        );
        let probes = make_probes(&world, &schedule, 24, 7, (0.2, 0.9));
        let y0 = Y0Source::Negation {
            target: target.clone(),
            eta: 1.0,
        };
        let report = check_propositions(
            &oracle,
            &world,
            &target,
            &ladder,
            Some(&Concept::base(3, 6).unwrap()),
            &y0,
            &probes,
            6.0,
        )
        .unwrap();
        for (d, c) in &report.p1_cosines {
            assert!(*c >= 0.99, "distance {d}: cosine {c}");
        }
        // exact linearity: stacked norms grow as 1:2:3
        let base = report.p2_gain[0].1;
        for (n, norm) in &report.p2_gain {
            assert!(
                (norm - base * *n as f64).abs() <= 1e-9 * base.max(1.0),
                "stack {n}: {norm} vs base {base}"
            );
        }
        // no inhibition: P3 not applicable
        assert!(report.p3_holds_fraction.is_none());
        // P4 exact colinearity on the oracle
        assert!(report.p4_cosine.unwrap() > 1.0 - 1e-9);

        assert!(check_propositions(
            &oracle,
            &world,
            &target,
            &[],
            None,
            &y0,
            &probes,
            6.0
        )
        .is_err());
    }

    #[test]
    fn reproduction_rate_cases() {
        let world = MixtureSpec::ring(6, 8.0);
        let c0 = Concept::base(0, 6).unwrap();
        let at_c0 = vec![world.components[0].mean.clone(); 5];
        assert_eq!(reproduction_rate(&world, &at_c0, &c0, 0.5).unwrap(), 1.0);
        let at_c3 = vec![world.components[3].mean.clone(); 5];
        assert_eq!(reproduction_rate(&world, &at_c3, &c0, 0.5).unwrap(), 0.0);
        assert!(reproduction_rate(&world, &[], &c0, 0.5).is_err());
        assert!(reproduction_rate(&world, &at_c0, &c0, 1.5).is_err());
    }

    #[test]
    fn reproduction_rate_monotone_in_threshold() {
        let world = MixtureSpec::ring(6, 8.0);
        let c0 = Concept::base(0, 6).unwrap();
        let points = world.sample_data(200, 3).unwrap();
        let mut last = f64::INFINITY;
        for th in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let r = reproduction_rate(&world, &points, &c0, th).unwrap();
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn nr_at_p_hand_example() {
        let baseline: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let test = vec![0.6, 0.4, 0.9];
        let r = nr_at_p(&baseline, &test, 0.5).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nr_at_p_dominated_test_scores() {
        let baseline = vec![0.5, 0.6, 0.7, 0.8];
        let test = vec![0.1, 0.2];
        for p in [0.25, 0.5, 0.75, 0.9] {
            assert_eq!(nr_at_p(&baseline, &test, p).unwrap(), 0.0);
        }
        assert!(nr_at_p(&[], &test, 0.5).is_err());
        assert!(nr_at_p(&baseline, &[], 0.5).is_err());
        assert!(nr_at_p(&baseline, &test, 1.0).is_err());
    }

    #[test]
    fn nr_at_p_monotone_in_p() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let baseline: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let test: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let mut last = f64::INFINITY;
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let r = nr_at_p(&baseline, &test, p).unwrap();
            assert!(r <= last);
            last = r;
        }
    }
}
