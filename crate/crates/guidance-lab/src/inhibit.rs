//! Concept erasure: negation fine-tuning, anchor fine-tuning, and the
//! closed-form projection edit.
//!
//! All three realize the same local optimization: move the model's output at
//! the target concept onto a prescribed ground truth while leaving the rest
//! of the model to generalize. The fine-tuning variants keep a frozen copy
//! of the pre-edit network as the target source; the projection edit solves
//! its normal equations exactly and touches nothing but `proj`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::mixture::{MixtureSpec, NoiseLevel};
use crate::net::ScoreNet;
use crate::sampler::NoiseSchedule;
use crate::train::{accumulate_loss_grads, Adam, FinetuneScope, Gradients, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InhibitMethod {
    Esd,
    Ac,
    Uce,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InhibitSpec {
    pub method: InhibitMethod,
    pub target: Concept,
    /// Anchor concept; `None` stands for the empty anchor.
    #[serde(default)]
    pub anchor: Option<Concept>,
    /// Negation strength for ESD.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Concepts whose projections the closed-form edit must keep.
    #[serde(default)]
    pub preserve: Vec<Concept>,
    /// Fine-tuning budget for the gradient-descent methods.
    pub finetune: TrainConfig,
    /// Ridge strength for the closed-form edit.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Which weight group fine-tuning may move.
    #[serde(default = "default_scope")]
    pub scope: FinetuneScope,
}

fn default_eta() -> f64 {
    1.0
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_scope() -> FinetuneScope {
    FinetuneScope::Full
}

impl InhibitSpec {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            InhibitMethod::Esd => {
                if self.eta < 0.0 {
                    return Err(Error::InvalidInhibition("eta must be >= 0 for ESD".into()));
                }
            }
            InhibitMethod::Ac => {
                let anchor = self.anchor.as_ref().ok_or_else(|| {
                    Error::InvalidInhibition("AC requires an anchor concept".into())
                })?;
                if anchor.embedding == self.target.embedding {
                    return Err(Error::InvalidInhibition(
                        "anchor equals target; nothing to inhibit".into(),
                    ));
                }
            }
            InhibitMethod::Uce => {
                if self.ridge < 0.0 {
                    return Err(Error::InvalidInhibition("ridge must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "target": self.target.label,
            "anchor": self.anchor.as_ref().map(|a| a.label.clone()),
            "eta": self.eta,
            "ridge": self.ridge,
            "steps": self.finetune.steps,
            "scope": self.scope,
        })
    }
}

/// Dispatch on the method.
pub fn inhibit(
    net: &ScoreNet,
    world: &MixtureSpec,
    schedule: &NoiseSchedule,
    spec: &InhibitSpec,
) -> Result<ScoreNet> {
    match spec.method {
        InhibitMethod::Esd => inhibit_esd(net, world, schedule, spec),
        InhibitMethod::Ac => inhibit_ac(net, world, schedule, spec),
        InhibitMethod::Uce => inhibit_uce(net, spec),
    }
}

/// Negation fine-tuning: the conditional output at the target is pulled onto
/// `eps_frozen(x, t) - eta * (eps_frozen(x, t, c_t) - eps_frozen(x, t))`,
/// with targets taken from a frozen copy of the pre-edit network.
pub fn inhibit_esd(
    net: &ScoreNet,
    world: &MixtureSpec,
    schedule: &NoiseSchedule,
    spec: &InhibitSpec,
) -> Result<ScoreNet> {
    if spec.method != InhibitMethod::Esd {
        return Err(Error::InvalidInhibition("spec method is not ESD".into()));
    }
    spec.validate()?;
    let frozen = net.clone();
    let eta = spec.eta;
    finetune_at_target(net, world, schedule, spec, move |x, level| {
        let e0 = frozen.forward(x, level, None)?;
        let et = frozen.forward(x, level, Some(&spec.target))?;
        Ok(e0
            .iter()
            .zip(&et)
            .map(|(u, c)| u - eta * (c - u))
            .collect())
    })
}

/// Anchor fine-tuning: the conditional output at the target is pulled onto
/// the frozen network's output at the anchor concept.
pub fn inhibit_ac(
    net: &ScoreNet,
    world: &MixtureSpec,
    schedule: &NoiseSchedule,
    spec: &InhibitSpec,
) -> Result<ScoreNet> {
    if spec.method != InhibitMethod::Ac {
        return Err(Error::InvalidInhibition("spec method is not AC".into()));
    }
    spec.validate()?;
    let frozen = net.clone();
    let anchor = spec.anchor.clone().expect("validated above");
    finetune_at_target(net, world, schedule, spec, move |x, level| {
        frozen.forward(x, level, Some(&anchor))
    })
}

fn finetune_at_target(
    net: &ScoreNet,
    world: &MixtureSpec,
    schedule: &NoiseSchedule,
    spec: &InhibitSpec,
    target_fn: impl Fn(&[f64], &NoiseLevel) -> Result<Vec<f64>>,
) -> Result<ScoreNet> {
    let cfg = &spec.finetune;
    cfg.validate()?;
    let mut out = net.clone();
    if cfg.steps == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&out, cfg);
    let mut grads = Gradients::zeros_like(&out);
    for step in 0..cfg.steps {
        grads.zero();
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let t = rng.random_range(0..schedule.timesteps);
            let level = schedule.level(t);
            // probes from the diffused data distribution at the sampled level
            let x = world.sample_diffused(None, &level, &mut rng);
            let target = target_fn(&x, &level)?;
            loss += accumulate_loss_grads(&out, &x, &level, Some(&spec.target), &target, &mut grads)?;
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        grads.scale(1.0 / cfg.batch as f64);
        adam.step(&mut out, &grads, spec.scope);
    }
    out.meta.inhibition = Some(spec.provenance());
    Ok(out)
}

/// Closed-form projection edit. Replaces `proj` with the minimizer of
///
/// ```text
/// ||W' e_t - W e_a||^2 + sum_p ||W' e_p - W e_p||^2 + ridge ||W' - W||^2
/// ```
///
/// solved exactly through its normal equations; every other weight is left
/// untouched and no gradient descent is involved.
pub fn inhibit_uce(net: &ScoreNet, spec: &InhibitSpec) -> Result<ScoreNet> {
    if spec.method != InhibitMethod::Uce {
        return Err(Error::InvalidInhibition("spec method is not UCE".into()));
    }
    spec.validate()?;
    let k = net.concept_dim;
    let m = net.proj_width();
    let e_t = &spec.target.embedding;
    if e_t.len() != k {
        return Err(Error::LengthMismatch {
            left: e_t.len(),
            right: k,
        });
    }

    // projection of a concept under the current weights: sum_k e[k] proj[k]
    let project = |e: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; m];
        for (row, &w) in net.proj.iter().zip(e) {
            if w != 0.0 {
                crate::vecmath::add_scaled(&mut p, row, w);
            }
        }
        p
    };

    let p_anchor = match &spec.anchor {
        Some(a) => {
            if a.len() != k {
                return Err(Error::LengthMismatch {
                    left: a.len(),
                    right: k,
                });
            }
            project(&a.embedding)
        }
        None => vec![0.0; m],
    };

    // lhs = e_t e_t' + sum_p e_p e_p' + ridge I   (k x k)
    // rhs = e_t p_a' + sum_p e_p p_p' + ridge W   (k x m)
    let mut lhs = vec![vec![0.0; k]; k];
    let mut rhs = vec![vec![0.0; m]; k];
    let mut add_pair = |e: &[f64], p: &[f64], lhs: &mut Vec<Vec<f64>>, rhs: &mut Vec<Vec<f64>>| {
        for i in 0..k {
            if e[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                lhs[i][j] += e[i] * e[j];
            }
            for j in 0..m {
                rhs[i][j] += e[i] * p[j];
            }
        }
    };
    add_pair(e_t, &p_anchor, &mut lhs, &mut rhs);
    for pc in &spec.preserve {
        if pc.len() != k {
            return Err(Error::LengthMismatch {
                left: pc.len(),
                right: k,
            });
        }
        let pp = project(&pc.embedding);
        add_pair(&pc.embedding, &pp, &mut lhs, &mut rhs);
    }
    for i in 0..k {
        lhs[i][i] += spec.ridge;
        for j in 0..m {
            rhs[i][j] += spec.ridge * net.proj[i][j];
        }
    }

    let proj = solve_dense(lhs, rhs)?;
    let mut out = net.clone();
    out.proj = proj;
    out.meta.inhibition = Some(spec.provenance());
    Ok(out)
}

/// Gaussian elimination with partial pivoting on [A | B]; returns X with
/// A X = B. Errors on a vanishing pivot (under-determined edit).
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let m = b.first().map(|r| r.len()).unwrap_or(0);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot < 1e-12 {
            return Err(Error::SingularEdit);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let d = a[col][col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
            for c in 0..m {
                let v = b[col][c];
                b[r][c] -= f * v;
            }
        }
    }
    for (r, row) in b.iter_mut().enumerate() {
        let d = a[r][r];
        for v in row.iter_mut() {
            *v /= d;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SamplerKind;

    fn base_concepts(k: usize) -> Vec<Concept> {
        (0..k).map(|i| Concept::base(i, k).unwrap()).collect()
    }

    fn uce_spec(net: &ScoreNet, target: Concept, anchor: Option<Concept>, preserve: Vec<Concept>, ridge: f64) -> InhibitSpec {
        let _ = net;
        InhibitSpec {
            method: InhibitMethod::Uce,
            target,
            anchor,
            eta: 1.0,
            preserve,
            finetune: TrainConfig {
                steps: 0,
                ..TrainConfig::default()
            },
            ridge,
            scope: FinetuneScope::ProjOnly,
        }
    }

    #[test]
    fn esd_zero_steps_is_noop() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 3);
        let world = MixtureSpec::ring(4, 8.0);
        let schedule = NoiseSchedule::linear(10, 1e-4, 0.19, SamplerKind::Ddpm, 1.0).unwrap();
        let spec = InhibitSpec {
            method: InhibitMethod::Esd,
            target: Concept::base(0, 4).unwrap(),
            anchor: None,
            eta: 1.0,
            preserve: vec![],
            finetune: TrainConfig {
                steps: 0,
                ..TrainConfig::default()
            },
            ridge: 0.0,
            scope: FinetuneScope::Full,
        };
        let out = inhibit_esd(&net, &world, &schedule, &spec).unwrap();
        assert_eq!(out, net);
    }

    #[test]
    fn ac_rejects_anchor_equal_to_target() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 3);
        let world = MixtureSpec::ring(4, 8.0);
        let schedule = NoiseSchedule::linear(10, 1e-4, 0.19, SamplerKind::Ddpm, 1.0).unwrap();
        let t = Concept::base(0, 4).unwrap();
        let spec = InhibitSpec {
            method: InhibitMethod::Ac,
            target: t.clone(),
            anchor: Some(t),
            eta: 1.0,
            preserve: vec![],
            finetune: TrainConfig::default(),
            ridge: 0.0,
            scope: FinetuneScope::ProjOnly,
        };
        assert!(inhibit_ac(&net, &world, &schedule, &spec).is_err());
    }

    #[test]
    fn uce_identity_edit() {
        // empty target, preserve everything, ridge 0: W' = W exactly
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 9);
        let spec = uce_spec(&net, Concept::empty(4), None, base_concepts(4), 0.0);
        let out = inhibit_uce(&net, &spec).unwrap();
        assert_eq!(out.proj, net.proj);
    }

    #[test]
    fn uce_orthogonal_edit_is_exact() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 9);
        let k = 4;
        let target = Concept::base(1, k).unwrap();
        let anchor = Concept::base(3, k).unwrap();
        let preserve: Vec<Concept> = base_concepts(k)
            .into_iter()
            .filter(|c| c.embedding != target.embedding)
            .collect();
        let spec = uce_spec(&net, target.clone(), Some(anchor.clone()), preserve.clone(), 0.0);
        let out = inhibit_uce(&net, &spec).unwrap();
        // edited target row equals the anchor projection, preserved rows are
        // exactly unchanged
        for j in 0..6 {
            assert!((out.proj[1][j] - net.proj[3][j]).abs() < 1e-12);
        }
        for p in [0usize, 2, 3] {
            assert_eq!(out.proj[p], net.proj[p]);
        }
    }

    #[test]
    fn uce_is_idempotent_with_spanning_preserve() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 42);
        let k = 4;
        let target = Concept::base(0, k).unwrap();
        let preserve: Vec<Concept> = base_concepts(k).into_iter().skip(1).collect();
        let spec = uce_spec(&net, target, Some(Concept::base(2, k).unwrap()), preserve, 0.0);
        let once = inhibit_uce(&net, &spec).unwrap();
        let twice = inhibit_uce(&once, &spec).unwrap();
        for (a, b) in once.proj.iter().flatten().zip(twice.proj.iter().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn uce_singular_without_ridge() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 5);
        let spec = uce_spec(&net, Concept::base(0, 4).unwrap(), None, vec![], 0.0);
        assert!(matches!(inhibit_uce(&net, &spec), Err(Error::SingularEdit)));
        // a positive ridge makes the same edit well posed
        let spec = uce_spec(&net, Concept::base(0, 4).unwrap(), None, vec![], 1e-3);
        assert!(inhibit_uce(&net, &spec).is_ok());
    }

    #[test]
    fn uce_matches_independent_dense_solve() {
        // K=2, m=2, W=I, e_t=[1,0], e_a=[0,1], preserve={[0,1]}, ridge=0.01
        let mut net = ScoreNet::init(2, 2, 2, &[4], 4, 1);
        net.proj = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let target = Concept::new("t", vec![1.0, 0.0]);
        let anchor = Concept::new("a", vec![0.0, 1.0]);
        let preserve = vec![Concept::new("p", vec![0.0, 1.0])];
        let spec = uce_spec(&net, target, Some(anchor), preserve, 0.01);
        let out = inhibit_uce(&net, &spec).unwrap();

        // independent route: build the same normal equations with nalgebra
        // and solve with its LU decomposition
        let lhs = nalgebra::DMatrix::<f64>::from_row_slice(2, 2, &[1.01, 0.0, 0.0, 1.01]);
        let rhs = nalgebra::DMatrix::<f64>::from_row_slice(2, 2, &[0.01, 1.0, 0.0, 1.01]);
        let solved = lhs.lu().solve(&rhs).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (out.proj[i][j] - solved[(i, j)]).abs() < 1e-10,
                    "({i},{j}): {} vs {}",
                    out.proj[i][j],
                    solved[(i, j)]
                );
            }
        }
    }

    #[test]
    fn uce_touches_only_proj() {
        let net = ScoreNet::init(2, 4, 6, &[8], 4, 9);
        let spec = uce_spec(
            &net,
            Concept::base(0, 4).unwrap(),
            None,
            base_concepts(4).into_iter().skip(1).collect(),
            0.0,
        );
        let out = inhibit_uce(&net, &spec).unwrap();
        assert_eq!(out.layers, net.layers);
        assert_ne!(out.proj, net.proj);
        assert!(out.meta.inhibition.is_some());
    }
}
