//! Guidance-term construction for the circumvention attacks.
//!
//! Each attack reconstructs (part of) the erased concept's guidance purely
//! from inhibited-model evaluations:
//!
//! | attack | terms                            |
//! |--------|----------------------------------|
//! | A1     | +(c_t + c_d), -(c_d) per detour  |
//! | A2     | +(c_t - c_d), +(c_d) per detour  |
//! | A3     | +(c_t + c_d)                     |
//! | A4     | +(c_t - c_d)                     |
//! | A5     | +(c_t), -(c_a)                   |
//!
//! Multiple detours stack terms for stronger guidance; an empty anchor
//! reduces A5 to a single positive term.

use serde::{Deserialize, Serialize};

use crate::concept::{Concept, Sign};
use crate::error::{Error, Result};
use crate::sampler::GuidanceTerm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackKind {
    A1,
    A2,
    A3,
    A4,
    A5,
}

impl AttackKind {
    pub fn needs_detours(self) -> bool {
        !matches!(self, AttackKind::A5)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(AttackKind::A1),
            "A2" => Ok(AttackKind::A2),
            "A3" => Ok(AttackKind::A3),
            "A4" => Ok(AttackKind::A4),
            "A5" => Ok(AttackKind::A5),
            other => Err(Error::InvalidAttack(format!("unknown attack kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target: Concept,
    #[serde(default)]
    pub detours: Vec<Concept>,
    #[serde(default)]
    pub anchor: Option<Concept>,
    pub gamma: f64,
    /// Weight of the target inside combined concepts (rho in `rho*c_t + c_d`),
    /// kept at 1 unless an experiment shrinks it.
    #[serde(default = "default_target_weight")]
    pub target_weight: f64,
}

fn default_target_weight() -> f64 {
    1.0
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidAttack("gamma must be positive".into()));
        }
        if self.kind.needs_detours() {
            if self.detours.is_empty() {
                return Err(Error::InvalidAttack(format!(
                    "{:?} requires at least one detour",
                    self.kind
                )));
            }
            for d in &self.detours {
                if d.len() != self.target.len() {
                    return Err(Error::LengthMismatch {
                        left: d.len(),
                        right: self.target.len(),
                    });
                }
                if d.embedding == self.target.embedding {
                    return Err(Error::InvalidAttack(
                        "detour coincides with the target".into(),
                    ));
                }
            }
        } else if self.anchor.is_none() {
            return Err(Error::InvalidAttack("A5 requires an anchor".into()));
        }
        Ok(())
    }
}

/// Builds the guidance-term list for one attack.
pub fn build_attack(spec: &AttackSpec) -> Result<Vec<GuidanceTerm>> {
    spec.validate()?;
    let gamma = spec.gamma;
    let target = spec.target.scaled(spec.target_weight);
    let mut terms = Vec::new();
    match spec.kind {
        AttackKind::A1 => {
            for d in &spec.detours {
                terms.push(GuidanceTerm::new(Sign::Plus, gamma, target.combine(d, Sign::Plus)?));
                terms.push(GuidanceTerm::new(Sign::Minus, gamma, d.clone()));
            }
        }
        AttackKind::A2 => {
            for d in &spec.detours {
                terms.push(GuidanceTerm::new(Sign::Plus, gamma, target.combine(d, Sign::Minus)?));
                terms.push(GuidanceTerm::new(Sign::Plus, gamma, d.clone()));
            }
        }
        AttackKind::A3 => {
            for d in &spec.detours {
                terms.push(GuidanceTerm::new(Sign::Plus, gamma, target.combine(d, Sign::Plus)?));
            }
        }
        AttackKind::A4 => {
            for d in &spec.detours {
                terms.push(GuidanceTerm::new(Sign::Plus, gamma, target.combine(d, Sign::Minus)?));
            }
        }
        AttackKind::A5 => {
            let anchor = spec.anchor.as_ref().expect("validated above");
            terms.push(GuidanceTerm::new(Sign::Plus, gamma, spec.target.clone()));
            if !anchor.is_empty_concept() {
                terms.push(GuidanceTerm::new(Sign::Minus, gamma, anchor.clone()));
            }
        }
    }
    Ok(terms)
}

/// Concatenates several attacks against the same target.
pub fn stack(specs: &[AttackSpec]) -> Result<Vec<GuidanceTerm>> {
    if let Some(first) = specs.first() {
        for s in &specs[1..] {
            if s.target.embedding != first.target.embedding {
                return Err(Error::InvalidAttack(
                    "stacked attacks must share the same target".into(),
                ));
            }
        }
    }
    let mut terms = Vec::new();
    for s in specs {
        terms.extend(build_attack(s)?);
    }
    Ok(terms)
}

/// Prepends the user prompt as a positive guidance term.
pub fn with_prompt(prompt: &Concept, gamma: f64, terms: &[GuidanceTerm]) -> Vec<GuidanceTerm> {
    let mut out = Vec::with_capacity(terms.len() + 1);
    out.push(GuidanceTerm::new(Sign::Plus, gamma, prompt.clone()));
    out.extend_from_slice(terms);
    out
}

/// The detour ladder: scaled copies of one base concept, giving a controlled
/// range of distances from the target.
pub fn detour_ladder(base: &Concept, deltas: &[f64]) -> Vec<Concept> {
    deltas.iter().map(|&d| base.scaled(d)).collect()
}
