//! Experiment configuration: JSON schema, validation with field paths, and
//! the canonical config hash.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, AttackSpec};
use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::inhibit::{InhibitMethod, InhibitSpec};
use crate::mixture::MixtureSpec;
use crate::sampler::SamplerKind;
use crate::train::{FinetuneScope, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// FNV-1a, 64 bit; enough to key runs and detect config edits.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 50,
            beta_min: 1e-4,
            beta_max: 0.19,
        }
    }
}

/// Per-group generation parameters (guidance scale and sampler flavor).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeParams {
    pub gamma: f64,
    pub kind: SamplerKind,
    pub ddim_eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackEntry {
    pub name: String,
    pub spec: AttackSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InhibitionEntry {
    pub name: String,
    pub spec: InhibitSpec,
    pub gen: ModeParams,
    pub attacks: Vec<AttackEntry>,
}

/// Probe counts and the detour ladder used by the analysis stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub probes: usize,
    pub probe_seed: u64,
    /// Noise-level band for probes, as fractions of the schedule.
    pub band: (f64, f64),
    /// Base component the detour ladder scales.
    pub ladder_component: usize,
    pub ladder_deltas: Vec<f64>,
    /// Components used for the stacked-attack gain check.
    pub stack_components: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            probes: 256,
            probe_seed: 777,
            band: (0.2, 0.9),
            ladder_component: 2,
            ladder_deltas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            stack_components: vec![2, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub world: MixtureSpec,
    pub training: TrainConfig,
    /// Optional pre-trained checkpoint; skips training when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<String>,
    pub schedule: ScheduleConfig,
    pub target: Concept,
    /// Prompts used for standard inference; defaults to the target.
    pub prompts: Vec<Concept>,
    pub inhibitions: Vec<InhibitionEntry>,
    pub analysis: AnalysisConfig,
    pub samples_per_seed: usize,
    pub seeds: Vec<u64>,
    /// Posterior threshold for reproduction rates.
    pub threshold: f64,
    pub nr_percentiles: Vec<f64>,
    /// Non-target base concept whose reproduction must survive inhibition.
    pub held_out_component: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// Hash of the canonical JSON form: key order and whitespace do not
    /// matter, any semantic change does.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        fnv1a_hex(value.to_string().as_bytes())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: String| Error::Config {
            path: path.to_string(),
            message,
        };
        if self.version != CONFIG_VERSION {
            return Err(err("version", format!("unsupported version {}", self.version)));
        }
        self.world
            .validate()
            .map_err(|e| err("world", e.to_string()))?;
        let k = self.world.component_count();
        self.training
            .validate()
            .map_err(|e| err("training", e.to_string()))?;
        if self.target.len() != k {
            return Err(err("target.embedding", format!("length {} != K={k}", self.target.len())));
        }
        if self.prompts.is_empty() {
            return Err(err("prompts", "at least one prompt is required".into()));
        }
        for (i, p) in self.prompts.iter().enumerate() {
            if p.len() != k {
                return Err(err(&format!("prompts[{i}].embedding"), format!("length {} != K={k}", p.len())));
            }
        }
        if self.seeds.is_empty() {
            return Err(err("seeds", "at least one seed is required".into()));
        }
        if self.samples_per_seed < 1 {
            return Err(err("samples_per_seed", "must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(err("threshold", format!("{} outside (0, 1)", self.threshold)));
        }
        for (i, p) in self.nr_percentiles.iter().enumerate() {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(err(&format!("nr_percentiles[{i}]"), format!("{p} outside (0, 1)")));
            }
        }
        if self.held_out_component >= k {
            return Err(err("held_out_component", format!("index {} out of range", self.held_out_component)));
        }
        if self.analysis.ladder_component >= k {
            return Err(err("analysis.ladder_component", "index out of range".into()));
        }
        if self.analysis.ladder_deltas.is_empty() {
            return Err(err("analysis.ladder_deltas", "must not be empty".into()));
        }
        if self.analysis.probes == 0 {
            return Err(err("analysis.probes", "must be >= 1".into()));
        }
        for (i, entry) in self.inhibitions.iter().enumerate() {
            let base = format!("inhibitions[{i}]");
            entry
                .spec
                .validate()
                .map_err(|e| err(&format!("{base}.spec"), e.to_string()))?;
            if entry.spec.target.len() != k {
                return Err(err(&format!("{base}.spec.target"), "length mismatch".into()));
            }
            if !(entry.gen.gamma > 0.0) {
                return Err(err(&format!("{base}.gen.gamma"), "must be positive".into()));
            }
            if !(0.0..=1.0).contains(&entry.gen.ddim_eta) {
                return Err(err(&format!("{base}.gen.ddim_eta"), "outside [0, 1]".into()));
            }
            for (j, attack) in entry.attacks.iter().enumerate() {
                let apath = format!("{base}.attacks[{j}]");
                attack
                    .spec
                    .validate()
                    .map_err(|e| err(&apath, e.to_string()))?;
                if attack.spec.target.embedding != entry.spec.target.embedding {
                    return Err(err(
                        &format!("{apath}.spec.target"),
                        "attack target differs from the inhibition target".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The default experiment: six components on a ring, target component 0,
    /// anchor component 3, detour ladder on component 2.
    pub fn default_config() -> Self {
        let k = 6;
        let world = MixtureSpec::ring(k, 8.0);
        let target = Concept::base(0, k).expect("in range");
        let anchor = Concept::base(3, k).expect("in range");
        let detour = Concept::base(2, k).expect("in range");
        let preserve: Vec<Concept> = (1..k).map(|i| Concept::base(i, k).expect("in range")).collect();

        let attack =
            |kind: AttackKind, gamma: f64, detours: Vec<Concept>, anchor: Option<Concept>| AttackSpec {
                kind,
                target: target.clone(),
                detours,
                anchor,
                gamma,
                target_weight: 1.0,
            };

        let esd_gen = ModeParams {
            gamma: 7.5,
            kind: SamplerKind::Ddim,
            ddim_eta: 0.0,
        };
        let ac_gen = ModeParams {
            gamma: 6.0,
            kind: SamplerKind::Ddim,
            ddim_eta: 1.0,
        };
        let uce_gen = esd_gen.clone();

        let finetune = |steps: u64, lr: f64, seed: u64| TrainConfig {
            steps,
            batch: 64,
            lr,
            seed,
            ..TrainConfig::default()
        };

        let inhibitions = vec![
            InhibitionEntry {
                name: "esd".into(),
                spec: InhibitSpec {
                    method: InhibitMethod::Esd,
                    target: target.clone(),
                    anchor: None,
                    eta: 1.0,
                    preserve: vec![],
                    finetune: finetune(2000, 1e-3, 101),
                    ridge: 0.0,
                    scope: FinetuneScope::Full,
                },
                gen: esd_gen.clone(),
                attacks: vec![
                    AttackEntry {
                        name: "A1".into(),
                        spec: attack(AttackKind::A1, esd_gen.gamma, vec![detour.clone()], None),
                    },
                    AttackEntry {
                        name: "A3".into(),
                        spec: attack(
                            AttackKind::A3,
                            esd_gen.gamma,
                            vec![detour.scaled(0.25)],
                            None,
                        ),
                    },
                ],
            },
            InhibitionEntry {
                name: "ac100".into(),
                spec: InhibitSpec {
                    method: InhibitMethod::Ac,
                    target: target.clone(),
                    anchor: Some(anchor.clone()),
                    eta: 1.0,
                    preserve: vec![],
                    finetune: finetune(1000, 5e-4, 102),
                    ridge: 0.0,
                    scope: FinetuneScope::ProjOnly,
                },
                gen: ac_gen.clone(),
                attacks: vec![
                    AttackEntry {
                        name: "A1".into(),
                        spec: attack(AttackKind::A1, ac_gen.gamma, vec![detour.clone()], None),
                    },
                    AttackEntry {
                        name: "A3".into(),
                        spec: attack(AttackKind::A3, ac_gen.gamma, vec![detour.scaled(0.25)], None),
                    },
                    AttackEntry {
                        name: "A5".into(),
                        spec: attack(AttackKind::A5, ac_gen.gamma, vec![], Some(anchor.clone())),
                    },
                ],
            },
            InhibitionEntry {
                name: "uce".into(),
                spec: InhibitSpec {
                    method: InhibitMethod::Uce,
                    target: target.clone(),
                    anchor: Some(anchor.clone()),
                    eta: 1.0,
                    preserve,
                    finetune: finetune(0, 1e-3, 103),
                    ridge: 0.5,
                    scope: FinetuneScope::ProjOnly,
                },
                gen: uce_gen.clone(),
                attacks: vec![
                    AttackEntry {
                        name: "A1".into(),
                        spec: attack(AttackKind::A1, uce_gen.gamma, vec![detour.clone()], None),
                    },
                    AttackEntry {
                        name: "A3".into(),
                        spec: attack(AttackKind::A3, uce_gen.gamma, vec![detour.scaled(0.25)], None),
                    },
                    AttackEntry {
                        name: "A5".into(),
                        spec: attack(AttackKind::A5, uce_gen.gamma, vec![], Some(anchor.clone())),
                    },
                ],
            },
        ];

        ExperimentConfig {
            version: CONFIG_VERSION,
            world,
            training: TrainConfig {
                steps: 20_000,
                batch: 64,
                lr: 1e-3,
                seed: 1234,
                ..TrainConfig::default()
            },
            init_checkpoint: None,
            schedule: ScheduleConfig::default(),
            target,
            prompts: vec![Concept::base(0, k).expect("in range")],
            inhibitions,
            analysis: AnalysisConfig::default(),
            samples_per_seed: 64,
            seeds: vec![11, 12, 13, 14, 15],
            threshold: 0.5,
            nr_percentiles: vec![0.25, 0.5, 0.75, 0.9],
            held_out_component: 1,
            out_dir: None,
        }
    }
}
