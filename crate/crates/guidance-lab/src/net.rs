//! Trainable epsilon-prediction network: an MLP over (x, time features,
//! projected concept embedding).
//!
//! The concept embedding enters only through the linear `proj` block, so the
//! closed-form projection edit has a well-defined target, and a zero
//! embedding reproduces the unconditional branch exactly (classifier-free
//! conditioning with shared weights).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::mixture::NoiseLevel;
use crate::sampler::EpsModel;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Sinusoidal encoding of the noise level (alpha_bar), size = 2 * freqs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFeatures {
    pub freqs: Vec<f64>,
}

impl TimeFeatures {
    pub fn with_size(size: usize) -> Self {
        assert!(size % 2 == 0, "time feature size must be even");
        let freqs = (0..size / 2)
            .map(|i| std::f64::consts::PI * (1 << i) as f64)
            .collect();
        TimeFeatures { freqs }
    }

    pub fn size(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn encode(&self, alpha_bar: f64, out: &mut Vec<f64>) {
        for &f in &self.freqs {
            out.push((f * alpha_bar).sin());
            out.push((f * alpha_bar).cos());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major weights: w[out][in].
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        // scaled uniform, fan-in
        let bound = (1.0 / inputs as f64).sqrt();
        let w = (0..outputs)
            .map(|_| (0..inputs).map(|_| rng.random_range(-bound..bound)).collect())
            .collect();
        Layer {
            w,
            b: vec![0.0; outputs],
        }
    }

    fn outputs(&self) -> usize {
        self.b.len()
    }

    fn inputs(&self) -> usize {
        self.w.first().map(|r| r.len()).unwrap_or(0)
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.w.iter().zip(&self.b) {
            out.push(b + crate::vecmath::dot(row, input));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetMeta {
    pub world_hash: String,
    pub seed: u64,
    pub steps: u64,
    /// Inhibition provenance, if this checkpoint was edited or fine-tuned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inhibition: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    pub dim: usize,
    pub concept_dim: usize,
    /// Concept projection, concept_dim rows by proj_width columns; the
    /// projected input of concept e is `sum_k e[k] * proj[k]`.
    pub proj: Vec<Vec<f64>>,
    /// Hidden layers with tanh activations followed by a final linear layer.
    pub layers: Vec<Layer>,
    pub time: TimeFeatures,
    pub meta: ScoreNetMeta,
}

impl ScoreNet {
    pub fn init(
        dim: usize,
        concept_dim: usize,
        proj_width: usize,
        hidden: &[usize],
        time_size: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let time = TimeFeatures::with_size(time_size);
        let bound = (1.0 / concept_dim as f64).sqrt();
        let proj = (0..concept_dim)
            .map(|_| (0..proj_width).map(|_| rng.random_range(-bound..bound)).collect())
            .collect();
        let mut layers = Vec::new();
        let mut width = dim + time.size() + proj_width;
        for &h in hidden {
            layers.push(Layer::init(width, h, &mut rng));
            width = h;
        }
        layers.push(Layer::init(width, dim, &mut rng));
        ScoreNet {
            dim,
            concept_dim,
            proj,
            layers,
            time,
            meta: ScoreNetMeta {
                seed,
                ..Default::default()
            },
        }
    }

    /// The architecture used throughout the experiments.
    pub fn default_arch(concept_dim: usize, seed: u64) -> Self {
        ScoreNet::init(2, concept_dim, 16, &[128, 128], 8, seed)
    }

    pub fn proj_width(&self) -> usize {
        self.proj.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn input_width(&self) -> usize {
        self.dim + self.time.size() + self.proj_width()
    }

    /// Checks that all layer shapes chain from the input to the output.
    pub fn validate_shapes(&self) -> Result<()> {
        if self.proj.len() != self.concept_dim {
            return Err(Error::ShapeMismatch(format!(
                "proj has {} rows, expected {}",
                self.proj.len(),
                self.concept_dim
            )));
        }
        let m = self.proj_width();
        if self.proj.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("ragged proj rows".into()));
        }
        let mut width = self.input_width();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.inputs() != width || layer.w.len() != layer.b.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs, got {}",
                    layer.inputs(),
                    width
                )));
            }
            if layer.w.iter().any(|r| r.len() != width) {
                return Err(Error::ShapeMismatch(format!("ragged rows in layer {i}")));
            }
            width = layer.outputs();
        }
        if width != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "output width {width} does not match dim {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Projected concept input: zeros for the empty concept.
    fn project(&self, concept: Option<&Concept>) -> Result<Vec<f64>> {
        let m = self.proj_width();
        let mut p = vec![0.0; m];
        if let Some(c) = concept {
            if c.len() != self.concept_dim {
                return Err(Error::ShapeMismatch(format!(
                    "concept length {} does not match concept_dim {}",
                    c.len(),
                    self.concept_dim
                )));
            }
            for (k, &w) in c.embedding.iter().enumerate() {
                if w != 0.0 {
                    crate::vecmath::add_scaled(&mut p, &self.proj[k], w);
                }
            }
        }
        Ok(p)
    }

    pub fn assemble_input(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coords, expected {}",
                x.len(),
                self.dim
            )));
        }
        let mut input = Vec::with_capacity(self.input_width());
        input.extend_from_slice(x);
        self.time.encode(level.alpha_bar, &mut input);
        input.extend(self.project(concept)?);
        Ok(input)
    }

    /// Deterministic MLP evaluation.
    pub fn forward(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
        let input = self.assemble_input(x, level, concept)?;
        let mut cur = input;
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass retaining all activations, for backpropagation.
    /// Returns (activations per layer including the input, output).
    pub(crate) fn forward_cached(
        &self,
        input: Vec<f64>,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(cur.clone());
            std::mem::swap(&mut cur, &mut next);
        }
        (acts, cur)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = self.to_json();
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        let wrapper = CheckpointFile {
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        serde_json::to_string(&wrapper).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let wrapper: CheckpointFile =
            serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if wrapper.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                wrapper.version
            )));
        }
        wrapper.net.validate_shapes()?;
        Ok(wrapper.net)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    #[serde(flatten)]
    net: ScoreNet,
}

impl EpsModel for ScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn concept_dim(&self) -> usize {
        self.concept_dim
    }

    fn eps(&self, x: &[f64], level: &NoiseLevel, concept: Option<&Concept>) -> Result<Vec<f64>> {
        self.forward(x, level, concept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_deterministic() {
        let net = ScoreNet::default_arch(6, 3);
        let level = NoiseLevel::new(5, 0.7).unwrap();
        let c = Concept::base(1, 6).unwrap();
        let a = net.forward(&[0.5, -0.2], &level, Some(&c)).unwrap();
        let b = net.forward(&[0.5, -0.2], &level, Some(&c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_concept_equals_none() {
        let net = ScoreNet::default_arch(6, 3);
        let level = NoiseLevel::new(5, 0.7).unwrap();
        let empty = Concept::empty(6);
        let a = net.forward(&[0.5, -0.2], &level, Some(&empty)).unwrap();
        let b = net.forward(&[0.5, -0.2], &level, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let net = ScoreNet::default_arch(6, 3);
        let level = NoiseLevel::new(5, 0.7).unwrap();
        assert!(net.forward(&[0.5], &level, None).is_err());
        let short = Concept::empty(4);
        assert!(net.forward(&[0.5, 1.0], &level, Some(&short)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = ScoreNet::default_arch(6, 99);
        let json = net.to_json();
        let back = ScoreNet::from_json(&json).unwrap();
        assert_eq!(net, back);
        assert_eq!(json, back.to_json());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let mut net = ScoreNet::default_arch(6, 1);
        net.layers[0].w[0].pop();
        assert!(net.validate_shapes().is_err());
        let json = net.to_json();
        assert!(ScoreNet::from_json(&json).is_err());
    }
}
