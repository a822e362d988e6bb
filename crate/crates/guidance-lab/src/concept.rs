//! Concepts as weight vectors over the world's base components.
//!
//! A concept is a dense real vector of length K (the component count of the
//! world) plus a human-readable label. Base concepts are one-hot, the empty
//! concept is all zeros, and semantic +/- is plain vector arithmetic, which
//! keeps conditional-guidance composition exactly linear by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of a combination or guidance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub label: String,
    pub embedding: Vec<f64>,
}

impl Concept {
    /// The empty concept: all-zero embedding over `count` components.
    pub fn empty(count: usize) -> Self {
        Concept {
            label: String::new(),
            embedding: vec![0.0; count],
        }
    }

    /// One-hot base concept for component `index`.
    pub fn base(index: usize, count: usize) -> Result<Self> {
        if index >= count {
            return Err(Error::IndexOutOfRange { index, count });
        }
        let mut embedding = vec![0.0; count];
        embedding[index] = 1.0;
        Ok(Concept {
            label: format!("c{index}"),
            embedding,
        })
    }

    pub fn new(label: impl Into<String>, embedding: Vec<f64>) -> Self {
        Concept {
            label: label.into(),
            embedding,
        }
    }

    pub fn len(&self) -> usize {
        self.embedding.len()
    }

    pub fn is_empty_concept(&self) -> bool {
        self.embedding.iter().all(|&w| w == 0.0)
    }

    /// `self + sign * other`, with labels concatenated.
    pub fn combine(&self, other: &Concept, sign: Sign) -> Result<Concept> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let embedding = self
            .embedding
            .iter()
            .zip(&other.embedding)
            .map(|(a, b)| a + sign.factor() * b)
            .collect();
        let label = match (self.label.is_empty(), other.label.is_empty()) {
            (_, true) => self.label.clone(),
            (true, false) => match sign {
                Sign::Plus => other.label.clone(),
                Sign::Minus => format!("-{}", other.label),
            },
            (false, false) => {
                let op = match sign {
                    Sign::Plus => '+',
                    Sign::Minus => '-',
                };
                format!("{}{}{}", self.label, op, other.label)
            }
        };
        Ok(Concept { label, embedding })
    }

    /// Euclidean distance between embeddings.
    pub fn distance(&self, other: &Concept) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let d = self
            .embedding
            .iter()
            .zip(&other.embedding)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(d)
    }

    /// Scalar multiple of the concept (used for detour ladders).
    pub fn scaled(&self, factor: f64) -> Concept {
        let label = if self.label.is_empty() || factor == 1.0 {
            self.label.clone()
        } else {
            format!("{factor}*{}", self.label)
        };
        Concept {
            label,
            embedding: self.embedding.iter().map(|w| factor * w).collect(),
        }
    }

    /// Entrywise max(w, 0); conditional-distribution semantics ignore
    /// negative weights.
    pub fn clipped(&self) -> Vec<f64> {
        self.embedding.iter().map(|w| w.max(0.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_is_one_hot() {
        let c = Concept::base(0, 3).unwrap();
        assert_eq!(c.embedding, vec![1.0, 0.0, 0.0]);
        let c = Concept::base(2, 3).unwrap();
        assert_eq!(c.embedding, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn base_index_out_of_range() {
        assert!(matches!(
            Concept::base(3, 3),
            Err(Error::IndexOutOfRange { index: 3, count: 3 })
        ));
    }

    #[test]
    fn combine_adds_and_subtracts() {
        let a = Concept::new("a", vec![1.0, 0.0, 0.0]);
        let b = Concept::new("b", vec![0.0, 1.0, 0.0]);
        let sum = a.combine(&b, Sign::Plus).unwrap();
        assert_eq!(sum.embedding, vec![1.0, 1.0, 0.0]);
        assert_eq!(sum.label, "a+b");
        let back = sum.combine(&b, Sign::Minus).unwrap();
        assert_eq!(back.embedding, a.embedding);
    }

    #[test]
    fn combine_with_empty_is_identity() {
        let c = Concept::base(1, 4).unwrap();
        let e = Concept::empty(4);
        let out = c.combine(&e, Sign::Plus).unwrap();
        assert_eq!(out.embedding, c.embedding);
        assert_eq!(out.label, c.label);
    }

    #[test]
    fn combine_length_mismatch() {
        let a = Concept::empty(2);
        let b = Concept::empty(3);
        assert!(a.combine(&b, Sign::Plus).is_err());
    }

    #[test]
    fn distances() {
        let a = Concept::new("a", vec![1.0, 0.0]);
        assert_eq!(a.distance(&a).unwrap(), 0.0);
        let b = Concept::new("b", vec![0.0, 1.0]);
        assert!((a.distance(&b).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let c = Concept::new("c", vec![2.0, 0.0]);
        let z = Concept::empty(2);
        assert_eq!(c.distance(&z).unwrap(), 2.0);
    }

    #[test]
    fn serializes_as_label_and_embedding() {
        let c = Concept::base(1, 3).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"label":"c1","embedding":[0.0,1.0,0.0]}"#);
        let back: Concept = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
