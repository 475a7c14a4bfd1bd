use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Filtered,
}

/// Paired windows `(clip on skeleton A, clip on skeleton B)` of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    provenance: Provenance,
    skeleton_a: String,
    skeleton_b: String,
    pairs: Vec<(MotionClip, MotionClip)>,
}

impl PairedDataset {
    pub fn new(
        provenance: Provenance,
        skeleton_a: impl Into<String>,
        skeleton_b: impl Into<String>,
        pairs: Vec<(MotionClip, MotionClip)>,
    ) -> Result<Self> {
        let (skeleton_a, skeleton_b) = (skeleton_a.into(), skeleton_b.into());
        let first = pairs.first().map(|(a, b)| (a.frames(), a.joint_count(), b.joint_count()));
        for (i, (a, b)) in pairs.iter().enumerate() {
            if a.skeleton() != skeleton_a || b.skeleton() != skeleton_b {
                return Err(Error::InvalidMotion(format!(
                    "pair {i} is on ('{}', '{}'), dataset is ('{skeleton_a}', '{skeleton_b}')",
                    a.skeleton(),
                    b.skeleton()
                )));
            }
            if a.frames() != b.frames() || Some((a.frames(), a.joint_count(), b.joint_count())) != first {
                return Err(Error::LengthMismatch(format!(
                    "pair {i} has shape ({} x {}, {} x {}), expected {first:?}",
                    a.frames(),
                    a.joint_count(),
                    b.frames(),
                    b.joint_count()
                )));
            }
        }
        Ok(Self { provenance, skeleton_a, skeleton_b, pairs })
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn skeleton_a(&self) -> &str {
        &self.skeleton_a
    }
    pub fn skeleton_b(&self) -> &str {
        &self.skeleton_b
    }
    pub fn pairs(&self) -> &[(MotionClip, MotionClip)] {
        &self.pairs
    }
    pub fn len(&self) -> usize {
        self.pairs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// First `n` pairs and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.pairs.len());
        let part = |p: &[(MotionClip, MotionClip)]| Self { pairs: p.to_vec(), ..self.clone_empty() };
        (part(&self.pairs[..n]), part(&self.pairs[n..]))
    }

    fn clone_empty(&self) -> Self {
        Self {
            provenance: self.provenance,
            skeleton_a: self.skeleton_a.clone(),
            skeleton_b: self.skeleton_b.clone(),
            pairs: Vec::new(),
        }
    }

    pub fn clips_a(&self) -> Vec<MotionClip> {
        self.pairs.iter().map(|(a, _)| a.clone()).collect()
    }
    pub fn clips_b(&self) -> Vec<MotionClip> {
        self.pairs.iter().map(|(_, b)| b.clone()).collect()
    }
}
