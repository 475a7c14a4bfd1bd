//! Motion clips: per-frame root translation plus local joint rotations.

use crate::error::{Error, Result};
use crate::quat::{Quaternion, Vec3};
use crate::skeleton::Skeleton;

/// Norm tolerance for stored rotations.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Default network window length in frames.
pub const DEFAULT_WINDOW: usize = 64;
/// Frame rate assumed by the shipped configurations.
pub const DEFAULT_FPS: f64 = 30.0;
/// Overlap between consecutive windows when splitting long clips.
pub const WINDOW_OVERLAP: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    skeleton: String,
    fps: f64,
    root_translation: Vec<Vec3>,
    rotations: Vec<Vec<Quaternion>>,
}

impl MotionClip {
    /// Validates and builds a clip. Rotations are indexed `[frame][joint]`.
    pub fn new(
        skeleton: impl Into<String>,
        fps: f64,
        root_translation: Vec<Vec3>,
        rotations: Vec<Vec<Quaternion>>,
    ) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::InvalidMotion(format!("fps must be positive, got {fps}")));
        }
        let frames = rotations.len();
        if frames == 0 {
            return Err(Error::InvalidMotion("clip has no frames".into()));
        }
        if root_translation.len() != frames {
            return Err(Error::InvalidMotion(format!(
                "root_translation has {} frames, rotations have {frames}",
                root_translation.len()
            )));
        }
        let joints = rotations[0].len();
        if joints == 0 {
            return Err(Error::InvalidMotion("clip has no joints".into()));
        }
        for (t, (frame, root)) in rotations.iter().zip(&root_translation).enumerate() {
            if frame.len() != joints {
                return Err(Error::InvalidMotion(format!("frame {t} has {} joints, expected {joints}", frame.len())));
            }
            if root.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMotion(format!("frame {t}: non-finite root translation")));
            }
            for (j, q) in frame.iter().enumerate() {
                let n = q.norm();
                if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::InvalidMotion(format!("frame {t}, joint {j}: quaternion norm {n} is not unit")));
                }
                if !q.is_canonical() {
                    return Err(Error::InvalidMotion(format!(
                        "frame {t}, joint {j}: quaternion is not hemisphere-canonical"
                    )));
                }
            }
        }
        Ok(Self { skeleton: skeleton.into(), fps, root_translation, rotations })
    }

    /// All-identity clip with the root held at `root`.
    pub fn rest(skeleton: &Skeleton, frames: usize, fps: f64, root: Vec3) -> Self {
        Self {
            skeleton: skeleton.name().to_string(),
            fps,
            root_translation: vec![root; frames],
            rotations: vec![vec![Quaternion::IDENTITY; skeleton.joint_count()]; frames],
        }
    }

    pub fn skeleton(&self) -> &str {
        &self.skeleton
    }
    pub fn fps(&self) -> f64 {
        self.fps
    }
    pub fn frames(&self) -> usize {
        self.rotations.len()
    }
    pub fn joint_count(&self) -> usize {
        self.rotations[0].len()
    }
    pub fn root_translation(&self) -> &[Vec3] {
        &self.root_translation
    }
    pub fn rotations(&self) -> &[Vec<Quaternion>] {
        &self.rotations
    }
    pub fn rotation(&self, t: usize, j: usize) -> Quaternion {
        self.rotations[t][j]
    }

    /// Replaces the root translation track, keeping rotations.
    pub fn with_root_translation(&self, root_translation: Vec<Vec3>) -> Result<Self> {
        Self::new(self.skeleton.clone(), self.fps, root_translation, self.rotations.clone())
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            root_translation: self.root_translation[start..start + len].to_vec(),
            rotations: self.rotations[start..start + len].to_vec(),
        }
    }

    pub fn check_skeleton(&self, skeleton: &Skeleton) -> Result<()> {
        if self.skeleton != skeleton.name() {
            return Err(Error::SkeletonMismatch { expected: skeleton.name().into(), found: self.skeleton.clone() });
        }
        if self.joint_count() != skeleton.joint_count() {
            return Err(Error::InvalidMotion(format!(
                "clip has {} joints, skeleton '{}' has {}",
                self.joint_count(),
                skeleton.name(),
                skeleton.joint_count()
            )));
        }
        Ok(())
    }

    /// Builds a clip without validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        skeleton: String,
        fps: f64,
        root_translation: Vec<Vec3>,
        rotations: Vec<Vec<Quaternion>>,
    ) -> Self {
        Self { skeleton, fps, root_translation, rotations }
    }
}
