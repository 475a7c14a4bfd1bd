//! Analytic paired motion for training and evaluation.
//!
//! Clip A drives every joint of skeleton A with a band-limited sum of
//! sinusoids about the joint's axis. Clip B copies those angles through a
//! name-based correspondence table, scaled per joint, onto skeleton B's axes.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{PairedDataset, Provenance};
use crate::error::{Error, Result};
use crate::motion::{MotionClip, DEFAULT_FPS, DEFAULT_WINDOW};
use crate::net::Hierarchy;
use crate::quat::{Quaternion, Vec3};
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub fps: f64,
    /// Peak joint angle in radians before clamping to +-pi/2.
    pub max_amplitude: f64,
    /// Peak root displacement from its rest height, meters.
    pub root_amplitude: f64,
    pub min_frequency: f64,
    pub max_frequency: f64,
    /// Angle gains by skeleton-B joint name; unlisted joints use 1.
    pub gains: Vec<(String, f64)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let gains = [("l_hip", 0.9), ("r_hip", 0.9), ("l_foot", 0.8), ("r_foot", 0.8), ("l_hand", 1.1), ("r_hand", 1.1)];
        Self {
            frames: DEFAULT_WINDOW,
            fps: DEFAULT_FPS,
            max_amplitude: 1.0,
            root_amplitude: 0.1,
            min_frequency: 0.2,
            max_frequency: 1.0,
            gains: gains.iter().map(|&(n, g)| (n.to_string(), g)).collect(),
        }
    }
}

/// Rest height of the root above the lowest foot end effector, or of the
/// lowest joint when the skeleton has no feet.
fn standing_height(s: &Skeleton) -> f64 {
    let rest = s.rest_positions();
    -rest.iter().map(|p| p[2]).fold(0.0, f64::min)
}

/// Source joint and gain for every joint of skeleton B.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub entries: Vec<(usize, f64)>,
    /// Root translation scale from A to B.
    pub root_scale: f64,
}

impl Correspondence {
    /// Matches joints by name and checks that both skeletons pool onto the
    /// same prototype tree.
    pub fn by_name(a: &Skeleton, b: &Skeleton, gains: &[(String, f64)]) -> Result<Self> {
        let ha = Hierarchy::for_skeleton(a, 2)?;
        let hb = Hierarchy::for_skeleton(b, 2)?;
        if ha.levels[2].parent != hb.levels[2].parent {
            return Err(Error::TopologyMismatch(format!(
                "'{}' and '{}' pool onto different prototype trees",
                a.name(),
                b.name()
            )));
        }
        let entries = b
            .joints()
            .iter()
            .map(|j| {
                let src = a.joint_index(&j.name).ok_or_else(|| {
                    Error::TopologyMismatch(format!("joint '{}' of '{}' has no counterpart in '{}'", j.name, b.name(), a.name()))
                })?;
                let gain = gains.iter().find(|(n, _)| *n == j.name).map_or(1.0, |&(_, g)| g);
                Ok((src, gain))
            })
            .collect::<Result<Vec<_>>>()?;
        let (ha, hb) = (standing_height(a), standing_height(b));
        let root_scale = if ha > 0.0 && hb > 0.0 { hb / ha } else { 1.0 };
        Ok(Self { entries, root_scale })
    }

    /// Ground-truth B clip for an A clip.
    pub fn map_clip(&self, a: &Skeleton, b: &Skeleton, clip: &MotionClip) -> Result<MotionClip> {
        clip.check_skeleton(a)?;
        let rotations = clip
            .rotations()
            .iter()
            .map(|frame| {
                self.entries
                    .iter()
                    .enumerate()
                    .map(|(j, &(src, gain))| {
                        let theta = frame[src].twist_angle(a.axis(src));
                        Quaternion::from_axis_angle(b.axis(j), (gain * theta).clamp(-FRAC_PI_2, FRAC_PI_2) + 0.0)
                    })
                    .collect()
            })
            .collect();
        let root = clip.root_translation().iter().map(|r| r.map(|v| v * self.root_scale)).collect();
        MotionClip::new(b.name(), clip.fps(), root, rotations)
    }
}

/// Sum of 1 to 3 sinusoids with total amplitude at most `amp`.
fn random_signal(rng: &mut ChaCha8Rng, cfg: &SynthConfig, amp: f64) -> Vec<f64> {
    let k = rng.random_range(1..=3);
    let parts: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            let a = rng.random_range(0.0..=1.0) * amp / k as f64;
            let f = rng.random_range(cfg.min_frequency..=cfg.max_frequency);
            let phase = rng.random_range(0.0..2.0 * PI);
            (a, f, phase)
        })
        .collect();
    (0..cfg.frames)
        .map(|t| {
            let time = t as f64 / cfg.fps;
            parts.iter().map(|&(a, f, p)| a * (2.0 * PI * f * time + p).sin()).sum::<f64>() + 0.0
        })
        .collect()
}

pub fn synthetic_clip(rng: &mut ChaCha8Rng, s: &Skeleton, cfg: &SynthConfig) -> Result<MotionClip> {
    let angles: Vec<Vec<f64>> = (0..s.joint_count()).map(|_| random_signal(rng, cfg, cfg.max_amplitude)).collect();
    let root_axes: Vec<Vec<f64>> = (0..3).map(|_| random_signal(rng, cfg, cfg.root_amplitude)).collect();
    let height = standing_height(s);
    let root: Vec<Vec3> = (0..cfg.frames).map(|t| [root_axes[0][t], root_axes[1][t], height + root_axes[2][t]]).collect();
    let rotations = (0..cfg.frames)
        .map(|t| {
            (0..s.joint_count())
                .map(|j| Quaternion::from_axis_angle(s.axis(j), angles[j][t].clamp(-FRAC_PI_2, FRAC_PI_2)))
                .collect()
        })
        .collect();
    MotionClip::new(s.name(), cfg.fps, root, rotations)
}

pub fn generate_synthetic_pairs(a: &Skeleton, b: &Skeleton, count: usize, seed: u64) -> Result<PairedDataset> {
    generate_synthetic_pairs_with(a, b, count, seed, &SynthConfig::default())
}

pub fn generate_synthetic_pairs_with(
    a: &Skeleton,
    b: &Skeleton,
    count: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<PairedDataset> {
    if cfg.frames == 0 || !(cfg.fps > 0.0) || !(cfg.min_frequency <= cfg.max_frequency) || cfg.max_amplitude < 0.0 {
        return Err(Error::InvalidConfig(format!("bad synthetic data configuration {cfg:?}")));
    }
    let corr = Correspondence::by_name(a, b, &cfg.gains)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..count)
        .map(|_| {
            let ca = synthetic_clip(&mut rng, a, cfg)?;
            let cb = corr.map_clip(a, b, &ca)?;
            Ok((ca, cb))
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(Provenance::Synthetic, a.name(), b.name(), pairs)
}
