//! On-disk formats. Every file carries `"format_version": 1`; other versions
//! are rejected before the body is parsed.
//!
//! Writers produce output that the readers accept and that re-serializes to
//! the same bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsLimits;
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::quat::{Quaternion, Vec3};
use crate::skeleton::{Joint, Skeleton, SkeletonDesc};
use crate::training::{PairedDataset, Provenance};

pub const FORMAT_VERSION: u64 = 1;

pub const TOY_HUMAN: &str = include_str!("../../../configs/toy_human.json");
pub const TOY_ROBOT: &str = include_str!("../../../configs/toy_robot.json");
pub const G1_LIKE: &str = include_str!("../../../configs/g1_like.json");
pub const TOY_ROBOT_LIMITS: &str = include_str!("../../../configs/toy_robot_limits.json");

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

fn check_version(text: &str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    match probe.format_version {
        Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(Error::UnsupportedVersion(v)),
        None => Err(Error::Format("missing format_version".into())),
    }
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    check_version(text)?;
    Ok(serde_json::from_str(text)?)
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}

fn compact<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("in-memory serialization");
    s.push('\n');
    s
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Prefixes errors with the file they came from.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::UnsupportedVersion(_) => e,
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

// ---------------------------------------------------------------- skeleton

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub name: String,
    pub parent: i64,
    pub offset: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub format_version: u64,
    pub name: String,
    pub joints: Vec<JointFile>,
    pub end_effectors: Vec<usize>,
    pub neighbor_distance: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_joints: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Vec<Vec<usize>>>,
}

impl SkeletonFile {
    pub fn from_skeleton(s: &Skeleton) -> Self {
        let d = s.desc();
        Self {
            format_version: FORMAT_VERSION,
            name: d.name,
            joints: d
                .joints
                .into_iter()
                .map(|j| JointFile {
                    name: j.name,
                    parent: j.parent.map_or(-1, |p| p as i64),
                    offset: j.offset,
                    axis: Some(j.axis),
                })
                .collect(),
            end_effectors: d.end_effectors,
            neighbor_distance: d.neighbor_distance,
            key_joints: d.key_joints,
            pooling: d.pooling,
        }
    }

    pub fn into_skeleton(self) -> Result<Skeleton> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        let n = self.joints.len();
        let joints = self
            .joints
            .into_iter()
            .map(|j| {
                let parent = match j.parent {
                    -1 => None,
                    p if p >= 0 && (p as usize) < n => Some(p as usize),
                    p => return Err(Error::InvalidSkeleton(format!("joint '{}' has invalid parent {p}", j.name))),
                };
                Ok(Joint { name: j.name, parent, offset: j.offset, axis: j.axis.unwrap_or([1.0, 0.0, 0.0]) })
            })
            .collect::<Result<Vec<_>>>()?;
        Skeleton::new(SkeletonDesc {
            name: self.name,
            joints,
            end_effectors: self.end_effectors,
            neighbor_distance: self.neighbor_distance,
            key_joints: self.key_joints,
            pooling: self.pooling,
        })
    }
}

pub fn skeleton_from_json(text: &str) -> Result<Skeleton> {
    parse::<SkeletonFile>(text)?.into_skeleton()
}

pub fn skeleton_to_json(s: &Skeleton) -> String {
    pretty(&SkeletonFile::from_skeleton(s))
}

pub fn read_skeleton(path: &Path) -> Result<Skeleton> {
    in_file(path, read_text(path).and_then(|t| skeleton_from_json(&t)))
}

pub fn write_skeleton(path: &Path, s: &Skeleton) -> Result<()> {
    Ok(fs::write(path, skeleton_to_json(s))?)
}

// ------------------------------------------------------------------ motion

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub format_version: u64,
    pub skeleton: String,
    pub fps: f64,
    pub root_translation: Vec<Vec3>,
    pub rotations: Vec<Vec<Quaternion>>,
}

impl MotionFile {
    pub fn from_clip(c: &MotionClip) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            skeleton: c.skeleton().to_string(),
            fps: c.fps(),
            root_translation: c.root_translation().to_vec(),
            rotations: c.rotations().to_vec(),
        }
    }

    pub fn into_clip(self) -> Result<MotionClip> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        MotionClip::new(self.skeleton, self.fps, self.root_translation, self.rotations)
    }
}

pub fn motion_from_json(text: &str) -> Result<MotionClip> {
    parse::<MotionFile>(text)?.into_clip()
}

pub fn motion_to_json(c: &MotionClip) -> String {
    compact(&MotionFile::from_clip(c))
}

pub fn read_motion(path: &Path) -> Result<MotionClip> {
    in_file(path, read_text(path).and_then(|t| motion_from_json(&t)))
}

pub fn write_motion(path: &Path, c: &MotionClip) -> Result<()> {
    Ok(fs::write(path, motion_to_json(c))?)
}

// ----------------------------------------------------------------- dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFile {
    pub a: MotionFile,
    pub b: MotionFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub format_version: u64,
    pub provenance: Provenance,
    pub skeleton_a: String,
    pub skeleton_b: String,
    pub pairs: Vec<PairFile>,
}

pub fn dataset_from_json(text: &str) -> Result<PairedDataset> {
    let f: DatasetFile = parse(text)?;
    let pairs = f
        .pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let wrap = |side: &str, e: Error| Error::Format(format!("pair {i}, clip {side}: {e}"));
            Ok((p.a.into_clip().map_err(|e| wrap("a", e))?, p.b.into_clip().map_err(|e| wrap("b", e))?))
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(f.provenance, f.skeleton_a, f.skeleton_b, pairs)
}

pub fn dataset_to_json(d: &PairedDataset) -> String {
    compact(&DatasetFile {
        format_version: FORMAT_VERSION,
        provenance: d.provenance(),
        skeleton_a: d.skeleton_a().to_string(),
        skeleton_b: d.skeleton_b().to_string(),
        pairs: d
            .pairs()
            .iter()
            .map(|(a, b)| PairFile { a: MotionFile::from_clip(a), b: MotionFile::from_clip(b) })
            .collect(),
    })
}

pub fn read_dataset(path: &Path) -> Result<PairedDataset> {
    in_file(path, read_text(path).and_then(|t| dataset_from_json(&t)))
}

pub fn write_dataset(path: &Path, d: &PairedDataset) -> Result<()> {
    Ok(fs::write(path, dataset_to_json(d))?)
}

// ------------------------------------------------------------------ limits

#[derive(Serialize, Deserialize)]
struct LimitsFile {
    format_version: u64,
    #[serde(flatten)]
    limits: DynamicsLimits,
}

pub fn limits_from_json(text: &str) -> Result<DynamicsLimits> {
    let f: LimitsFile = parse(text)?;
    f.limits.validate()?;
    Ok(f.limits)
}

pub fn limits_to_json(l: &DynamicsLimits) -> String {
    pretty(&LimitsFile { format_version: FORMAT_VERSION, limits: l.clone() })
}

pub fn read_limits(path: &Path) -> Result<DynamicsLimits> {
    in_file(path, read_text(path).and_then(|t| limits_from_json(&t)))
}

pub fn write_limits(path: &Path, l: &DynamicsLimits) -> Result<()> {
    Ok(fs::write(path, limits_to_json(l))?)
}

// ----------------------------------------------------------- model sidecar

/// Architecture and provenance stored next to a parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub format_version: u64,
    pub window: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub static_channels: usize,
    pub fps: f64,
    #[serde(rename = "skeleton_A")]
    pub skeleton_a: String,
    #[serde(rename = "skeleton_B")]
    pub skeleton_b: String,
    #[serde(rename = "pooling_A")]
    pub pooling_a: Vec<Vec<usize>>,
    #[serde(rename = "pooling_B")]
    pub pooling_b: Vec<Vec<usize>>,
    /// Full skeleton definitions so a model file is self-contained.
    pub skeletons: [SkeletonFile; 2],
    pub stage: String,
    pub trained_steps: u64,
}

pub fn sidecar_from_json(text: &str) -> Result<ModelSidecar> {
    parse(text)
}

pub fn sidecar_to_json(s: &ModelSidecar) -> String {
    pretty(s)
}
