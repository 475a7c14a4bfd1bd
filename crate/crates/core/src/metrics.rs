//! Smoothness, keypoint tracking and latent similarity metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk, JointPositions};
use crate::motion::MotionClip;
use crate::net::{RetargetModel, Side};
use crate::quat::{norm3, sub3, Vec3};
use crate::training::PairedDataset;
use crate::windowing::{retarget_long, DEFAULT_OVERLAP};

/// Default root-noise levels in meters.
pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.0, 0.01, 0.02, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothnessReport {
    /// rad/s^2
    pub mean_acc: f64,
    /// rad/s^3
    pub mean_jerk: f64,
}

/// Angular speed from geodesic distance between consecutive frames, then
/// acceleration and jerk as successive absolute differences.
pub fn mean_angular_acc_jerk(clip: &MotionClip) -> Result<SmoothnessReport> {
    let frames = clip.frames();
    if frames < 4 {
        return Err(Error::TooShort { needed: 4, found: frames });
    }
    let fps = clip.fps();
    let (mut acc_sum, mut jerk_sum) = (0.0, 0.0);
    for j in 0..clip.joint_count() {
        let omega: Vec<f64> = (0..frames - 1).map(|t| clip.rotation(t, j).geodesic_angle(clip.rotation(t + 1, j)) * fps).collect();
        let acc: Vec<f64> = omega.windows(2).map(|w| (w[1] - w[0]).abs() * fps).collect();
        acc_sum += acc.iter().sum::<f64>();
        jerk_sum += acc.windows(2).map(|w| (w[1] - w[0]).abs() * fps).sum::<f64>();
    }
    let j = clip.joint_count() as f64;
    Ok(SmoothnessReport {
        mean_acc: acc_sum / (j * (frames - 2) as f64),
        mean_jerk: jerk_sum / (j * (frames - 3) as f64),
    })
}

/// Per-clip smoothness averaged over clips.
pub fn mean_smoothness(clips: &[MotionClip]) -> Result<SmoothnessReport> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reports = clips.iter().map(mean_angular_acc_jerk).collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    Ok(SmoothnessReport {
        mean_acc: reports.iter().map(|r| r.mean_acc).sum::<f64>() / n,
        mean_jerk: reports.iter().map(|r| r.mean_jerk).sum::<f64>() / n,
    })
}

/// Mean geodesic angle between corresponding joint rotations of two clips.
pub fn mean_geodesic_error(a: &MotionClip, b: &MotionClip) -> Result<f64> {
    if a.frames() != b.frames() || a.joint_count() != b.joint_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} x {} clip vs {} x {}",
            a.frames(),
            a.joint_count(),
            b.frames(),
            b.joint_count()
        )));
    }
    let sum: f64 = a
        .rotations()
        .iter()
        .zip(b.rotations())
        .flat_map(|(fa, fb)| fa.iter().zip(fb).map(|(p, q)| p.geodesic_angle(*q)))
        .sum();
    Ok(sum / (a.frames() * a.joint_count()) as f64)
}

fn check_keys(p: &JointPositions, keys: &[usize]) -> Result<()> {
    if keys.is_empty() {
        return Err(Error::ShapeMismatch("no key joints".into()));
    }
    if let Some(&k) = keys.iter().find(|&&k| k >= p.joint_count()) {
        return Err(Error::ShapeMismatch(format!("key joint {k} out of range for {} joints", p.joint_count())));
    }
    Ok(())
}

/// Mean Euclidean distance between corresponding key-joint positions.
pub fn akte(test: &JointPositions, reference: &JointPositions, key_joints: &[usize]) -> Result<f64> {
    if test.frames() != reference.frames() || test.joint_count() != reference.joint_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} x {} positions vs {} x {}",
            test.frames(),
            test.joint_count(),
            reference.frames(),
            reference.joint_count()
        )));
    }
    check_keys(test, key_joints)?;
    if test.frames() == 0 {
        return Err(Error::TooShort { needed: 1, found: 0 });
    }
    let mut sum = 0.0;
    for (a, b) in test.positions.iter().zip(&reference.positions) {
        for &k in key_joints {
            sum += norm3(sub3(a[k], b[k]));
        }
    }
    Ok(sum / (test.frames() * key_joints.len()) as f64)
}

/// Mean norm of the second central difference of key-joint positions, times fps^2.
pub fn akja(positions: &JointPositions, key_joints: &[usize], fps: f64) -> Result<f64> {
    if positions.frames() < 3 {
        return Err(Error::TooShort { needed: 3, found: positions.frames() });
    }
    check_keys(positions, key_joints)?;
    let p = &positions.positions;
    let mut sum = 0.0;
    for t in 1..p.len() - 1 {
        for &k in key_joints {
            let d: Vec3 = std::array::from_fn(|c| p[t + 1][k][c] - 2.0 * p[t][k][c] + p[t - 1][k][c]);
            sum += norm3(d);
        }
    }
    Ok(sum * fps * fps / ((p.len() - 2) * key_joints.len()) as f64)
}

/// Pearson correlation coefficient. `ZeroVariance(0)` or `(1)` names the
/// constant input.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::TooShort { needed: 2, found: x.len() });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(0));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(1));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `m[i][j]` = correlation of the flattened A-side latent of pair `i` with
/// the B-side latent of pair `j`. `ZeroVariance(k)` names a constant latent
/// (A latents are `0..N`, B latents `N..2N`).
pub fn latent_correlation_matrix(model: &RetargetModel, pairs: &PairedDataset) -> Result<Vec<Vec<f64>>> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, found: n });
    }
    let za = pairs.pairs().par_iter().map(|(a, _)| model.encode(Side::A, a)).collect::<Result<Vec<_>>>()?;
    let zb = pairs.pairs().par_iter().map(|(_, b)| model.encode(Side::B, b)).collect::<Result<Vec<_>>>()?;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    pearson(za[i].data(), zb[j].data()).map_err(|e| match e {
                        Error::ZeroVariance(0) => Error::ZeroVariance(i),
                        Error::ZeroVariance(_) => Error::ZeroVariance(n + j),
                        other => other,
                    })
                })
                .collect()
        })
        .collect()
}

/// Mean of the diagonal and of the off-diagonal entries.
pub fn diagonal_contrast(m: &[Vec<f64>]) -> (f64, f64) {
    let n = m.len();
    let diag = (0..n).map(|i| m[i][i]).sum::<f64>() / n as f64;
    let off = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j]).sum::<f64>()
        / (n * (n - 1)) as f64;
    (diag, off)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSweepPoint {
    /// meters
    pub noise_std: f64,
    /// meters
    pub akte: f64,
    /// m/s^2, retargeted output
    pub akja: f64,
    /// m/s^2, root trajectory of the noisy source clip
    pub akja_source_root: f64,
}

/// Adds `sigma * eps` to a clip's root translation.
pub fn with_root_noise(clip: &MotionClip, eps: &[Vec3], sigma: f64) -> Result<MotionClip> {
    let root = clip.root_translation().iter().zip(eps).map(|(r, e)| std::array::from_fn(|c| r[c] + sigma * e[c])).collect();
    clip.with_root_translation(root)
}

/// Injects seeded Gaussian noise into the root of every clip at each level,
/// retargets clean and noisy clips and compares the key-joint trajectories on
/// skeleton B. The same standard-normal draw is scaled for every level.
/// Clips of any length are accepted; long ones are windowed.
pub fn noise_sweep(model: &RetargetModel, clips: &[MotionClip], levels: &[f64], seed: u64) -> Result<Vec<NoiseSweepPoint>> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if levels.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(format!("noise levels must be >= 0 and ascending, got {levels:?}")));
    }
    let sb = model.skeleton(Side::B);
    let keys = sb.key_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<Vec<Vec3>> = clips
        .iter()
        .map(|c| (0..c.frames()).map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng))).collect())
        .collect();
    let clean: Vec<JointPositions> =
        clips.par_iter().map(|c| fk(sb, &retarget_long(model, c, DEFAULT_OVERLAP, 1)?)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(levels.len());
    for &sigma in levels {
        let per_clip = clips
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let noisy = with_root_noise(c, &eps[i], sigma)?;
                let pos = fk(sb, &retarget_long(model, &noisy, DEFAULT_OVERLAP, 1)?)?;
                let source_root = JointPositions { positions: noisy.root_translation().iter().map(|r| vec![*r]).collect() };
                Ok((akte(&pos, &clean[i], keys)?, akja(&pos, keys, c.fps())?, akja(&source_root, &[0], c.fps())?))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_clip.len() as f64;
        out.push(NoiseSweepPoint {
            noise_std: sigma,
            akte: per_clip.iter().map(|p| p.0).sum::<f64>() / n,
            akja: per_clip.iter().map(|p| p.1).sum::<f64>() / n,
            akja_source_root: per_clip.iter().map(|p| p.2).sum::<f64>() / n,
        });
    }
    Ok(out)
}

pub const SWEEP_CSV_HEADER: &str = "noise_std,akte,akja,akja_source_root";

pub fn sweep_to_csv(points: &[NoiseSweepPoint]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.noise_std, p.akte, p.akja, p.akja_source_root));
    }
    s
}
