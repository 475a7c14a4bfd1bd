//! Dynamics-feasible target trajectories, tracking reward and return.
//!
//! Each joint is reduced to its twist angle about the skeleton's per-joint
//! axis. The filter clamps that angle to the joint's bounds and tracks the
//! clamped trajectory under velocity and acceleration limits, then writes the
//! angle back into the quaternion keeping the swing part. Joints that already
//! satisfy every limit are left untouched, so a feasible clip passes through
//! unchanged.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::fk;
use crate::motion::MotionClip;
use crate::quat::Quaternion;
use crate::skeleton::Skeleton;

/// Slack, in radians (or meters for the ground), when checking limits.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_SIGMA_JPOS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointBounds {
    pub lo: f64,
    pub hi: f64,
}

/// Joint position bounds by joint name plus global rate limits.
///
/// Joints without an entry are unbounded in position but still rate limited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLimits {
    /// rad/s
    pub v_max: f64,
    /// rad/s^2
    pub a_max: f64,
    /// meters; foot end effectors stay at or above this height
    pub ground_height: f64,
    #[serde(flatten)]
    pub joints: BTreeMap<String, JointBounds>,
}

impl DynamicsLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) || !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "v_max and a_max must be positive, got {} and {}",
                self.v_max, self.a_max
            )));
        }
        if !self.ground_height.is_finite() {
            return Err(Error::InvalidConfig("ground_height must be finite".into()));
        }
        for (name, b) in &self.joints {
            if !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                return Err(Error::InvalidConfig(format!("joint '{name}': need lo < hi, got [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }

    /// Every bounded joint must exist in `skeleton`.
    pub fn check_skeleton(&self, skeleton: &Skeleton) -> Result<()> {
        self.validate().map_err(|e| Error::LimitsMismatch(e.to_string()))?;
        for name in self.joints.keys() {
            if skeleton.joint_index(name).is_none() {
                return Err(Error::LimitsMismatch(format!("no joint '{name}' in skeleton '{}'", skeleton.name())));
            }
        }
        Ok(())
    }

    fn bounds_for(&self, skeleton: &Skeleton, j: usize) -> (f64, f64) {
        self.joints
            .get(&skeleton.joints()[j].name)
            .map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lo, b.hi))
    }
}

/// Foot end effectors: those resting below the root.
pub fn foot_end_effectors(skeleton: &Skeleton) -> Vec<usize> {
    let rest = skeleton.rest_positions();
    let root_z = rest[skeleton.root()][2];
    skeleton.end_effectors().iter().copied().filter(|&e| rest[e][2] < root_z).collect()
}

/// Twist angles of joint `j` over time, unwrapped to be continuous.
pub fn joint_angles(skeleton: &Skeleton, clip: &MotionClip, j: usize) -> Vec<f64> {
    let axis = skeleton.axis(j);
    let mut out: Vec<f64> = Vec::with_capacity(clip.frames());
    for t in 0..clip.frames() {
        let mut a = clip.rotation(t, j).twist_angle(axis);
        if let Some(&prev) = out.last() {
            a += (2.0 * PI) * ((prev - a) / (2.0 * PI)).round();
        }
        out.push(a);
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    count: usize,
    max: f64,
}

impl Tally {
    fn add(&mut self, excess: f64) {
        if excess > FEASIBILITY_TOLERANCE {
            self.count += 1;
            self.max = self.max.max(excess);
        }
    }
}

/// Counts limit violations of one angle trajectory, with excesses in angle units
/// (radians, radians per frame, radians per frame squared).
fn angle_tallies(theta: &[f64], lo: f64, hi: f64, dv: f64, da: f64) -> [Tally; 3] {
    let mut out = [Tally::default(); 3];
    for &a in theta {
        out[0].add((lo - a).max(a - hi));
    }
    for w in theta.windows(2) {
        out[1].add((w[1] - w[0]).abs() - dv);
    }
    for w in theta.windows(3) {
        out[2].add((w[2] - 2.0 * w[1] + w[0]).abs() - da);
    }
    out
}

/// Largest velocity toward a wall `room` away that can still be braked to
/// zero, decelerating by at most `da` per frame, without crossing the wall.
///
/// Braking from `v` covers `v + (v - da) + ... + (v - m da)` with
/// `m = ceil(v / da) - 1`; solving for `v` gives the closed form below.
pub fn max_stoppable_velocity(room: f64, da: f64) -> f64 {
    if room <= 0.0 {
        return 0.0;
    }
    if room.is_infinite() {
        return f64::INFINITY;
    }
    // (m + 1) v - da m (m + 1) / 2 = room, valid when m da < v <= (m + 1) da
    let guess = ((2.0 * room / da).sqrt() - 1.0).max(0.0).floor() as u64;
    for m in guess.saturating_sub(2)..guess + 4 {
        let mf = m as f64;
        let v = (room + da * mf * (mf + 1.0) / 2.0) / (mf + 1.0);
        if v > mf * da && v <= (mf + 1.0) * da {
            return v;
        }
    }
    // boundary rounding; fall back to the direct search
    let mut m = 0u64;
    loop {
        let mf = m as f64;
        let v = (room + da * mf * (mf + 1.0) / 2.0) / (mf + 1.0);
        if v <= (mf + 1.0) * da * (1.0 + 1e-12) {
            return v;
        }
        m += 1;
    }
}

/// Tracks `target` (already clamped) under per-frame velocity `dv` and
/// acceleration `da` limits while staying within `[lo, hi]`.
fn track(target: &[f64], lo: f64, hi: f64, dv: f64, da: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(target.len());
    let Some(&first) = target.first() else { return out };
    out.push(first);
    let mut prev_v: Option<f64> = None;
    for &goal in &target[1..] {
        let p = *out.last().unwrap();
        let e = goal - p;
        let want = e.signum() * max_stoppable_velocity(e.abs(), da).min(e.abs());
        let mut vmin = (-dv).max(-max_stoppable_velocity(p - lo, da));
        let mut vmax = dv.min(max_stoppable_velocity(hi - p, da));
        if let Some(v) = prev_v {
            vmin = vmin.max(v - da);
            vmax = vmax.min(v + da);
        }
        let v = if vmin <= vmax { want.clamp(vmin, vmax) } else { 0.5 * (vmin + vmax) };
        out.push((p + v).clamp(lo, hi));
        prev_v = Some(v);
    }
    out
}

/// Projects a clip onto the limits. See the module docs.
pub fn dynamics_filter(skeleton: &Skeleton, clip: &MotionClip, limits: &DynamicsLimits) -> Result<MotionClip> {
    clip.check_skeleton(skeleton)?;
    limits.check_skeleton(skeleton)?;
    let fps = clip.fps();
    let (dv, da) = (limits.v_max / fps, limits.a_max / (fps * fps));
    let mut rotations = clip.rotations().to_vec();
    for j in 0..skeleton.joint_count() {
        let theta = joint_angles(skeleton, clip, j);
        let (lo, hi) = limits.bounds_for(skeleton, j);
        if angle_tallies(&theta, lo, hi, dv, da).iter().all(|t| t.count == 0) {
            continue;
        }
        let clamped: Vec<f64> = theta.iter().map(|a| a.clamp(lo, hi)).collect();
        let filtered = track(&clamped, lo, hi, dv, da);
        let axis = skeleton.axis(j);
        for (t, (&new, &old)) in filtered.iter().zip(&theta).enumerate() {
            if new != old {
                rotations[t][j] = rotations[t][j].with_twist_angle(axis, new);
            }
        }
    }
    let mut out = MotionClip::from_parts_unchecked(
        clip.skeleton().to_string(),
        fps,
        clip.root_translation().to_vec(),
        rotations,
    );
    let feet = foot_end_effectors(skeleton);
    if !feet.is_empty() {
        let pos = fk(skeleton, &out)?;
        let mut root = out.root_translation().to_vec();
        let mut moved = false;
        for (t, frame) in pos.positions.iter().enumerate() {
            let lowest = feet.iter().map(|&f| frame[f][2]).fold(f64::INFINITY, f64::min);
            if lowest < limits.ground_height - FEASIBILITY_TOLERANCE {
                root[t][2] += limits.ground_height - lowest;
                moved = true;
            }
        }
        if moved {
            out = out.with_root_translation(root)?;
        }
    }
    Ok(out)
}

/// Violation counts and worst excesses per limit family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub position_violations: usize,
    /// radians beyond the bound
    pub max_position_excess: f64,
    pub velocity_violations: usize,
    /// rad/s above v_max
    pub max_velocity_excess: f64,
    pub acceleration_violations: usize,
    /// rad/s^2 above a_max
    pub max_acceleration_excess: f64,
    pub ground_violations: usize,
    /// meters below ground
    pub max_ground_penetration: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.position_violations + self.velocity_violations + self.acceleration_violations + self.ground_violations
            == 0
    }

    pub fn merge(&mut self, o: &FeasibilityReport) {
        self.position_violations += o.position_violations;
        self.velocity_violations += o.velocity_violations;
        self.acceleration_violations += o.acceleration_violations;
        self.ground_violations += o.ground_violations;
        self.max_position_excess = self.max_position_excess.max(o.max_position_excess);
        self.max_velocity_excess = self.max_velocity_excess.max(o.max_velocity_excess);
        self.max_acceleration_excess = self.max_acceleration_excess.max(o.max_acceleration_excess);
        self.max_ground_penetration = self.max_ground_penetration.max(o.max_ground_penetration);
    }
}

pub fn feasibility_report(skeleton: &Skeleton, clip: &MotionClip, limits: &DynamicsLimits) -> Result<FeasibilityReport> {
    clip.check_skeleton(skeleton)?;
    limits.check_skeleton(skeleton)?;
    let fps = clip.fps();
    let (dv, da) = (limits.v_max / fps, limits.a_max / (fps * fps));
    let mut r = FeasibilityReport::default();
    for j in 0..skeleton.joint_count() {
        let (lo, hi) = limits.bounds_for(skeleton, j);
        let [p, v, a] = angle_tallies(&joint_angles(skeleton, clip, j), lo, hi, dv, da);
        r.merge(&FeasibilityReport {
            position_violations: p.count,
            max_position_excess: p.max,
            velocity_violations: v.count,
            max_velocity_excess: v.max * fps,
            acceleration_violations: a.count,
            max_acceleration_excess: a.max * fps * fps,
            ..Default::default()
        });
    }
    let feet = foot_end_effectors(skeleton);
    if !feet.is_empty() {
        for frame in fk(skeleton, clip)?.positions {
            let lowest = feet.iter().map(|&f| frame[f][2]).fold(f64::INFINITY, f64::min);
            let depth = limits.ground_height - lowest;
            if depth > FEASIBILITY_TOLERANCE {
                r.ground_violations += 1;
                r.max_ground_penetration = r.max_ground_penetration.max(depth);
            }
        }
    }
    Ok(r)
}

/// `exp(-|q - q_hat|^2 / sigma)`.
pub fn tracking_reward(q: &[f64], q_hat: &[f64], sigma_jpos: f64) -> Result<f64> {
    if !(sigma_jpos > 0.0) {
        return Err(Error::NonPositiveSigma(sigma_jpos));
    }
    if q.len() != q_hat.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} joint values", q.len(), q_hat.len())));
    }
    let d2: f64 = q.iter().zip(q_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / sigma_jpos).exp())
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidGamma(gamma));
    }
    // Horner from the back keeps gamma = 0 exact
    Ok(rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc))
}

/// Rotation of `angle` about `axis` for every frame of a single-joint channel.
pub fn angles_to_rotations(axis: [f64; 3], angles: &[f64]) -> Vec<Quaternion> {
    angles.iter().map(|&a| Quaternion::from_axis_angle(axis, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{self, TOY_ROBOT, TOY_ROBOT_LIMITS};
    use crate::skeleton::tests::{chain, joint};
    use crate::skeleton::SkeletonDesc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_joint() -> Skeleton {
        Skeleton::new(SkeletonDesc {
            name: "one".into(),
            joints: vec![joint("root", None, [0.0; 3])],
            end_effectors: vec![0],
            neighbor_distance: 1,
            key_joints: None,
            pooling: None,
        })
        .unwrap()
    }

    fn clip_from_angles(s: &Skeleton, angles: &[Vec<f64>], fps: f64) -> MotionClip {
        let frames = angles[0].len();
        let rotations = (0..frames)
            .map(|t| (0..s.joint_count()).map(|j| Quaternion::from_axis_angle(s.axis(j), angles[j][t])).collect())
            .collect();
        MotionClip::new(s.name(), fps, vec![[0.0; 3]; frames], rotations).unwrap()
    }

    fn limits(bounds: &[(&str, f64, f64)], v_max: f64, a_max: f64) -> DynamicsLimits {
        DynamicsLimits {
            v_max,
            a_max,
            ground_height: -100.0,
            joints: bounds.iter().map(|&(n, lo, hi)| (n.to_string(), JointBounds { lo, hi })).collect(),
        }
    }

    #[test]
    fn step_is_rate_limited_like_scalar_oracle() {
        let s = single_joint();
        let x: Vec<f64> = (0..20).map(|t| if t == 0 { 0.0 } else { 1.0 }).collect();
        let clip = clip_from_angles(&s, &[x.clone()], 30.0);
        let out = dynamics_filter(&s, &clip, &limits(&[("root", -3.0, 3.0)], 3.0, 1e6)).unwrap();
        let got = joint_angles(&s, &out, 0);
        let mut y = 0.0f64;
        for (t, &xt) in x.iter().enumerate() {
            if t > 0 {
                y += (xt - y).clamp(-0.1, 0.1);
            }
            assert!((got[t] - y).abs() < 1e-9, "frame {t}: {} vs {y}", got[t]);
        }
        assert!((got[1] - got[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn feasible_clip_passes_bit_exactly() {
        let s = chain("c", 3);
        let angles: Vec<Vec<f64>> =
            (0..3).map(|j| (0..40).map(|t| 0.3 * (t as f64 * 0.05 + j as f64).sin()).collect()).collect();
        let clip = clip_from_angles(&s, &angles, 30.0);
        let l = limits(&[("j0", -1.0, 1.0), ("j2", -0.5, 0.5)], 10.0, 100.0);
        assert!(feasibility_report(&s, &clip, &l).unwrap().is_feasible());
        assert_eq!(dynamics_filter(&s, &clip, &l).unwrap(), clip);
    }

    #[test]
    fn filter_output_is_feasible_and_idempotent() {
        let s = io::skeleton_from_json(TOY_ROBOT).unwrap();
        let l = io::limits_from_json(TOY_ROBOT_LIMITS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..20 {
            let frames = 64;
            let angles: Vec<Vec<f64>> = (0..s.joint_count())
                .map(|_| {
                    let (amp, f, ph) = (rng.random_range(0.0..2.5), rng.random_range(0.2..3.0), rng.random_range(0.0..6.0));
                    (0..frames).map(|t| amp * (2.0 * PI * f * t as f64 / 30.0 + ph).sin()).collect()
                })
                .collect();
            let mut clip = clip_from_angles(&s, &angles, 30.0);
            clip = clip.with_root_translation(vec![[0.0, 0.0, rng.random_range(0.3..0.7)]; frames]).unwrap();
            let out = dynamics_filter(&s, &clip, &l).unwrap();
            let r = feasibility_report(&s, &out, &l).unwrap();
            assert!(r.is_feasible(), "case {case}: {r:?}");
            assert_eq!(dynamics_filter(&s, &out, &l).unwrap(), out, "case {case}");
        }
    }

    #[test]
    fn clamp_stage_is_contractive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            let c = |v: &[f64]| v.iter().map(|a| a.clamp(-1.0, 1.5)).collect::<Vec<_>>();
            assert!(dist(&c(&x), &c(&y)) <= dist(&x, &y));
        }
    }

    #[test]
    fn stoppable_velocity_brakes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (room, da) = (rng.random_range(0.0..5.0), rng.random_range(0.001..0.5));
            let v = max_stoppable_velocity(room, da);
            let travel = |mut v: f64| {
                let mut s = 0.0;
                while v > 0.0 {
                    s += v;
                    v -= da;
                }
                s
            };
            assert!((travel(v) - room).abs() < 1e-9 * (1.0 + room), "room {room} da {da} v {v}");
            assert!(travel(v * (1.0 + 1e-6) + 1e-9) > room);
        }
    }

    #[test]
    fn tracker_respects_bounds_under_random_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (lo, hi) = (-rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            let (dv, da) = (rng.random_range(0.01..0.3), rng.random_range(0.001..0.1));
            let target: Vec<f64> = (0..50).map(|_| rng.random_range(lo..hi)).collect();
            let out = track(&target, lo, hi, dv, da);
            assert!(angle_tallies(&out, lo, hi, dv, da).iter().all(|t| t.count == 0));
        }
    }

    #[test]
    fn single_out_of_bound_frame_counts_once() {
        let s = single_joint();
        let mut x = vec![0.0; 10];
        x[4] = 0.55;
        let clip = clip_from_angles(&s, &[x], 30.0);
        let r = feasibility_report(&s, &clip, &limits(&[("root", -0.5, 0.5)], 100.0, 1e5)).unwrap();
        assert_eq!(r.position_violations, 1);
        assert!((r.max_position_excess - 0.05).abs() < 1e-9);
        assert_eq!((r.velocity_violations, r.acceleration_violations, r.ground_violations), (0, 0, 0));
        let rest = MotionClip::rest(&s, 10, 30.0, [0.0; 3]);
        assert!(feasibility_report(&s, &rest, &limits(&[], 1.0, 1.0)).unwrap().is_feasible());
    }

    #[test]
    fn ground_is_enforced_on_feet() {
        let s = io::skeleton_from_json(TOY_ROBOT).unwrap();
        let mut l = io::limits_from_json(TOY_ROBOT_LIMITS).unwrap();
        l.ground_height = 0.0;
        let clip = MotionClip::rest(&s, 5, 30.0, [0.0, 0.0, 0.2]);
        assert_eq!(feasibility_report(&s, &clip, &l).unwrap().ground_violations, 5);
        let out = dynamics_filter(&s, &clip, &l).unwrap();
        assert!((out.root_translation()[0][2] - 0.63).abs() < 1e-12);
        assert_eq!(out.rotations(), clip.rotations());
    }

    #[test]
    fn limits_mismatch_is_reported() {
        let s = chain("c", 2);
        let clip = MotionClip::rest(&s, 4, 30.0, [0.0; 3]);
        let l = limits(&[("nope", -1.0, 1.0)], 1.0, 1.0);
        assert!(matches!(dynamics_filter(&s, &clip, &l), Err(Error::LimitsMismatch(_))));
        let bad = limits(&[("j0", 1.0, -1.0)], 1.0, 1.0);
        assert!(matches!(dynamics_filter(&s, &clip, &bad), Err(Error::LimitsMismatch(_))));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(tracking_reward(&[0.3, -1.0], &[0.3, -1.0], 0.5).unwrap(), 1.0);
        let r = tracking_reward(&[0.5, 0.0], &[0.0, 0.0], 0.25).unwrap();
        assert!((r - (-1.0f64).exp()).abs() < 1e-15 && (r - 0.367879).abs() < 1e-6);
        assert!(matches!(tracking_reward(&[0.0], &[0.0], 0.0), Err(Error::NonPositiveSigma(_))));
        assert!(tracking_reward(&[0.0], &[0.0, 1.0], 1.0).is_err());
        // monotone in distance
        let mut last = 1.0;
        for k in 1..20 {
            let r = tracking_reward(&[k as f64 * 0.1], &[0.0], 0.5).unwrap();
            assert!(r < last && r > 0.0);
            last = r;
        }
    }

    #[test]
    fn return_examples() {
        assert_eq!(discounted_return(&[0.7, 0.2, 0.9], 0.0).unwrap(), 0.7);
        assert_eq!(discounted_return(&[1.0; 3], 0.5).unwrap(), 1.75);
        assert!(matches!(discounted_return(&[1.0], 1.0), Err(Error::InvalidGamma(_))));
        assert!(matches!(discounted_return(&[1.0], -0.1), Err(Error::InvalidGamma(_))));
    }

    #[test]
    fn angles_round_trip_through_rotations() {
        let axis = [0.0, 0.6, 0.8];
        let q = angles_to_rotations(axis, &[0.3, -1.2]);
        assert!((q[0].twist_angle(axis) - 0.3).abs() < 1e-12);
        assert!((q[1].twist_angle(axis) + 1.2).abs() < 1e-12);
    }
}
