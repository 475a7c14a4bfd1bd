//! Unit quaternions in `(w, x, y, z)` order with the Hamilton product.
//!
//! Rotations stored in motion clips are always hemisphere-canonical: `w >= 0`,
//! and when `w == 0` the first nonzero vector component is positive. `q` and
//! `-q` encode the same rotation, so canonicalization only picks a
//! representative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are rejected by [`Quaternion::normalize`].
pub const MIN_NORM: f64 = 1e-12;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    fn scaled(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Rotation of `angle` radians about `axis`. The axis does not need to be
    /// unit length but must be nonzero.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        let (s, c) = (angle * 0.5).sin_cos();
        let k = s / n;
        Self::new(c, axis[0] * k, axis[1] * k, axis[2] * k)
    }

    /// Scales to unit norm and canonicalizes the sign.
    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > MIN_NORM) {
            return Err(Error::ZeroQuaternion(n));
        }
        Ok(self.scaled(1.0 / n).canonical())
    }

    /// Sign flip into the `w >= 0` hemisphere. Does not rescale.
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            self.scaled(-1.0)
        } else {
            self
        }
    }

    pub fn is_canonical(self) -> bool {
        self.canonical() == self
    }

    /// Raw Hamilton product without renormalization.
    pub fn hamilton(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Hamilton product `self * b`, renormalized and canonicalized.
    pub fn mul(self, b: Self) -> Self {
        let p = self.hamilton(b);
        let n = p.norm();
        p.scaled(1.0 / n).canonical()
    }

    /// Applies the rotation to `v` (`q v q*`).
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = [self.x, self.y, self.z];
        let t = cross(u, v);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let ut = cross(u, t);
        [
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ]
    }

    /// Angle of the relative rotation between `self` and `other`, in `[0, pi]`.
    pub fn geodesic_angle(self, other: Self) -> f64 {
        let r = self.conjugate().hamilton(other);
        let v = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        2.0 * v.atan2(r.w.abs())
    }

    /// Rotation vector (axis * angle) of a unit quaternion.
    pub fn log(self) -> Vec3 {
        let q = self.canonical();
        let v = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if v < 1e-15 {
            return [2.0 * q.x, 2.0 * q.y, 2.0 * q.z];
        }
        let k = 2.0 * v.atan2(q.w) / v;
        [q.x * k, q.y * k, q.z * k]
    }

    /// Inverse of [`Quaternion::log`].
    pub fn exp(r: Vec3) -> Self {
        let angle = norm3(r);
        if angle < 1e-15 {
            return Self::new(1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]).normalize().unwrap_or(Self::IDENTITY);
        }
        Self::from_axis_angle(r, angle).canonical()
    }

    /// Interpolates along the shortest arc; `t = 0` gives `self`.
    pub fn slerp(self, other: Self, t: f64) -> Self {
        let other = if self.dot(other) < 0.0 { other.scaled(-1.0) } else { other };
        let rel = self.conjugate().hamilton(other).log();
        self.mul(Self::exp([rel[0] * t, rel[1] * t, rel[2] * t]))
    }

    /// Signed angle of the twist component about the unit `axis`.
    pub fn twist_angle(self, axis: Vec3) -> f64 {
        let q = self.canonical();
        let p = q.x * axis[0] + q.y * axis[1] + q.z * axis[2];
        2.0 * p.atan2(q.w)
    }

    /// Splits into `swing * twist` where `twist` rotates about `axis`.
    pub fn swing_twist(self, axis: Vec3) -> (Self, Self) {
        let p = self.x * axis[0] + self.y * axis[1] + self.z * axis[2];
        let twist = Self::new(self.w, p * axis[0], p * axis[1], p * axis[2]);
        let twist = if twist.norm() < MIN_NORM { Self::IDENTITY } else { twist.scaled(1.0 / twist.norm()) };
        let swing = self.hamilton(twist.conjugate());
        (swing, twist)
    }

    /// Replaces the twist about `axis` by a rotation of `angle`, keeping the swing.
    pub fn with_twist_angle(self, axis: Vec3, angle: f64) -> Self {
        let (swing, _) = self.swing_twist(axis);
        swing.mul(Self::from_axis_angle(axis, angle))
    }

    /// Row-major 3x3 rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Self { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
