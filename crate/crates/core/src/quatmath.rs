//! Scalar-first quaternion algebra.
//!
//! Attitudes map body-frame vectors into the inertial frame through
//! `q ⊗ [0, v] ⊗ q*`. Storage order is always `[q0, q1, q2, q3]`.

use std::ops::{Mul, Neg};

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `‖q‖ − 1` accepted by the checked rotation helpers.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub q0: f64,
    pub qv: Vec3,
}

impl Quaternion {
    pub const fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Self {
            q0,
            qv: Vector3::new(q1, q2, q3),
        }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    /// Pure quaternion `[0, v]`.
    pub fn pure(v: Vec3) -> Self {
        Self { q0: 0.0, qv: v }
    }

    pub fn from_scalar_vector(q0: f64, qv: Vec3) -> Self {
        Self { q0, qv }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            q0: c,
            qv: axis.normalize() * s,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q0, self.qv.x, self.qv.y, self.qv.z]
    }

    pub fn to_vector4(self) -> Vector4<f64> {
        Vector4::new(self.q0, self.qv.x, self.qv.y, self.qv.z)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn norm_squared(&self) -> f64 {
        self.q0 * self.q0 + self.qv.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self {
            q0: self.q0 / n,
            qv: self.qv / n,
        }
    }

    pub fn conj(&self) -> Self {
        qconj(*self)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.q0 * other.q0 + self.qv.dot(&other.qv)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            q0: self.q0 * k,
            qv: self.qv * k,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            q0: self.q0 + other.q0,
            qv: self.qv + other.qv,
        }
    }

    /// Short-rotation representative (`q0 ≥ 0`).
    pub fn canonical(&self) -> Self {
        if self.q0 < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.q0.is_finite() && self.qv.iter().all(|x| x.is_finite())
    }

    /// Body-to-inertial rotation without the unit-norm check.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v + 2 q0 (qv × v) + 2 qv × (qv × v), valid for unit q
        let t = self.qv.cross(v) * 2.0;
        v + t * self.q0 + self.qv.cross(&t)
    }

    /// Inertial-to-body rotation without the unit-norm check.
    pub fn rotate_inverse(&self, v: &Vec3) -> Vec3 {
        self.conj().rotate(v)
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
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

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        qmul(self, rhs)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Self {
            q0: -self.q0,
            qv: -self.qv,
        }
    }
}

/// Hamilton product `[a0 b0 − ā·b̄, a0 b̄ + b0 ā + ā × b̄]`.
pub fn qmul(a: Quaternion, b: Quaternion) -> Quaternion {
    Quaternion {
        q0: a.q0 * b.q0 - a.qv.dot(&b.qv),
        qv: b.qv * a.q0 + a.qv * b.q0 + a.qv.cross(&b.qv),
    }
}

pub fn qconj(a: Quaternion) -> Quaternion {
    Quaternion {
        q0: a.q0,
        qv: -a.qv,
    }
}

/// Vector part of `q ⊗ [0, v] ⊗ q*`.
pub fn rotate_to_inertial(q: &Quaternion, v_body: &Vec3) -> Result<Vec3> {
    check_unit(q)?;
    Ok((*q * Quaternion::pure(*v_body) * q.conj()).qv)
}

/// Vector part of `q* ⊗ [0, v] ⊗ q`.
pub fn rotate_to_body(q: &Quaternion, v_inertial: &Vec3) -> Result<Vec3> {
    check_unit(q)?;
    Ok((q.conj() * Quaternion::pure(*v_inertial) * *q).qv)
}

fn check_unit(q: &Quaternion) -> Result<()> {
    if !q.is_finite() || !q.is_unit(UNIT_TOLERANCE) {
        return Err(Error::InvalidAttitude { norm: q.norm() });
    }
    Ok(())
}

/// `q_d* ⊗ q`, canonicalized to a non-negative scalar part.
pub fn error_quaternion(q: &Quaternion, q_d: &Quaternion) -> Quaternion {
    (q_d.conj() * *q).canonical()
}

/// Attitude error angle `2 arccos(q_e0)` in radians.
pub fn error_angle(q_e: &Quaternion) -> f64 {
    2.0 * q_e.q0.clamp(-1.0, 1.0).acos()
}

/// Angle between two vectors, robust near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
