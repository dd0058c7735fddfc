//! Pointing keep-out cone geometry.
//!
//! The cone constraint `r̄_F^I · n̄_F − cos θ_F < 0` is written as the
//! quaternion quadratic form `qᵀ M_F q < 0` so that the safety filter can
//! differentiate it along the attitude kinematics.

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::quatmath::{angle_between, Quaternion, Vec3};

/// Threshold on `‖n̄_F^B − r̄_F^B‖` below which the relative avoidance
/// direction is undefined.
pub const DEGENERATE_DIRECTION: f64 = 1e-9;

/// A single cone around an inertial avoid direction that a body-fixed
/// boresight must stay out of. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct KeepOutZone {
    n_inertial: Vec3,
    r_body: Vec3,
    half_angle: f64,
    mf: Matrix4<f64>,
}

impl KeepOutZone {
    /// Builds a zone. Direction vectors are normalized; the half-angle must
    /// lie strictly between 0 and π/2.
    pub fn new(n_inertial: Vec3, r_body: Vec3, half_angle: f64) -> Result<Self> {
        let unit = |v: Vec3, name: &str| -> Result<Vec3> {
            let n = v.norm();
            if !n.is_finite() || n < 1e-12 {
                return Err(Error::InvalidConfig(format!("{name} must be a nonzero finite vector")));
            }
            Ok(v / n)
        };
        let n_inertial = unit(n_inertial, "avoid direction")?;
        let r_body = unit(r_body, "boresight")?;
        if !(half_angle > 0.0 && half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidConfig(format!(
                "half-angle {half_angle} rad outside (0, π/2)"
            )));
        }
        Ok(Self {
            mf: build_mf(&n_inertial, &r_body, half_angle),
            n_inertial,
            r_body,
            half_angle,
        })
    }

    pub fn n_inertial(&self) -> &Vec3 {
        &self.n_inertial
    }

    pub fn r_body(&self) -> &Vec3 {
        &self.r_body
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn mf(&self) -> &Matrix4<f64> {
        &self.mf
    }

    /// Boresight expressed in the inertial frame.
    pub fn boresight_inertial(&self, q: &Quaternion) -> Vec3 {
        q.rotate(&self.r_body)
    }
}

/// The 4×4 quadratic-form matrix of the cone constraint.
pub fn build_mf(n_inertial: &Vec3, r_body: &Vec3, half_angle: f64) -> Matrix4<f64> {
    let c = half_angle.cos();
    let rn = r_body.dot(n_inertial);
    let cross = r_body.cross(n_inertial);
    let a3 = r_body * n_inertial.transpose() + n_inertial * r_body.transpose()
        - nalgebra::Matrix3::identity() * (rn + c);

    let mut m = Matrix4::zeros();
    m[(0, 0)] = rn - c;
    for i in 0..3 {
        m[(0, i + 1)] = cross[i];
        m[(i + 1, 0)] = cross[i];
        for j in 0..3 {
            m[(i + 1, j + 1)] = a3[(i, j)];
        }
    }
    m
}

/// `qᵀ M_F q`; negative iff the boresight is outside the cone.
pub fn kappa(q: &Quaternion, zone: &KeepOutZone) -> f64 {
    let v = q.to_vector4();
    v.dot(&(zone.mf * v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeAngles {
    /// Angle between boresight and avoid direction, rad.
    pub theta: f64,
    /// `theta − θ_F`, rad; positive outside the cone.
    pub margin: f64,
}

pub fn theta_and_margin(q: &Quaternion, zone: &KeepOutZone) -> ConeAngles {
    let r = zone.boresight_inertial(q);
    let theta = r.dot(&zone.n_inertial).clamp(-1.0, 1.0).acos();
    ConeAngles {
        theta,
        margin: theta - zone.half_angle,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeDirection {
    pub direction: Vec3,
    /// Set when the boresight coincides with the avoid direction and the
    /// direction is reported as zero.
    pub degenerate: bool,
}

/// Unit vector from the boresight toward the avoid direction, both in the
/// body frame.
pub fn delta_n_body(q: &Quaternion, zone: &KeepOutZone) -> RelativeDirection {
    let n_body = q.rotate_inverse(&zone.n_inertial);
    relative_direction(&n_body, &zone.r_body)
}

pub fn relative_direction(n_body: &Vec3, r_body: &Vec3) -> RelativeDirection {
    let d = n_body - r_body;
    let norm = d.norm();
    if norm < DEGENERATE_DIRECTION {
        RelativeDirection {
            direction: Vec3::zeros(),
            degenerate: true,
        }
    } else {
        RelativeDirection {
            direction: d / norm,
            degenerate: false,
        }
    }
}

/// Great-circle angle between the boresight and the avoid direction,
/// accurate near 0 and π (used by the scenario sampler).
pub fn boresight_angle(q: &Quaternion, zone: &KeepOutZone) -> f64 {
    angle_between(&zone.boresight_inertial(q), &zone.n_inertial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn scenario_zone() -> KeepOutZone {
        KeepOutZone::new(
            Vec3::new(0.703, 0.263, 0.661),
            Vec3::x(),
            25f64.to_radians(),
        )
        .unwrap()
    }

    fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quaternion {
        loop {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() > 1e-3 && q.norm() <= 1.0 {
                return q.normalize();
            }
        }
    }

    /// Quaternion taking body `r` onto inertial `target`.
    fn align(r: &Vec3, target: &Vec3) -> Quaternion {
        let axis = r.cross(target);
        if axis.norm() < 1e-12 {
            return if r.dot(target) > 0.0 {
                Quaternion::identity()
            } else {
                let perp = if r.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                Quaternion::from_axis_angle(&r.cross(&perp), PI)
            };
        }
        Quaternion::from_axis_angle(&axis, angle_between(r, target))
    }

    #[test]
    fn top_left_entry() {
        let m = build_mf(&Vec3::x(), &Vec3::x(), 25f64.to_radians());
        assert_abs_diff_eq!(m[(0, 0)], 0.09369221296335006, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)], 0.09369, epsilon = 1e-5);

        let zone = scenario_zone();
        // normalizing the tabulated avoid vector shifts this by ~1.5e-4
        assert_abs_diff_eq!(zone.mf()[(0, 0)], -0.20327, epsilon = 5e-4);
        let expected = zone.n_inertial().x - 25f64.to_radians().cos();
        assert_abs_diff_eq!(zone.mf()[(0, 0)], expected, epsilon = 1e-15);
        assert_eq!(zone.mf(), &zone.mf().transpose());
    }

    #[test]
    fn kappa_examples() {
        let zone = scenario_zone();
        assert_abs_diff_eq!(
            kappa(&Quaternion::identity(), &zone),
            zone.mf()[(0, 0)],
            epsilon = 1e-15
        );
        let q = align(zone.r_body(), zone.n_inertial());
        assert_abs_diff_eq!(
            kappa(&q, &zone),
            1.0 - 25f64.to_radians().cos(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cone_angles_examples() {
        let zone = scenario_zone();
        let a = theta_and_margin(&Quaternion::identity(), &zone);
        assert_abs_diff_eq!(a.theta, 0.79127, epsilon = 5e-4);
        assert_abs_diff_eq!(a.margin, 0.35494, epsilon = 5e-4);
        assert_abs_diff_eq!(a.theta, zone.n_inertial().x.acos(), epsilon = 1e-15);

        // boundary: rotate the boresight exactly onto the cone edge
        let axis = zone.n_inertial().cross(&Vec3::z()).normalize();
        let edge = Quaternion::from_axis_angle(&axis, zone.half_angle()).rotate(zone.n_inertial());
        let q = align(zone.r_body(), &edge);
        let a = theta_and_margin(&q, &zone);
        assert_abs_diff_eq!(a.margin, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(kappa(&q, &zone), 0.0, epsilon = 1e-10);

        let q = align(zone.r_body(), &-zone.n_inertial());
        assert_abs_diff_eq!(theta_and_margin(&q, &zone).theta, PI, epsilon = 1e-7);
    }

    #[test]
    fn relative_direction_examples() {
        let d = relative_direction(&Vec3::y(), &Vec3::x());
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(d.direction, Vec3::new(-s, s, 0.0), epsilon = 1e-15);
        assert!(!d.degenerate);
        let d = relative_direction(&Vec3::x(), &Vec3::x());
        assert!(d.degenerate);
        assert_eq!(d.direction, Vec3::zeros());

        let zone = scenario_zone();
        let q = align(zone.r_body(), zone.n_inertial());
        assert!(delta_n_body(&q, &zone).degenerate);
    }

    #[test]
    fn invalid_zones_are_rejected() {
        assert!(KeepOutZone::new(Vec3::zeros(), Vec3::x(), 0.3).is_err());
        assert!(KeepOutZone::new(Vec3::x(), Vec3::x(), 0.0).is_err());
        assert!(KeepOutZone::new(Vec3::x(), Vec3::x(), PI / 2.0).is_err());
        assert!(KeepOutZone::new(Vec3::x(), Vec3::new(f64::NAN, 0.0, 0.0), 0.3).is_err());
    }

    #[test]
    fn quadratic_form_matches_dot_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let zone = KeepOutZone::new(
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                rng.random_range(0.1..1.4),
            )
            .unwrap();
            for _ in 0..500 {
                let q = random_unit_quat(&mut rng);
                let r_i = crate::quatmath::rotate_to_inertial(&q, zone.r_body()).unwrap();
                let direct = r_i.dot(zone.n_inertial()) - zone.half_angle().cos();
                let k = kappa(&q, &zone);
                assert!((k - direct).abs() <= 1e-10);
                assert_eq!(k, kappa(&-q, &zone));
                assert!(k.abs() <= 2.0);
                let m = theta_and_margin(&q, &zone).margin;
                if k.abs() > 1e-12 {
                    assert_eq!(k < 0.0, m > 0.0);
                }
                let d = delta_n_body(&q, &zone);
                if !d.degenerate {
                    assert!((d.direction.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
