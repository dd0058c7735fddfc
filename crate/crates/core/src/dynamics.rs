//! Rigid-body rotational kinematics and dynamics with fixed-step RK4
//! propagation under zero-order-hold torque.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quatmath::{Quaternion, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub q: Quaternion,
    /// Body rate, rad/s.
    pub omega: Vec3,
    /// Time, s.
    pub t: f64,
}

impl RigidBodyState {
    pub fn new(q: Quaternion, omega: Vec3) -> Self {
        Self { q, omega, t: 0.0 }
    }

    pub fn at_rest(q: Quaternion) -> Self {
        Self::new(q, Vec3::zeros())
    }
}

/// Symmetric positive-definite inertia tensor with its cached inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InertiaMatrix {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl InertiaMatrix {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInertia("non-finite entry".into()));
        }
        let asym = (matrix - matrix.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::InvalidInertia(format!(
                "not symmetric (max |I - Iᵀ| = {asym:e})"
            )));
        }
        let chol = matrix
            .cholesky()
            .ok_or_else(|| Error::InvalidInertia("not positive definite".into()))?;
        let inverse = chol.inverse();
        Ok(Self { matrix, inverse })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    pub fn diagonal(d: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vec3::new(d[0], d[1], d[2])))
    }

    /// The 60/50/70 kg·m² spacecraft used throughout the evaluation.
    pub fn reference_spacecraft() -> Self {
        Self::from_rows([[60.0, 5.0, 1.0], [5.0, 50.0, 2.0], [1.0, 2.0, 70.0]])
            .expect("reference inertia is valid")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl Serialize for InertiaMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for InertiaMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Self::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub dq: Quaternion,
    pub domega: Vec3,
}

/// Body angular acceleration `I⁻¹(−ω×(Iω) + τ)`.
pub fn angular_acceleration(omega: &Vec3, tau: &Vec3, inertia: &InertiaMatrix) -> Vec3 {
    let h = inertia.matrix * omega;
    inertia.inverse * (tau - omega.cross(&h))
}

pub fn state_derivative(
    state: &RigidBodyState,
    tau: &Vec3,
    inertia: &InertiaMatrix,
) -> StateDerivative {
    StateDerivative {
        dq: (state.q * Quaternion::pure(state.omega)).scale(0.5),
        domega: angular_acceleration(&state.omega, tau, inertia),
    }
}

fn advance(state: &RigidBodyState, d: &StateDerivative, h: f64) -> RigidBodyState {
    RigidBodyState {
        q: state.q.add(&d.dq.scale(h)),
        omega: state.omega + d.domega * h,
        t: state.t + h,
    }
}

/// One classical RK4 step with `tau` held over `dt`, without renormalizing
/// the attitude.
pub fn rk4_step(
    state: &RigidBodyState,
    tau: &Vec3,
    inertia: &InertiaMatrix,
    dt: f64,
) -> RigidBodyState {
    let k1 = state_derivative(state, tau, inertia);
    let k2 = state_derivative(&advance(state, &k1, 0.5 * dt), tau, inertia);
    let k3 = state_derivative(&advance(state, &k2, 0.5 * dt), tau, inertia);
    let k4 = state_derivative(&advance(state, &k3, dt), tau, inertia);

    let dq = k1
        .dq
        .add(&k2.dq.scale(2.0))
        .add(&k3.dq.scale(2.0))
        .add(&k4.dq)
        .scale(dt / 6.0);
    let domega = (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega) * (dt / 6.0);
    RigidBodyState {
        q: state.q.add(&dq),
        omega: state.omega + domega,
        t: state.t + dt,
    }
}

/// Zero-order-hold step: RK4 followed by attitude renormalization.
pub fn step_zoh(
    state: &RigidBodyState,
    tau: &Vec3,
    inertia: &InertiaMatrix,
    dt: f64,
) -> RigidBodyState {
    debug_assert!(dt > 0.0);
    let mut next = rk4_step(state, tau, inertia, dt);
    next.q = next.q.normalize();
    next
}

pub fn kinetic_energy(state: &RigidBodyState, inertia: &InertiaMatrix) -> f64 {
    0.5 * state.omega.dot(&(inertia.matrix * state.omega))
}

/// Angular momentum expressed in the inertial frame.
pub fn inertial_momentum(state: &RigidBodyState, inertia: &InertiaMatrix) -> Vec3 {
    state.q.rotate(&(inertia.matrix * state.omega))
}
