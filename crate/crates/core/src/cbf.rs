//! Sampled-data control-barrier-function safety filter for the keep-out cone.
//!
//! With `κ = qᵀ M_F q` and the barrier `h = κ + κ̇|κ̇|/(2μ)`, a torque is
//! certified when the inter-sample upper-bound polynomials satisfy
//! `p_κ(T) ≤ −δ` and `p_h(T) ≤ −Δ`. The filter returns the torque closest to
//! the nominal one inside the actuator box and that certified set.
//!
//! Both polynomials depend on the torque only through `s = b·τ`, where `b`
//! is the control gain of `ψ = κ̈|_{no disturbance} = a + b·τ`. Splitting on
//! the sign of the signed-square argument `z = e + T s` gives two convex
//! programs:
//!
//! * convex branch (`z ≥ 0`): `ssq(z) = z²`, so `p_h ≤ −Δ` is a rank-one
//!   convex quadratic in `τ`, equivalent to the affine bound `z ≤ u⁺` with
//!   `u⁺` its upper root;
//! * conservative branch (`z ≤ 0`): the non-positive ssq term is dropped,
//!   strengthening `p_h ≤ −Δ` to `p_κ ≤ −Δ`.
//!
//! Each branch is then a box-plus-half-spaces projection solved exactly by
//! [`crate::qp::project`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{angular_acceleration, InertiaMatrix, RigidBodyState};
use crate::error::{Error, Result};
use crate::keepout::{kappa, KeepOutZone};
use crate::qp::{project, symmetric_box, HalfSpace, Projection};
use crate::quatmath::{Quaternion, Vec3};

/// Largest admissible barrier parameter `μ`.
pub const MU_MAX: f64 = 0.0025;

/// Which argument is fed to the signed square in `p_h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhForm {
    /// `z = κ̇·Δt + ψΔt + M₂⁺Δt + ½M₃⁺Δt²`, term for term as commonly printed.
    AsPrinted,
    /// `z = κ̇ + ψΔt + M₂⁺Δt + ½M₃⁺Δt²`, the first-order bound on `κ̇(t+Δt)`,
    /// so that `p_h → h` as `Δt → 0`.
    #[default]
    HRecovering,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyFilterParams {
    /// Controller period, s.
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(rename = "M2_plus")]
    pub m2_plus: f64,
    #[serde(rename = "M2_minus")]
    pub m2_minus: f64,
    #[serde(rename = "M3_plus")]
    pub m3_plus: f64,
    #[serde(rename = "M3_minus")]
    pub m3_minus: f64,
    pub mu: f64,
    /// Margin `δ` on `κ`.
    pub delta: f64,
    /// Margin `Δ` on `h`.
    #[serde(rename = "Delta")]
    pub h_margin: f64,
    /// Per-axis torque bound, N·m.
    pub tau_max: f64,
    pub solver_tol: f64,
    #[serde(default)]
    pub ph_form: PhForm,
}

impl Default for SafetyFilterParams {
    fn default() -> Self {
        Self {
            period: 0.1,
            m2_plus: 1.64e-5,
            m2_minus: -1.64e-5,
            m3_plus: 6.2e-4,
            m3_minus: -6.2e-4,
            mu: MU_MAX,
            delta: 3.18e-6,
            h_margin: 3.18e-6,
            tau_max: 2.0,
            solver_tol: 1e-9,
            ph_form: PhForm::HRecovering,
        }
    }
}

impl SafetyFilterParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("safety filter: {m}")));
        let all = [
            self.period,
            self.m2_plus,
            self.m2_minus,
            self.m3_plus,
            self.m3_minus,
            self.mu,
            self.delta,
            self.h_margin,
            self.tau_max,
            self.solver_tol,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return fail("non-finite parameter");
        }
        if !(self.mu > 0.0 && self.mu <= MU_MAX) {
            return fail("mu must lie in (0, 0.0025]");
        }
        if self.delta <= 0.0 || self.h_margin <= 0.0 {
            return fail("delta and Delta must be positive");
        }
        if self.period <= 0.0 || self.tau_max <= 0.0 || self.solver_tol <= 0.0 {
            return fail("T, tau_max and solver_tol must be positive");
        }
        if self.m2_minus > 0.0 || self.m2_plus < 0.0 || self.m3_minus > 0.0 || self.m3_plus < 0.0 {
            return fail("M2/M3 bounds must bracket zero");
        }
        Ok(())
    }
}

/// Signed square `λ|λ|`.
pub fn ssq(x: f64) -> f64 {
    x * x.abs()
}

/// `ψ(τ) = a + b·τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiAffine {
    pub a: f64,
    pub b: Vec3,
}

impl PsiAffine {
    pub fn eval(&self, tau: &Vec3) -> f64 {
        self.a + self.b.dot(tau)
    }
}

fn qdot(state: &RigidBodyState) -> Quaternion {
    (state.q * Quaternion::pure(state.omega)).scale(0.5)
}

/// `κ̇ = 2 qᵀ M_F q̇`.
pub fn kappa_dot(state: &RigidBodyState, zone: &KeepOutZone) -> f64 {
    let q = state.q.to_vector4();
    2.0 * q.dot(&(zone.mf() * qdot(state).to_vector4()))
}

/// Splits the disturbance-free `κ̈` into its torque-free part and its
/// linear torque gain.
pub fn psi_affine(state: &RigidBodyState, zone: &KeepOutZone, inertia: &InertiaMatrix) -> PsiAffine {
    let m = zone.mf();
    let q = state.q;
    let qd = qdot(state);
    let mq = m * q.to_vector4();

    // κ̈ = 2 q̇ᵀMq̇ + 2 qᵀM q̈,  q̈ = ½(q̇⊗ω + q⊗ω̇)
    let drift_acc = angular_acceleration(&state.omega, &Vec3::zeros(), inertia);
    let qdd_free = (qd * Quaternion::pure(state.omega))
        .add(&(q * Quaternion::pure(drift_acc)))
        .scale(0.5);
    let qd4 = qd.to_vector4();
    let a = 2.0 * qd4.dot(&(m * qd4)) + 2.0 * mq.dot(&qdd_free.to_vector4());

    // ∂/∂ω̇ᵢ of 2 qᵀM (½ q⊗ω̇) is qᵀM (q⊗eᵢ); ω̇ = ... + I⁻¹τ
    let g = Vec3::from_fn(|i, _| {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        mq.dot(&(q * Quaternion::pure(e)).to_vector4())
    });
    let b = inertia.inverse().transpose() * g;
    PsiAffine { a, b }
}

/// `h = κ + κ̇|κ̇|/(2μ)`.
pub fn h_value(state: &RigidBodyState, zone: &KeepOutZone, params: &SafetyFilterParams) -> f64 {
    kappa(&state.q, zone) + ssq(kappa_dot(state, zone)) / (2.0 * params.mu)
}

/// State-dependent quantities shared by `p_κ` and `p_h`, evaluated once per
/// control step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierTerms {
    pub kappa: f64,
    pub kappa_dot: f64,
    pub psi: PsiAffine,
}

impl BarrierTerms {
    pub fn new(state: &RigidBodyState, zone: &KeepOutZone, inertia: &InertiaMatrix) -> Self {
        Self {
            kappa: kappa(&state.q, zone),
            kappa_dot: kappa_dot(state, zone),
            psi: psi_affine(state, zone, inertia),
        }
    }

    pub fn h(&self, params: &SafetyFilterParams) -> f64 {
        self.kappa + ssq(self.kappa_dot) / (2.0 * params.mu)
    }

    /// Torque-independent part of `p_κ(dt)`.
    fn p_kappa_offset(&self, dt: f64, params: &SafetyFilterParams) -> f64 {
        self.kappa
            + self.kappa_dot * dt
            + 0.5 * self.psi.a * dt * dt
            + 0.5 * params.m2_plus * dt * dt
            + params.m3_plus * dt * dt * dt / 6.0
    }

    /// Torque-independent part of the ssq argument.
    fn ssq_offset(&self, dt: f64, params: &SafetyFilterParams) -> f64 {
        let rate = match params.ph_form {
            PhForm::AsPrinted => self.kappa_dot * dt,
            PhForm::HRecovering => self.kappa_dot,
        };
        rate + self.psi.a * dt + params.m2_plus * dt + 0.5 * params.m3_plus * dt * dt
    }

    pub fn p_kappa(&self, tau: &Vec3, dt: f64, params: &SafetyFilterParams) -> f64 {
        self.p_kappa_offset(dt, params) + 0.5 * dt * dt * self.psi.b.dot(tau)
    }

    pub fn ssq_argument(&self, tau: &Vec3, dt: f64, params: &SafetyFilterParams) -> f64 {
        self.ssq_offset(dt, params) + dt * self.psi.b.dot(tau)
    }

    pub fn p_h(&self, tau: &Vec3, dt: f64, params: &SafetyFilterParams) -> f64 {
        self.p_kappa(tau, dt, params) + ssq(self.ssq_argument(tau, dt, params)) / (2.0 * params.mu)
    }

    /// Both certified-set inequalities at the controller period.
    pub fn in_safe_input_set(&self, tau: &Vec3, params: &SafetyFilterParams) -> bool {
        let t = params.period;
        self.p_kappa(tau, t, params) <= -params.delta && self.p_h(tau, t, params) <= -params.h_margin
    }
}

pub fn p_kappa(
    state: &RigidBodyState,
    zone: &KeepOutZone,
    inertia: &InertiaMatrix,
    tau: &Vec3,
    dt: f64,
    params: &SafetyFilterParams,
) -> f64 {
    BarrierTerms::new(state, zone, inertia).p_kappa(tau, dt, params)
}

pub fn p_h(
    state: &RigidBodyState,
    zone: &KeepOutZone,
    inertia: &InertiaMatrix,
    tau: &Vec3,
    dt: f64,
    params: &SafetyFilterParams,
) -> f64 {
    BarrierTerms::new(state, zone, inertia).p_h(tau, dt, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterBranch {
    Passthrough,
    ConvexBranch,
    ConservativeBranch,
    FallbackBraking,
}

impl FilterBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterBranch::Passthrough => "passthrough",
            FilterBranch::ConvexBranch => "convex",
            FilterBranch::ConservativeBranch => "conservative",
            FilterBranch::FallbackBraking => "fallback",
        }
    }
}

impl fmt::Display for FilterBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOutcome {
    pub tau_safe: Vec3,
    pub modified: bool,
    pub branch: FilterBranch,
    /// `p_κ(T)` at `tau_safe`.
    pub p_kappa: f64,
    /// `p_h(T)` at `tau_safe`.
    pub p_h: f64,
    /// Set when a branch produced a point that failed the a-posteriori
    /// residual check and the filter fell back to braking.
    pub solver_failed: bool,
}

/// Minimal-deviation certified torque.
pub fn filter(
    state: &RigidBodyState,
    zone: &KeepOutZone,
    inertia: &InertiaMatrix,
    tau_rl: &Vec3,
    params: &SafetyFilterParams,
) -> FilterOutcome {
    let terms = BarrierTerms::new(state, zone, inertia);
    filter_with_terms(&terms, tau_rl, params)
}

pub fn filter_with_terms(terms: &BarrierTerms, tau_rl: &Vec3, params: &SafetyFilterParams) -> FilterOutcome {
    let t = params.period;
    let tol = params.solver_tol;
    let outcome = |tau: Vec3, branch: FilterBranch, solver_failed: bool| FilterOutcome {
        tau_safe: tau,
        modified: tau != *tau_rl,
        branch,
        p_kappa: terms.p_kappa(&tau, t, params),
        p_h: terms.p_h(&tau, t, params),
        solver_failed,
    };

    let in_box = tau_rl.iter().all(|x| x.abs() <= params.tau_max);
    if in_box && terms.in_safe_input_set(tau_rl, params) {
        return outcome(*tau_rl, FilterBranch::Passthrough, false);
    }

    let b = terms.psi.b;
    let k_off = terms.p_kappa_offset(t, params);
    let z_off = terms.ssq_offset(t, params);
    let target = if tau_rl.iter().all(|x| x.is_finite()) {
        *tau_rl
    } else {
        Vec3::zeros()
    };

    let kappa_bound = HalfSpace::new(b * (0.5 * t * t), -params.delta - k_off);
    let mut candidates: Vec<(f64, Vec3, FilterBranch)> = Vec::with_capacity(2);

    // convex branch: z ≥ 0 and u² + μT u + 2μ(c − ½T e + Δ) ≤ 0 with u = z
    let c = 2.0 * params.mu * (k_off - 0.5 * t * z_off + params.h_margin);
    let bq = params.mu * t;
    let disc = bq * bq - 4.0 * c;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // stable upper root of u² + bq·u + c
        let u_hi = if bq + root > 0.0 { -2.0 * c / (bq + root) } else { 0.5 * (-bq + root) };
        let mut cs = symmetric_box(params.tau_max).to_vec();
        cs.push(kappa_bound);
        cs.push(HalfSpace::new(-b * t, z_off));
        cs.push(HalfSpace::new(b * t, u_hi - z_off));
        if let Projection::Solved { x, .. } = project(&target, &cs, tol) {
            candidates.push(((x - target).norm_squared(), x, FilterBranch::ConvexBranch));
        }
    }

    // conservative branch: z ≤ 0 and p_κ ≤ −Δ in place of p_h ≤ −Δ
    {
        let mut cs = symmetric_box(params.tau_max).to_vec();
        cs.push(kappa_bound);
        cs.push(HalfSpace::new(b * t, -z_off));
        cs.push(HalfSpace::new(b * (0.5 * t * t), -params.h_margin - k_off));
        if let Projection::Solved { x, .. } = project(&target, &cs, tol) {
            candidates.push(((x - target).norm_squared(), x, FilterBranch::ConservativeBranch));
        }
    }

    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut solver_failed = false;
    for (_, x, branch) in candidates {
        let out = outcome(x, branch, false);
        if verify_outcome(&out, params) {
            return out;
        }
        solver_failed = true;
    }

    // brake: the box torque minimizing ψ, hence p_κ and p_h
    let brake = Vec3::from_fn(|i, _| {
        if b[i] > 0.0 {
            -params.tau_max
        } else if b[i] < 0.0 {
            params.tau_max
        } else {
            0.0
        }
    });
    outcome(brake, FilterBranch::FallbackBraking, solver_failed)
}

/// Post-hoc membership check of the certified set at solver tolerance.
pub fn verify_outcome(outcome: &FilterOutcome, params: &SafetyFilterParams) -> bool {
    outcome.p_kappa <= -params.delta + params.solver_tol
        && outcome.p_h <= -params.h_margin + params.solver_tol
}
