//! Shaped per-step reward with the keep-out-zone penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quatmath::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Penalty sharpness, 1/rad.
    pub alpha: f64,
    /// Penalty magnitude.
    pub beta: f64,
    pub accuracy_bonus: f64,
    /// rad
    pub accuracy_threshold: f64,
    pub torque_weight: f64,
    pub torque_change_weight: f64,
    pub regress_penalty: f64,
    /// rad
    pub angle_scale: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 66.0,
            beta: 10.0,
            accuracy_bonus: 9.0,
            accuracy_threshold: 0.25f64.to_radians(),
            torque_weight: 0.05,
            torque_change_weight: 0.005,
            regress_penalty: 1.0,
            angle_scale: 0.14 * 2.0 * std::f64::consts::PI,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.accuracy_bonus,
            self.accuracy_threshold,
            self.torque_weight,
            self.torque_change_weight,
            self.regress_penalty,
        ];
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.angle_scale > 0.0)
            || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::InvalidConfig(
                "reward: alpha, beta, angle_scale must be positive and weights non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Euclidean norm of the per-axis torque limits.
pub fn torque_limit_norm(tau_max: &Vec3) -> f64 {
    tau_max.norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardInputs {
    /// Attitude error angle, rad.
    pub phi: f64,
    pub q_e0_now: f64,
    pub q_e0_prev: f64,
    pub tau: Vec3,
    pub tau_prev: Vec3,
    pub tau_max: Vec3,
    /// rad; `f64::INFINITY` when no zone is active.
    pub theta_margin: f64,
}

pub fn penalty_fzone(theta_margin: f64, params: &RewardParams) -> f64 {
    if theta_margin <= 0.0 {
        params.beta
    } else {
        params.beta * (-params.alpha * theta_margin).exp()
    }
}

pub fn reward_step(inputs: &RewardInputs, params: &RewardParams) -> f64 {
    let mut r = (-inputs.phi / params.angle_scale).exp()
        - params.torque_weight * inputs.tau.norm() / torque_limit_norm(&inputs.tau_max)
        - params.torque_change_weight * (inputs.tau - inputs.tau_prev).norm()
        - penalty_fzone(inputs.theta_margin, params);
    if inputs.q_e0_now <= inputs.q_e0_prev {
        r -= params.regress_penalty;
    }
    if inputs.phi <= params.accuracy_threshold {
        r += params.accuracy_bonus;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn settled() -> RewardInputs {
        RewardInputs {
            phi: 0.0,
            q_e0_now: 1.0,
            q_e0_prev: 0.99,
            tau: Vec3::zeros(),
            tau_prev: Vec3::zeros(),
            tau_max: Vec3::repeat(2.0),
            theta_margin: f64::INFINITY,
        }
    }

    #[test]
    fn penalty_examples() {
        let p = RewardParams::default();
        assert_eq!(penalty_fzone(0.0, &p), 10.0);
        assert_eq!(penalty_fzone(-0.1, &p), 10.0);
        assert_abs_diff_eq!(penalty_fzone(10f64.ln() / 66.0, &p), 1.0, epsilon = 1e-12);
        assert_eq!(penalty_fzone(f64::INFINITY, &p), 0.0);
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        assert_abs_diff_eq!(reward_step(&settled(), &p), 10.0, epsilon = 1e-12);
        let stalled = RewardInputs { q_e0_prev: 1.0, ..settled() };
        assert_abs_diff_eq!(reward_step(&stalled, &p), 9.0, epsilon = 1e-12);
        let scaled = RewardInputs {
            phi: 0.14 * 2.0 * std::f64::consts::PI,
            q_e0_now: 0.9,
            q_e0_prev: 0.8,
            ..settled()
        };
        assert_abs_diff_eq!(reward_step(&scaled, &p), (-1f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn torque_terms() {
        let p = RewardParams::default();
        let r = reward_step(
            &RewardInputs {
                tau: Vec3::new(2.0, 2.0, 2.0),
                tau_prev: Vec3::new(2.0, 2.0, 1.0),
                ..settled()
            },
            &p,
        );
        assert_abs_diff_eq!(r, 10.0 - 0.05 - 0.005, epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(RewardParams::default().validate().is_ok());
        assert!(RewardParams { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardParams { torque_weight: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn penalty_is_decreasing(m1 in 0.0f64..1.0, dm in 1e-6f64..1.0) {
            let p = RewardParams::default();
            prop_assert!(penalty_fzone(m1 + dm, &p) < penalty_fzone(m1, &p));
            prop_assert!((penalty_fzone(1e-14, &p) - p.beta).abs() < 1e-11);
        }

        #[test]
        fn reward_is_bounded_and_monotone_in_torque(
            phi in 0.0f64..3.2,
            e_now in -1.0f64..1.0,
            e_prev in -1.0f64..1.0,
            t in prop::array::uniform3(-2.0f64..2.0),
            tp in prop::array::uniform3(-2.0f64..2.0),
            margin in -1.0f64..3.0,
            k in 1.0f64..3.0,
        ) {
            let p = RewardParams::default();
            let inputs = RewardInputs {
                phi,
                q_e0_now: e_now,
                q_e0_prev: e_prev,
                tau: Vec3::from(t),
                tau_prev: Vec3::from(tp),
                tau_max: Vec3::repeat(2.0),
                theta_margin: margin,
            };
            let r = reward_step(&inputs, &p);
            let max_change = (Vec3::repeat(4.0)).norm();
            prop_assert!(r <= 10.0);
            prop_assert!(r >= -(0.05 + 0.005 * max_change + p.beta + 1.0));

            // scaling τ up with τ_prev = τ keeps Δτ at zero
            let base = RewardInputs { tau_prev: inputs.tau, ..inputs };
            let bigger = RewardInputs { tau: inputs.tau * k, tau_prev: inputs.tau * k, ..inputs };
            prop_assert!(reward_step(&bigger, &p) <= reward_step(&base, &p) + 1e-15);
        }
    }
}
