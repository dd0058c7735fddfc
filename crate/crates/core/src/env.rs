//! Episodic reorientation environment and curriculum scenario sampler.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cbf::{self, BarrierTerms, FilterBranch, FilterOutcome, SafetyFilterParams};
use crate::dynamics::{step_zoh, InertiaMatrix, RigidBodyState};
use crate::error::{Error, Result};
use crate::keepout::{delta_n_body, theta_and_margin, KeepOutZone};
use crate::quatmath::{angle_between, error_angle, error_quaternion, Quaternion, Vec3};
use crate::reward::{reward_step, RewardInputs, RewardParams};

pub const OBS_DIM: usize = 16;
pub const ACT_DIM: usize = 3;

/// Observation layout:
///
/// | index  | content                              |
/// |--------|--------------------------------------|
/// | 0..4   | error quaternion, scalar first       |
/// | 4..7   | body rate, rad/s                     |
/// | 7..10  | boresight, body frame                |
/// | 10     | safety margin angle, rad             |
/// | 11     | boresight to avoid direction, rad    |
/// | 12..15 | relative avoidance direction, body   |
/// | 15     | previous error-quaternion scalar     |
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn q_e(&self) -> Quaternion {
        Quaternion::new(self.0[0], self.0[1], self.0[2], self.0[3])
    }

    pub fn omega(&self) -> Vec3 {
        Vec3::new(self.0[4], self.0[5], self.0[6])
    }

    pub fn boresight(&self) -> Vec3 {
        Vec3::new(self.0[7], self.0[8], self.0[9])
    }

    pub fn theta_margin(&self) -> f64 {
        self.0[10]
    }

    pub fn theta(&self) -> f64 {
        self.0[11]
    }

    pub fn delta_n(&self) -> Vec3 {
        Vec3::new(self.0[12], self.0[13], self.0[14])
    }

    pub fn q_e0_prev(&self) -> f64 {
        self.0[15]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
    pub inertia: InertiaMatrix,
    /// Per-axis torque limit, N·m.
    pub tau_max: f64,
    /// Body-frame boresight reported when no zone is active.
    pub boresight: Vec3,
    pub zone: Option<KeepOutZone>,
    pub target: Quaternion,
    pub initial: RigidBodyState,
    pub reward: RewardParams,
    pub filter_enabled: bool,
    pub filter: SafetyFilterParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 100.0,
            dt: 0.1,
            inertia: InertiaMatrix::reference_spacecraft(),
            tau_max: 2.0,
            boresight: Vec3::x(),
            zone: None,
            target: Quaternion::identity(),
            initial: RigidBodyState::at_rest(Quaternion::identity()),
            reward: RewardParams::default(),
            filter_enabled: false,
            filter: SafetyFilterParams::default(),
        }
    }
}

impl EpisodeConfig {
    /// The 100° single-zone example reorientation.
    pub fn reference_scenario() -> Self {
        let deg = |x: f64| x.to_radians();
        let zone = KeepOutZone::new(Vec3::new(0.703, 0.263, 0.661), Vec3::x(), deg(25.0))
            .expect("reference zone is valid");
        let omega = Vec3::new(deg(-5.7e-4), deg(-1.1e-4), deg(-9.9e-4));
        Self {
            zone: Some(zone),
            initial: RigidBodyState::new(
                Quaternion::new(0.6428, 0.3138, -0.5892, 0.3757).normalize(),
                omega,
            ),
            ..Self::default()
        }
    }

    pub fn horizon(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn tau_max_vec(&self) -> Vec3 {
        Vec3::repeat(self.tau_max)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.duration > 0.0) || !self.dt.is_finite() || !self.duration.is_finite() {
            return fail("duration and dt must be positive".into());
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return fail(format!("duration/dt = {steps} is not a whole step count"));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return fail("tau_max must be positive".into());
        }
        if !self.target.is_unit(1e-9) || !self.initial.q.is_unit(1e-9) {
            return fail("target and initial attitudes must be unit quaternions".into());
        }
        if self.initial.omega.iter().any(|w| !w.is_finite()) {
            return fail("initial rate must be finite".into());
        }
        if (self.boresight.norm() - 1.0).abs() > 1e-9 {
            return fail("boresight must be a unit vector".into());
        }
        if let Some(z) = &self.zone {
            if (z.r_body() - self.boresight).norm() > 1e-9 {
                return fail("zone boresight differs from the configured boresight".into());
            }
        }
        self.reward.validate()?;
        if self.filter_enabled {
            self.filter.validate()?;
            if (self.filter.period - self.dt).abs() > 1e-12 {
                return fail("filter period T must equal the step dt".into());
            }
            if (self.filter.tau_max - self.tau_max).abs() > 1e-12 {
                return fail("filter tau_max must equal the episode tau_max".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub theta_margin: f64,
    pub phi: f64,
    pub violation: bool,
    /// `None` when the filter is disabled or no zone is active.
    pub filter: Option<FilterOutcome>,
    pub tau_applied: Vec3,
}

impl StepInfo {
    pub fn branch(&self) -> Option<FilterBranch> {
        self.filter.map(|f| f.branch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

struct Episode {
    config: EpisodeConfig,
    state: RigidBodyState,
    steps: usize,
    q_e0_prev: f64,
    tau_prev: Vec3,
    seed: u64,
}

/// Single-episode environment. `reset` must precede `step`; stepping past
/// the horizon is a protocol error.
#[derive(Default)]
pub struct Env {
    episode: Option<Episode>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self, config: EpisodeConfig, seed: u64) -> Result<Observation> {
        config.validate()?;
        let state = RigidBodyState { t: 0.0, ..config.initial };
        let q_e0 = error_quaternion(&state.q, &config.target).q0;
        self.episode = Some(Episode {
            config,
            state,
            steps: 0,
            q_e0_prev: q_e0,
            tau_prev: Vec3::zeros(),
            seed,
        });
        Ok(self.observation().expect("episode just created"))
    }

    pub fn is_reset(&self) -> bool {
        self.episode.is_some()
    }

    pub fn config(&self) -> Option<&EpisodeConfig> {
        self.episode.as_ref().map(|e| &e.config)
    }

    pub fn state(&self) -> Option<&RigidBodyState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn seed(&self) -> Option<u64> {
        self.episode.as_ref().map(|e| e.seed)
    }

    pub fn steps_taken(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn is_truncated(&self) -> bool {
        self.episode
            .as_ref()
            .is_some_and(|e| e.steps >= e.config.horizon())
    }

    pub fn observation(&self) -> Option<Observation> {
        let e = self.episode.as_ref()?;
        Some(observe(&e.config, &e.state, e.q_e0_prev))
    }

    pub fn step(&mut self, action: &Vec3) -> Result<StepResult> {
        let e = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Protocol("step called before reset".into()))?;
        let horizon = e.config.horizon();
        if e.steps >= horizon {
            return Err(Error::Protocol("step called after the episode was truncated".into()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidAction("action components must be finite".into()));
        }
        let cfg = &e.config;
        let commanded = action.map(|a| a.clamp(-1.0, 1.0) * cfg.tau_max);

        let outcome = match (&cfg.zone, cfg.filter_enabled) {
            (Some(zone), true) => {
                let terms = BarrierTerms::new(&e.state, zone, &cfg.inertia);
                Some(cbf::filter_with_terms(&terms, &commanded, &cfg.filter))
            }
            _ => None,
        };
        let tau = outcome.map_or(commanded, |o| o.tau_safe);

        let q_e0_before = error_quaternion(&e.state.q, &cfg.target).q0;
        e.state = step_zoh(&e.state, &tau, &cfg.inertia, cfg.dt);
        e.steps += 1;

        let q_e = error_quaternion(&e.state.q, &cfg.target);
        let phi = error_angle(&q_e);
        let theta_margin = cfg
            .zone
            .as_ref()
            .map_or(f64::INFINITY, |z| theta_and_margin(&e.state.q, z).margin);
        let reward = reward_step(
            &RewardInputs {
                phi,
                q_e0_now: q_e.q0,
                q_e0_prev: q_e0_before,
                tau,
                tau_prev: e.tau_prev,
                tau_max: cfg.tau_max_vec(),
                theta_margin,
            },
            &cfg.reward,
        );
        e.tau_prev = tau;
        e.q_e0_prev = q_e0_before;

        Ok(StepResult {
            observation: observe(&e.config, &e.state, e.q_e0_prev),
            reward,
            terminated: false,
            truncated: e.steps >= horizon,
            info: StepInfo {
                theta_margin,
                phi,
                violation: theta_margin <= 0.0,
                filter: outcome,
                tau_applied: tau,
            },
        })
    }
}

/// Angle reported for θ and the margin when no zone is active.
pub const NO_ZONE_ANGLE: f64 = PI;

pub fn observe(config: &EpisodeConfig, state: &RigidBodyState, q_e0_prev: f64) -> Observation {
    let q_e = error_quaternion(&state.q, &config.target);
    let (theta, margin, dn) = match &config.zone {
        Some(z) => {
            let a = theta_and_margin(&state.q, z);
            (a.theta, a.margin, delta_n_body(&state.q, z).direction)
        }
        None => (NO_ZONE_ANGLE, NO_ZONE_ANGLE, Vec3::zeros()),
    };
    let r = config.zone.as_ref().map_or(config.boresight, |z| *z.r_body());
    let w = state.omega;
    Observation([
        q_e.q0, q_e.qv.x, q_e.qv.y, q_e.qv.z, w.x, w.y, w.z, r.x, r.y, r.z, margin, theta, dn.x,
        dn.y, dn.z, q_e0_prev,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CurriculumPhase {
    One,
    Two,
}

impl TryFrom<u8> for CurriculumPhase {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(format!("curriculum phase must be 1 or 2, got {v}")),
        }
    }
}

impl From<CurriculumPhase> for u8 {
    fn from(p: CurriculumPhase) -> u8 {
        match p {
            CurriculumPhase::One => 1,
            CurriculumPhase::Two => 2,
        }
    }
}

/// Scenario distribution for one curriculum stage. Angles in radians,
/// rates in rad/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumSpec {
    pub phase: CurriculumPhase,
    pub max_dev: f64,
    pub min_dev: f64,
    pub zone_half_angle_range: [f64; 2],
    pub zone_path_fraction_range: [f64; 2],
    /// Symmetric per-axis bound on the initial body rate.
    pub omega_init_range: f64,
}

/// Minimum clearance between the zone edge and either end of the boresight
/// arc, rad.
pub const ZONE_CLEARANCE: f64 = 1e-3;
const MAX_FRACTION_ATTEMPTS: usize = 100;
const MAX_AXIS_ATTEMPTS: usize = 10_000;

impl CurriculumSpec {
    pub fn phase_one(max_dev: f64) -> Self {
        Self {
            phase: CurriculumPhase::One,
            max_dev,
            min_dev: 0.0,
            zone_half_angle_range: [15f64.to_radians(), 30f64.to_radians()],
            zone_path_fraction_range: [0.25, 0.75],
            omega_init_range: 0.001f64.to_radians(),
        }
    }

    pub fn phase_two(max_dev: f64) -> Self {
        Self {
            phase: CurriculumPhase::Two,
            min_dev: 80f64.to_radians(),
            ..Self::phase_one(max_dev)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("curriculum: {m}")));
        if !(self.min_dev >= 0.0 && self.min_dev < self.max_dev && self.max_dev <= PI + 1e-12) {
            return fail("deviation range must satisfy 0 ≤ min_dev < max_dev ≤ 180°");
        }
        let [h0, h1] = self.zone_half_angle_range;
        if !(h0 > 0.0 && h0 <= h1 && h1 < PI / 2.0) {
            return fail("zone half-angle range must lie in (0, 90°)");
        }
        let [f0, f1] = self.zone_path_fraction_range;
        if !(f0 > 0.0 && f0 <= f1 && f1 < 1.0) {
            return fail("zone path fraction range must lie in (0, 1)");
        }
        if !(self.omega_init_range >= 0.0 && self.omega_init_range.is_finite()) {
            return fail("initial rate range must be non-negative");
        }
        Ok(())
    }

    /// Draws a scenario, copying dynamics, reward and filter settings from
    /// `template`. Deterministic in `seed`.
    pub fn sample(&self, template: &EpisodeConfig, seed: u64) -> Result<EpisodeConfig> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deviation = uniform(&mut rng, self.min_dev, self.max_dev);
        let omega = Vec3::from_fn(|_, _| uniform(&mut rng, -self.omega_init_range, self.omega_init_range));
        let target = template.target;
        let boresight = template.boresight;

        let initial_q = |rng: &mut ChaCha8Rng| {
            let axis = Vec3::from(UnitSphere.sample(rng));
            target * Quaternion::from_axis_angle(&axis, deviation)
        };

        let mut config = EpisodeConfig {
            zone: None,
            target,
            ..template.clone()
        };

        if self.phase == CurriculumPhase::One {
            config.initial = RigidBodyState::new(initial_q(&mut rng), omega);
            return Ok(config);
        }

        let half_angle = uniform(&mut rng, self.zone_half_angle_range[0], self.zone_half_angle_range[1]);
        let end = target.rotate(&boresight);
        for _ in 0..MAX_AXIS_ATTEMPTS {
            let q0 = initial_q(&mut rng);
            let start = q0.rotate(&boresight);
            let arc = angle_between(&start, &end);
            // short or (near-)antipodal arcs leave no room or no unique great circle
            if arc < 2.0 * (half_angle + ZONE_CLEARANCE) || arc.sin() < 1e-6 {
                continue;
            }
            let edge = (half_angle + ZONE_CLEARANCE) / arc;
            let [f0, f1] = self.zone_path_fraction_range;
            let mut fraction = None;
            for _ in 0..MAX_FRACTION_ATTEMPTS {
                let f = uniform(&mut rng, f0, f1);
                if f >= edge && f <= 1.0 - edge {
                    fraction = Some(f);
                    break;
                }
            }
            let f = fraction.unwrap_or_else(|| uniform(&mut rng, edge, 1.0 - edge));
            let n = slerp_unit(&start, &end, arc, f);
            let zone = KeepOutZone::new(n, boresight, half_angle)?;
            let initial = RigidBodyState::new(q0, omega);
            // same draw with the filter on or off, so batches stay comparable
            let terms = BarrierTerms::new(&initial, &zone, &template.inertia);
            let inside = terms.kappa <= -template.filter.delta
                && terms.h(&template.filter) <= -template.filter.h_margin;
            if !inside {
                continue;
            }
            config.zone = Some(zone);
            config.initial = initial;
            return Ok(config);
        }
        Err(Error::InvalidConfig(
            "could not place a keep-out zone on the boresight path".into(),
        ))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Point at fraction `f` along the great-circle arc from `a` to `b`.
pub fn slerp_unit(a: &Vec3, b: &Vec3, arc: f64, f: f64) -> Vec3 {
    let s = arc.sin();
    ((a * ((1.0 - f) * arc).sin() + b * (f * arc).sin()) / s).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reset_at_target() {
        let mut env = Env::new();
        let obs = env.reset(EpisodeConfig::default(), 0).unwrap();
        assert_eq!(obs.q_e(), Quaternion::identity());
        assert_eq!(error_angle(&obs.q_e()), 0.0);
        assert_eq!(obs.q_e0_prev(), 1.0);
    }

    #[test]
    fn reference_scenario_observation() {
        let mut env = Env::new();
        let obs = env.reset(EpisodeConfig::reference_scenario(), 0).unwrap();
        assert_abs_diff_eq!(obs.theta_margin(), 0.35494, epsilon = 1e-3);
        assert_abs_diff_eq!(error_angle(&obs.q_e()).to_degrees(), 100.0, epsilon = 0.01);
        assert_eq!(obs.boresight(), Vec3::x());
        assert_abs_diff_eq!(obs.delta_n().norm(), 1.0, epsilon = 1e-12);
        assert!(obs.q_e().q0 >= 0.0);
        let again = Env::new().reset(EpisodeConfig::reference_scenario(), 0).unwrap();
        assert_eq!(obs, again);
    }

    #[test]
    fn zero_action_at_target_is_rewarded_fully() {
        let mut env = Env::new();
        env.reset(EpisodeConfig::default(), 0).unwrap();
        let r = env.step(&Vec3::zeros()).unwrap();
        // q_e0 stays at 1, so the strict-increase test fails: 10 − 1
        assert_abs_diff_eq!(r.reward, 9.0, epsilon = 1e-12);
        assert_eq!(env.state().unwrap().q, Quaternion::identity());
        assert_eq!(env.state().unwrap().omega, Vec3::zeros());
        assert!(!r.terminated && !r.truncated);
    }

    #[test]
    fn horizon_and_protocol_order() {
        let mut env = Env::new();
        assert!(matches!(env.step(&Vec3::zeros()), Err(Error::Protocol(_))));
        env.reset(EpisodeConfig::reference_scenario(), 3).unwrap();
        for k in 1..=1000 {
            let r = env.step(&Vec3::new(0.3, -2.0, 0.1)).unwrap();
            assert_eq!(r.truncated, k == 1000);
            assert!(!r.terminated);
            assert!(r.info.tau_applied.amax() <= 2.0);
        }
        assert!(env.is_truncated());
        assert!(matches!(env.step(&Vec3::zeros()), Err(Error::Protocol(_))));
        env.reset(EpisodeConfig::reference_scenario(), 3).unwrap();
        assert!(matches!(
            env.step(&Vec3::new(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn filter_is_applied_when_enabled() {
        let mut cfg = EpisodeConfig::reference_scenario();
        cfg.filter_enabled = true;
        let mut env = Env::new();
        env.reset(cfg, 0).unwrap();
        let r = env.step(&Vec3::zeros()).unwrap();
        assert_eq!(r.info.branch(), Some(FilterBranch::Passthrough));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EpisodeConfig::reference_scenario();
        cfg.duration = 100.05;
        assert!(cfg.validate().is_err());
        let mut cfg = EpisodeConfig::reference_scenario();
        cfg.filter_enabled = true;
        cfg.filter.period = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = EpisodeConfig::reference_scenario();
        cfg.boresight = Vec3::y();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn phase_one_sampling() {
        let spec = CurriculumSpec::phase_one(25f64.to_radians());
        let template = EpisodeConfig::default();
        for seed in 0..200 {
            let cfg = spec.sample(&template, seed).unwrap();
            assert!(cfg.zone.is_none());
            let dev = error_angle(&error_quaternion(&cfg.initial.q, &cfg.target));
            assert!(dev <= 25f64.to_radians() + 1e-12);
            assert!(cfg.initial.omega.amax() <= 0.001f64.to_radians());
        }
        assert_eq!(spec.sample(&template, 9).unwrap(), spec.sample(&template, 9).unwrap());
    }

    #[test]
    fn phase_two_zone_lies_on_boresight_arc() {
        let spec = CurriculumSpec::phase_two(PI);
        let template = EpisodeConfig { filter_enabled: true, ..Default::default() };
        for seed in 0..300 {
            let cfg = spec.sample(&template, seed).unwrap();
            let zone = cfg.zone.as_ref().unwrap();
            let start = cfg.initial.q.rotate(zone.r_body());
            let end = cfg.target.rotate(zone.r_body());
            let total = angle_between(&start, &end);
            let via = angle_between(&start, zone.n_inertial()) + angle_between(zone.n_inertial(), &end);
            assert!((via - total).abs() < 1e-6);
            let dev = error_angle(&error_quaternion(&cfg.initial.q, &cfg.target));
            assert!(dev >= 80f64.to_radians() - 1e-12);
            let h = zone.half_angle().to_degrees();
            assert!((15.0..=30.0).contains(&h));
            assert!(theta_and_margin(&cfg.initial.q, zone).margin > 0.0);
            assert!(theta_and_margin(&cfg.target, zone).margin > 0.0);
        }
    }

    #[test]
    fn curriculum_validation() {
        let mut spec = CurriculumSpec::phase_two(PI);
        spec.min_dev = PI;
        assert!(spec.validate().is_err());
        assert!(CurriculumPhase::try_from(3).is_err());
    }
}
