//! Run configuration file. Angles are stored in degrees and rates in °/s;
//! conversion to radians happens in [`RunConfig::episode`] and friends.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::SafetyFilterParams;
use crate::dynamics::{InertiaMatrix, RigidBodyState};
use crate::env::{CurriculumPhase, CurriculumSpec, EpisodeConfig};
use crate::error::{Error, Result};
use crate::keepout::KeepOutZone;
use crate::policy::BaselineGains;
use crate::quatmath::{Quaternion, Vec3};
use crate::reward::RewardParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneFile {
    /// Inertial avoid direction; normalized on load.
    pub n: [f64; 3],
    pub half_angle_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateFile {
    pub q: [f64; 4],
    pub omega_deg_s: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFile {
    /// 1/rad
    pub alpha: f64,
    pub beta: f64,
    pub accuracy_bonus: f64,
    pub accuracy_threshold_deg: f64,
    pub torque_weight: f64,
    pub torque_change_weight: f64,
    pub regress_penalty: f64,
    pub angle_scale_deg: f64,
}

impl Default for RewardFile {
    fn default() -> Self {
        let p = RewardParams::default();
        Self {
            alpha: p.alpha,
            beta: p.beta,
            accuracy_bonus: p.accuracy_bonus,
            accuracy_threshold_deg: 0.25,
            torque_weight: p.torque_weight,
            torque_change_weight: p.torque_change_weight,
            regress_penalty: p.regress_penalty,
            angle_scale_deg: 0.14 * 360.0,
        }
    }
}

impl RewardFile {
    pub fn params(&self) -> RewardParams {
        RewardParams {
            alpha: self.alpha,
            beta: self.beta,
            accuracy_bonus: self.accuracy_bonus,
            accuracy_threshold: self.accuracy_threshold_deg.to_radians(),
            torque_weight: self.torque_weight,
            torque_change_weight: self.torque_change_weight,
            regress_penalty: self.regress_penalty,
            angle_scale: self.angle_scale_deg.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumFile {
    pub phase: CurriculumPhase,
    pub max_dev_deg: f64,
    pub min_dev_deg: f64,
    pub zone_half_angle_deg: [f64; 2],
    pub zone_path_fraction: [f64; 2],
    pub omega_init_deg_s: f64,
}

impl Default for CurriculumFile {
    fn default() -> Self {
        Self {
            phase: CurriculumPhase::Two,
            max_dev_deg: 180.0,
            min_dev_deg: 80.0,
            zone_half_angle_deg: [15.0, 30.0],
            zone_path_fraction: [0.25, 0.75],
            omega_init_deg_s: 0.001,
        }
    }
}

impl CurriculumFile {
    pub fn spec(&self) -> CurriculumSpec {
        let [h0, h1] = self.zone_half_angle_deg;
        CurriculumSpec {
            phase: self.phase,
            max_dev: self.max_dev_deg.to_radians(),
            min_dev: self.min_dev_deg.to_radians(),
            zone_half_angle_range: [h0.to_radians(), h1.to_radians()],
            zone_path_fraction_range: self.zone_path_fraction,
            omega_init_range: self.omega_init_deg_s.to_radians(),
        }
    }
}

/// Complete run description: one episode scenario plus the batch
/// distribution and baseline gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub duration: f64,
    pub dt: f64,
    pub inertia: [[f64; 3]; 3],
    pub tau_max: f64,
    pub boresight: [f64; 3],
    pub zone: Option<ZoneFile>,
    pub target: [f64; 4],
    pub initial: InitialStateFile,
    pub reward: RewardFile,
    pub filter_enabled: bool,
    pub filter: SafetyFilterParams,
    pub curriculum: CurriculumFile,
    pub baseline: BaselineGains,
    pub seed: u64,
}

impl Default for RunConfig {
    /// The 100° single-zone example reorientation.
    fn default() -> Self {
        Self {
            duration: 100.0,
            dt: 0.1,
            inertia: InertiaMatrix::reference_spacecraft().rows(),
            tau_max: 2.0,
            boresight: [1.0, 0.0, 0.0],
            zone: Some(ZoneFile { n: [0.703, 0.263, 0.661], half_angle_deg: 25.0 }),
            target: [1.0, 0.0, 0.0, 0.0],
            initial: InitialStateFile {
                q: [0.6428, 0.3138, -0.5892, 0.3757],
                omega_deg_s: [-5.7e-4, -1.1e-4, -9.9e-4],
            },
            reward: RewardFile::default(),
            filter_enabled: true,
            filter: SafetyFilterParams::default(),
            curriculum: CurriculumFile::default(),
            baseline: BaselineGains::default(),
            seed: 0,
        }
    }
}

/// Tolerance on the norm of quaternions read from a file; within it they
/// are normalized, outside it they are rejected.
pub const FILE_QUATERNION_TOLERANCE: f64 = 1e-3;

fn unit_quaternion(q: [f64; 4], what: &str) -> Result<Quaternion> {
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    if !q.is_finite() || (q.norm() - 1.0).abs() > FILE_QUATERNION_TOLERANCE {
        return Err(Error::InvalidConfig(format!("{what} must be a unit quaternion")));
    }
    Ok(q.normalize())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config values serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.episode()?.validate()?;
        self.curriculum.spec().validate()?;
        self.baseline.validate()
    }

    pub fn episode(&self) -> Result<EpisodeConfig> {
        let boresight = Vec3::from(self.boresight);
        let bn = boresight.norm();
        if !(bn.is_finite() && bn > 0.0) {
            return Err(Error::InvalidConfig("boresight must be a non-zero vector".into()));
        }
        let boresight = boresight / bn;
        let zone = self
            .zone
            .as_ref()
            .map(|z| KeepOutZone::new(Vec3::from(z.n), boresight, z.half_angle_deg.to_radians()))
            .transpose()?;
        let omega = Vec3::from(self.initial.omega_deg_s).map(f64::to_radians);
        Ok(EpisodeConfig {
            duration: self.duration,
            dt: self.dt,
            inertia: InertiaMatrix::from_rows(self.inertia)?,
            tau_max: self.tau_max,
            boresight,
            zone,
            target: unit_quaternion(self.target, "target")?,
            initial: RigidBodyState::new(unit_quaternion(self.initial.q, "initial.q")?, omega),
            reward: self.reward.params(),
            filter_enabled: self.filter_enabled,
            filter: self.filter,
        })
    }

    pub fn curriculum_spec(&self) -> CurriculumSpec {
        self.curriculum.spec()
    }
}
