//! Action sources: exported MLP actors and a quaternion-feedback baseline.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{Observation, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::quatmath::Vec3;

/// Anything that maps an observation to a normalized action in `[−1, 1]³`.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation) -> Vec3;
}

/// On-disk weights document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub layers: Vec<LayerFile>,
    pub activation: String,
    pub squash: String,
    pub obs_dim: usize,
    pub act_dim: usize,
}

/// Row-major weights; row count is the layer's output dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

/// Deterministic actor: ReLU hidden layers, tanh-squashed mean output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    layers: Vec<Layer>,
}

impl MlpPolicy {
    pub fn from_file(file: &PolicyFile) -> Result<Self> {
        if file.activation != "relu" {
            return Err(Error::Shape(format!("unsupported activation {:?}", file.activation)));
        }
        if file.squash != "tanh" {
            return Err(Error::Shape(format!("unsupported squash {:?}", file.squash)));
        }
        if file.obs_dim != OBS_DIM || file.act_dim != ACT_DIM {
            return Err(Error::Shape(format!(
                "expected obs_dim {OBS_DIM} and act_dim {ACT_DIM}, got {} and {}",
                file.obs_dim, file.act_dim
            )));
        }
        if file.layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        let mut input = OBS_DIM;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.iter().enumerate() {
            let rows = l.w.len();
            if rows == 0 || l.w.iter().any(|r| r.len() != input) {
                return Err(Error::Shape(format!(
                    "layer {i}: weight rows must each have {input} columns"
                )));
            }
            if l.b.len() != rows {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != output dimension {rows}",
                    l.b.len()
                )));
            }
            if l.w.iter().flatten().chain(l.b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Shape(format!("layer {i}: non-finite weight")));
            }
            layers.push(Layer {
                weights: DMatrix::from_fn(rows, input, |r, c| l.w[r][c]),
                bias: DVector::from_column_slice(&l.b),
            });
            input = rows;
        }
        if input != ACT_DIM {
            return Err(Error::Shape(format!("final layer outputs {input}, expected {ACT_DIM}")));
        }
        Ok(Self { layers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
            activation: "relu".into(),
            squash: "tanh".into(),
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
        }
    }

    pub fn infer(&self, obs: &Observation) -> Vec3 {
        let mut x = DVector::from_column_slice(obs.as_slice());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = &l.weights * x + &l.bias;
            if i < last {
                x.apply(|v| *v = v.max(0.0));
            }
        }
        Vec3::new(x[0].tanh(), x[1].tanh(), x[2].tanh())
    }
}

impl Policy for MlpPolicy {
    fn act(&self, obs: &Observation) -> Vec3 {
        self.infer(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineGains {
    /// N·m
    pub kp: f64,
    /// N·m·s
    pub kd: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self { kp: 4.0, kd: 12.0 }
    }
}

impl BaselineGains {
    pub fn validate(&self) -> Result<()> {
        if self.kp > 0.0 && self.kd > 0.0 && self.kp.is_finite() && self.kd.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("baseline gains must be positive".into()))
        }
    }
}

/// Unclamped feedback torque `−kp q̄_e − kd ω̄`.
pub fn baseline_torque(gains: &BaselineGains, obs: &Observation) -> Vec3 {
    -obs.q_e().qv * gains.kp - obs.omega() * gains.kd
}

pub fn baseline_action(gains: &BaselineGains, obs: &Observation, tau_max: f64) -> Vec3 {
    baseline_torque(gains, obs).map(|t| (t / tau_max).clamp(-1.0, 1.0))
}

/// Quaternion-feedback controller bound to a torque limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselinePolicy {
    pub gains: BaselineGains,
    pub tau_max: f64,
}

impl Policy for BaselinePolicy {
    fn act(&self, obs: &Observation) -> Vec3 {
        baseline_action(&self.gains, obs, self.tau_max)
    }
}
