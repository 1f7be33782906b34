//! Serial-chain robot description and its text config loader.
//!
//! Links follow the modified (proximal) Denavit-Hartenberg convention: the
//! transform from frame `i-1` to frame `i` is
//! `RotX(alpha) * TransX(a) * RotZ(theta_offset + q_i) * TransZ(d)`.
//! Inertial data of each link is expressed in its own frame, about its
//! center of mass.

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model config: {0}")]
    Parse(String),
    #[error("invalid model field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// One link of the chain together with the joint that drives it.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub v_max: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    /// Fixed transform from the last link frame to the end-effector frame.
    pub tool: Isometry3<f64>,
    /// Gravitational acceleration in the world frame.
    pub gravity: Vector3<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    gravity: [f64; 3],
    #[serde(default)]
    tool: Option<ToolFile>,
    links: Vec<LinkFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolFile {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    a: f64,
    d: f64,
    alpha: f64,
    #[serde(default)]
    theta_offset: f64,
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
    q_min: f64,
    q_max: f64,
    v_max: f64,
    tau_max: f64,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn from_config_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let links = file
            .links
            .into_iter()
            .map(|l| Link {
                a: l.a,
                d: l.d,
                alpha: l.alpha,
                theta_offset: l.theta_offset,
                mass: l.mass,
                com: Vector3::from(l.com),
                inertia: Matrix3::from_fn(|r, c| l.inertia[r][c]),
                q_min: l.q_min,
                q_max: l.q_max,
                v_max: l.v_max,
                tau_max: l.tau_max,
            })
            .collect();
        let tool = file.tool.map_or_else(Isometry3::identity, |t| {
            Isometry3::from_parts(
                Translation3::from(Vector3::from(t.xyz)),
                UnitQuaternion::from_euler_angles(t.rpy[0], t.rpy[1], t.rpy[2]),
            )
        });
        let model = RobotModel {
            name: file.name,
            links,
            tool,
            gravity: Vector3::from(file.gravity),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_config_str(&text)
    }

    /// Checks every structural invariant; the error names the first offending field.
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |field: String, reason: &str| ModelError::Invalid {
            field,
            reason: reason.to_string(),
        };
        if self.links.is_empty() {
            return Err(invalid("links".into(), "at least one link is required"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("gravity".into(), "must be finite"));
        }
        for (i, l) in self.links.iter().enumerate() {
            let scalars = [
                ("a", l.a),
                ("d", l.d),
                ("alpha", l.alpha),
                ("theta_offset", l.theta_offset),
                ("mass", l.mass),
                ("q_min", l.q_min),
                ("q_max", l.q_max),
                ("v_max", l.v_max),
                ("tau_max", l.tau_max),
            ];
            for (name, v) in scalars {
                if !v.is_finite() {
                    return Err(invalid(format!("links[{i}].{name}"), "must be finite"));
                }
            }
            if !(l.mass > 0.0) {
                return Err(invalid(format!("links[{i}].mass"), "must be > 0"));
            }
            if !l.com.iter().all(|c| c.is_finite()) {
                return Err(invalid(format!("links[{i}].com"), "must be finite"));
            }
            let sym_err = (l.inertia - l.inertia.transpose()).amax();
            if !l.inertia.iter().all(|c| c.is_finite()) || sym_err > 1e-12 {
                return Err(invalid(format!("links[{i}].inertia"), "must be symmetric"));
            }
            if l.inertia.cholesky().is_none() {
                return Err(invalid(
                    format!("links[{i}].inertia"),
                    "must be positive definite",
                ));
            }
            if !(l.q_min < l.q_max) {
                return Err(invalid(format!("links[{i}].q_min"), "must be < q_max"));
            }
            if !(l.v_max > 0.0) {
                return Err(invalid(format!("links[{i}].v_max"), "must be > 0"));
            }
            if !(l.tau_max > 0.0) {
                return Err(invalid(format!("links[{i}].tau_max"), "must be > 0"));
            }
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<(), ModelError> {
        if len != self.n_joints() {
            return Err(ModelError::Dimension {
                expected: self.n_joints(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn tau_max(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.tau_max).collect()
    }
}
