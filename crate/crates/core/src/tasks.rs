//! Prioritized tasks and the control barrier function rows built from them.
//!
//! Every task is affine in the torque input `u` and, for soft inequalities, in
//! a scalar slack `delta`:
//!
//! ```text
//!     equality:    A u            ~= b
//!     inequality:  A u + c delta  >= b
//! ```
//!
//! The builders below turn safety conditions of the form `hdot + gamma h >= 0`
//! into such rows using `qdd = M^-1 (u + tau_ext - C qd - g)`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Deserialize;

use crate::dynamics::{jacobian, RobotState};
use crate::model::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Equality,
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Safety,
    Performance,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TaskError {
    #[error("task `{label}`: {reason}")]
    Malformed { label: String, reason: String },
    #[error("previous slack must be >= 0, got {0}")]
    NegativeSlack(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub strictness: Strictness,
    pub category: Category,
    /// Level index; strict tasks live at level 0.
    pub priority: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Coefficient of the slack in each row (inequalities only, zero when strict).
    pub slack: DVector<f64>,
    pub label: String,
}

impl Task {
    pub fn strict_inequality(label: impl Into<String>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let rows = b.len();
        Self {
            kind: TaskKind::Inequality,
            strictness: Strictness::Strict,
            category: Category::Safety,
            priority: 0,
            a,
            b,
            slack: DVector::zeros(rows),
            label: label.into(),
        }
    }

    pub fn soft_equality(
        label: impl Into<String>,
        category: Category,
        priority: usize,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Self {
        let rows = b.len();
        Self {
            kind: TaskKind::Equality,
            strictness: Strictness::Soft,
            category,
            priority,
            a,
            b,
            slack: DVector::zeros(rows),
            label: label.into(),
        }
    }

    pub fn soft_inequality(
        label: impl Into<String>,
        category: Category,
        priority: usize,
        a: DMatrix<f64>,
        b: DVector<f64>,
        slack: DVector<f64>,
    ) -> Self {
        Self {
            kind: TaskKind::Inequality,
            strictness: Strictness::Soft,
            category,
            priority,
            a,
            b,
            slack,
            label: label.into(),
        }
    }

    pub fn with_priority(mut self, priority: usize) -> Self {
        self.priority = priority;
        self
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn row_label(&self, i: usize) -> String {
        format!("{}[{i}]", self.label)
    }

    /// Row data over the stacked variable `[u; delta]`.
    pub fn augmented(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.n() + 1);
        m.columns_mut(0, self.n()).copy_from(&self.a);
        m.column_mut(self.n()).copy_from(&self.slack);
        m
    }

    /// `A u + c delta - b`; nonnegative entries mean satisfied inequality rows.
    pub fn evaluate(&self, u: &DVector<f64>, delta: f64) -> DVector<f64> {
        &self.a * u + &self.slack * delta - &self.b
    }

    pub fn validate(&self, n: usize) -> Result<(), TaskError> {
        let bad = |reason: &str| {
            Err(TaskError::Malformed {
                label: self.label.clone(),
                reason: reason.to_string(),
            })
        };
        if self.a.ncols() != n {
            return bad("column count differs from the number of joints");
        }
        if self.a.nrows() != self.b.len() || self.slack.len() != self.b.len() {
            return bad("row counts of A, b and slack differ");
        }
        if self.strictness == Strictness::Strict {
            if self.priority != 0 {
                return bad("strict tasks belong to level 0");
            }
            if self.slack.iter().any(|&c| c != 0.0) {
                return bad("strict tasks cannot carry a slack");
            }
        }
        if self.kind == TaskKind::Equality && self.slack.iter().any(|&c| c != 0.0) {
            return bad("equality tasks cannot carry a slack");
        }
        if self.slack.iter().any(|&c| c < 0.0) {
            return bad("slack coefficients must be >= 0");
        }
        if !(self.a.iter().all(|x| x.is_finite()) && self.b.iter().all(|x| x.is_finite())) {
            return bad("non-finite row data");
        }
        Ok(())
    }
}

/// Toggles for the strict constraint families that make up the initial admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrictFamilies {
    pub torque: bool,
    pub velocity: bool,
    pub position: bool,
    pub collision: bool,
}

impl Default for StrictFamilies {
    fn default() -> Self {
        Self { torque: true, velocity: true, position: true, collision: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbfParams {
    /// Class-K gain of the kinetic-energy barrier (1/s).
    pub gamma: f64,
    /// Class-K gain of the joint-velocity barriers (1/s).
    pub gamma_velocity: f64,
    /// Kinetic-energy bound (J).
    pub k_max: f64,
    /// Cascade gains of the relative-degree-two barriers (1/s).
    pub lambda1: f64,
    pub lambda2: f64,
    /// Collision plane `normal . x = offset` and the clearance kept from it (m).
    pub plane_normal: Vector3<f64>,
    pub plane_offset: f64,
    pub d_min: f64,
    /// Control period (s).
    pub dt: f64,
    pub families: StrictFamilies,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            gamma_velocity: 100.0,
            k_max: 0.5,
            lambda1: 10.0,
            lambda2: 10.0,
            plane_normal: Vector3::z(),
            plane_offset: 0.0,
            d_min: 0.05,
            dt: 1e-3,
            families: StrictFamilies::default(),
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |reason: &str| {
            Err(TaskError::Malformed {
                label: "cbf".into(),
                reason: reason.to_string(),
            })
        };
        let positive = [
            self.gamma,
            self.gamma_velocity,
            self.k_max,
            self.lambda1,
            self.lambda2,
            self.dt,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("gains, k_max and dt must be positive");
        }
        if (self.plane_normal.norm() - 1.0).abs() > 1e-9 {
            return bad("plane normal must have unit length");
        }
        if !(self.d_min >= 0.0) {
            return bad("d_min must be >= 0");
        }
        Ok(())
    }
}

/// Relaxed kinetic-energy barrier `h = K_max - K + delta` as one soft row:
/// `-qd' u + (gamma + 1/dt) delta >= -gamma (K_max - K) + delta_prev/dt + qd' (tau_ext - g)`.
pub fn energy_cbf_row(
    state: &RobotState,
    params: &CbfParams,
    tau_ext: &DVector<f64>,
    delta_prev: f64,
) -> Result<Task, TaskError> {
    if !(delta_prev >= 0.0) {
        return Err(TaskError::NegativeSlack(delta_prev));
    }
    let qd = state.qd();
    let n = state.n();
    let a = DMatrix::from_fn(1, n, |_, j| -qd[j]);
    let b = -params.gamma * (params.k_max - state.kinetic_energy())
        + delta_prev / params.dt
        + qd.dot(&(tau_ext - state.gravity()));
    let c = params.gamma + 1.0 / params.dt;
    Ok(Task::soft_inequality(
        "energy",
        Category::Safety,
        1,
        a,
        DVector::from_element(1, b),
        DVector::from_element(1, c),
    ))
}

/// `-tau_max <= u <= tau_max`, as `u >= -tau_max` and `-u >= -tau_max` per joint.
pub fn torque_limit_rows(model: &RobotModel) -> Task {
    let n = model.n_joints();
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for (i, l) in model.links.iter().enumerate() {
        a[(2 * i, i)] = 1.0;
        a[(2 * i + 1, i)] = -1.0;
        b[2 * i] = -l.tau_max;
        b[2 * i + 1] = -l.tau_max;
    }
    Task::strict_inequality("torque", a, b)
}

/// Rows of `M^-1` and `M^-1 (tau_ext - C qd - g)`, the pieces every joint-space barrier needs.
fn joint_accel_map(state: &RobotState, tau_ext: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = state.n();
    let minv = state.solve_mass_mat(&DMatrix::identity(n, n));
    let minv = (&minv + minv.transpose()) * 0.5;
    let drift = state.solve_mass(&state.drift_torque(tau_ext));
    (minv, drift)
}

/// Exponential barriers on `v_max - qd_i` and `qd_i + v_max`.
pub fn velocity_limit_rows(
    state: &RobotState,
    params: &CbfParams,
    model: &RobotModel,
    tau_ext: &DVector<f64>,
) -> Task {
    let n = state.n();
    let (minv, drift) = joint_accel_map(state, tau_ext);
    let qd = state.qd();
    let gamma = params.gamma_velocity;
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for (i, l) in model.links.iter().enumerate() {
        let h_up = l.v_max - qd[i];
        let h_lo = qd[i] + l.v_max;
        a.row_mut(2 * i).copy_from(&(-minv.row(i)));
        b[2 * i] = drift[i] - gamma * h_up;
        a.row_mut(2 * i + 1).copy_from(&minv.row(i));
        b[2 * i + 1] = -drift[i] - gamma * h_lo;
    }
    Task::strict_inequality("velocity", a, b)
}

/// Extended barriers on `q_max - q_i` and `q_i - q_min`: with `h2 = hdot + lambda1 h`
/// the rows enforce `h2dot + lambda2 h2 >= 0`.
pub fn position_limit_rows(
    state: &RobotState,
    params: &CbfParams,
    model: &RobotModel,
    tau_ext: &DVector<f64>,
) -> Task {
    let n = state.n();
    let (minv, drift) = joint_accel_map(state, tau_ext);
    let (q, qd) = (state.q(), state.qd());
    let (l1, l2) = (params.lambda1, params.lambda2);
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for (i, l) in model.links.iter().enumerate() {
        let h_up = l.q_max - q[i];
        let h_lo = q[i] - l.q_min;
        a.row_mut(2 * i).copy_from(&(-minv.row(i)));
        b[2 * i] = drift[i] + (l1 + l2) * qd[i] - l1 * l2 * h_up;
        a.row_mut(2 * i + 1).copy_from(&minv.row(i));
        b[2 * i + 1] = -drift[i] - (l1 + l2) * qd[i] - l1 * l2 * h_lo;
    }
    Task::strict_inequality("position", a, b)
}

/// Clearance of the end-effector point from the collision plane, minus `d_min`.
pub fn plane_clearance(state: &RobotState, params: &CbfParams) -> f64 {
    params.plane_normal.dot(&state.ee_position()) - params.plane_offset - params.d_min
}

/// Extended barrier on the end-effector clearance from one world plane.
/// The Jacobian rate is a forward difference over one control period.
pub fn collision_plane_rows(
    state: &RobotState,
    params: &CbfParams,
    model: &RobotModel,
    tau_ext: &DVector<f64>,
) -> Task {
    let n = state.n();
    let (minv, drift) = joint_accel_map(state, tau_ext);
    let qd = state.qd();
    let normal = DVector::from_column_slice(params.plane_normal.as_slice());
    let jv = state.jacobian().rows(0, 3).into_owned();
    let q_next = state.q() + qd * params.dt;
    let jv_next = jacobian(model, &q_next)
        .expect("state and model dimensions agree")
        .rows(0, 3)
        .into_owned();
    let jdot_qd = (&jv_next - &jv) / params.dt * qd;

    let n_j = jv.transpose() * &normal; // J' n
    let h = plane_clearance(state, params);
    let hdot = n_j.dot(qd);
    let (l1, l2) = (params.lambda1, params.lambda2);
    let row = (&minv * &n_j).transpose();
    let b = -n_j.dot(&drift) - normal.dot(&jdot_qd) - (l1 + l2) * hdot - l1 * l2 * h;
    let mut a = DMatrix::zeros(1, n);
    a.row_mut(0).copy_from(&row);
    Task::strict_inequality("collision", a, DVector::from_element(1, b))
}

/// Every enabled strict family, in a fixed order.
pub fn strict_tasks(
    state: &RobotState,
    params: &CbfParams,
    model: &RobotModel,
    tau_ext: &DVector<f64>,
) -> Vec<Task> {
    let f = params.families;
    let mut tasks = Vec::new();
    if f.torque {
        tasks.push(torque_limit_rows(model));
    }
    if f.velocity {
        tasks.push(velocity_limit_rows(state, params, model, tau_ext));
    }
    if f.position {
        tasks.push(position_limit_rows(state, params, model, tau_ext));
    }
    if f.collision {
        tasks.push(collision_plane_rows(state, params, model, tau_ext));
    }
    tasks
}
