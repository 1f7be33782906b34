//! Cartesian impedance nominal law, dynamically consistent projections and
//! the per-step composite controller.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};

use crate::dynamics::RobotState;
use crate::hqp::{run_cascade, HqpError, RHO_DEFAULT};
use crate::model::RobotModel;
use crate::qp::linalg::null_space;
use crate::qp::QpStatus;
use crate::tasks::{energy_cbf_row, strict_tasks, CbfParams, Category, Task, TaskError};

/// Task-space inertia eigenvalue ratio below which the damped inverse is used.
const SINGULAR_RATIO: f64 = 1e-10;
const DAMPING: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("nullspace of the task Jacobian has dimension {0}, expected 1")]
    NullspaceDimension(usize),
    #[error("impedance parameters invalid: {0}")]
    Impedance(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    SingleQp,
    HqpPerformance,
    HqpSafety,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SingleQp, Mode::HqpPerformance, Mode::HqpSafety];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleQp => "single_qp",
            Mode::HqpPerformance => "hqp_performance",
            Mode::HqpSafety => "hqp_safety",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected single_qp, hqp_performance or hqp_safety)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceParams {
    pub k_trans: Vector3<f64>,
    pub k_rot: Vector3<f64>,
    pub eq_position: Vector3<f64>,
    pub eq_orientation: UnitQuaternion<f64>,
}

impl ImpedanceParams {
    pub fn new(k_trans: Vector3<f64>, k_rot: Vector3<f64>) -> Self {
        Self {
            k_trans,
            k_rot,
            eq_position: Vector3::zeros(),
            eq_orientation: UnitQuaternion::identity(),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.k_trans.iter().chain(self.k_rot.iter()).all(|&k| k > 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(ControlError::Impedance("stiffnesses must be positive".into()))
        }
    }

    pub fn stiffness(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(6, 6);
        for i in 0..3 {
            k[(i, i)] = self.k_trans[i];
            k[(i + 3, i + 3)] = self.k_rot[i];
        }
        k
    }

    /// Position error over orientation error (quaternion log), both in the world frame.
    pub fn pose_error(&self, state: &RobotState) -> DVector<f64> {
        let pose = state.ee_pose();
        let dp = self.eq_position - pose.translation.vector;
        let dr = (self.eq_orientation * pose.rotation.inverse()).scaled_axis();
        DVector::from_iterator(6, dp.iter().chain(dr.iter()).copied())
    }
}

fn sym_eigen_apply(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Geometric mean `A # B = A^1/2 (A^-1/2 B A^-1/2)^1/2 A^1/2` of two SPD matrices.
pub fn geometric_mean(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let a_half = sym_eigen_apply(a, f64::sqrt);
    let a_inv_half = sym_eigen_apply(a, |x| 1.0 / x.sqrt());
    let inner = &a_inv_half * b * &a_inv_half;
    let inner = (&inner + inner.transpose()) * 0.5;
    let m = &a_half * sym_eigen_apply(&inner, f64::sqrt) * &a_half;
    (&m + m.transpose()) * 0.5
}

/// Operational-space quantities at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpace {
    /// `Lambda = (J M^-1 J')^-1`.
    pub lambda: DMatrix<f64>,
    /// `M^-1 J'`.
    pub minv_jt: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// The damped inverse was used.
    pub damped: bool,
}

pub fn projections(state: &RobotState) -> TaskSpace {
    let j = state.jacobian();
    let nq = state.n();
    let minv_jt = state.solve_mass_mat(&j.transpose());
    let inv_lambda = j * &minv_jt;
    let inv_lambda = (&inv_lambda + inv_lambda.transpose()) * 0.5;
    let eig = inv_lambda.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let damped = !(lo > SINGULAR_RATIO * hi);
    let m = if damped { &inv_lambda + DMatrix::identity(6, 6) * DAMPING } else { inv_lambda };
    let lambda = m
        .cholesky()
        .expect("damped task inertia is positive definite")
        .inverse();
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    let p = j.transpose() * &lambda * minv_jt.transpose();
    let n = DMatrix::identity(nq, nq) - &p;
    TaskSpace { lambda, minv_jt, p, n, damped }
}

/// `u_nom = J' (K e - D J qd) + g` with critical damping `D = 2 (Lambda # K)`.
pub fn nominal_torque(state: &RobotState, impedance: &ImpedanceParams) -> DVector<f64> {
    nominal_torque_with(state, impedance, &projections(state))
}

fn nominal_torque_with(state: &RobotState, impedance: &ImpedanceParams, ts: &TaskSpace) -> DVector<f64> {
    let k = impedance.stiffness();
    let d = geometric_mean(&ts.lambda, &k) * 2.0;
    let xd = state.jacobian() * state.qd();
    let force = &k * impedance.pose_error(state) - d * xd;
    state.jacobian().transpose() * force + state.gravity()
}

/// Unit torque direction spanning `range(N)`, `M v` for `v` in `null(J)`.
pub fn nullspace_basis(state: &RobotState, previous: Option<&DVector<f64>>) -> Result<DVector<f64>, ControlError> {
    let basis = null_space(state.jacobian(), state.n());
    if basis.ncols() != 1 {
        return Err(ControlError::NullspaceDimension(basis.ncols()));
    }
    let mut z = state.mass() * basis.column(0);
    z /= z.norm();
    let flip = match previous {
        Some(prev) => z.dot(prev) < 0.0,
        None => {
            let imax = z.iamax();
            z[imax] < 0.0
        }
    };
    if flip {
        z = -z;
    }
    Ok(z)
}

/// `alpha = z' N u`.
pub fn nullspace_coefficient(ts: &TaskSpace, z: &DVector<f64>, u: &DVector<f64>) -> f64 {
    z.dot(&(&ts.n * u))
}

/// End-effector wrench change `Lambda J M^-1 (u - u_nom)`, so that `J' dW = P (u - u_nom)`.
pub fn wrench_deviation(ts: &TaskSpace, u: &DVector<f64>, u_nom: &DVector<f64>) -> DVector<f64> {
    &ts.lambda * (ts.minv_jt.transpose() * (u - u_nom))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    pub cbf: CbfParams,
    pub impedance: ImpedanceParams,
    pub rho: f64,
    delta_prev: f64,
    z_prev: Option<DVector<f64>>,
    last_u: Option<DVector<f64>>,
}

impl ControllerState {
    pub fn new(mode: Mode, cbf: CbfParams, impedance: ImpedanceParams) -> Self {
        Self {
            mode,
            cbf,
            impedance,
            rho: RHO_DEFAULT,
            delta_prev: 0.0,
            z_prev: None,
            last_u: None,
        }
    }

    pub fn delta_prev(&self) -> f64 {
        self.delta_prev
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u_applied: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub delta: f64,
    pub k_max_eff: f64,
    pub wrench_dev: DVector<f64>,
    pub alpha_dev: f64,
    pub statuses: Vec<QpStatus>,
    pub active_strict: Vec<String>,
    /// Largest residual of any inherited equality row at the applied torque.
    pub eq_residual: f64,
    pub damped: bool,
    pub fault: Option<String>,
}

/// Soft tasks of one control step, ordered for the given mode.
pub fn mode_tasks(
    mode: Mode,
    ts: &TaskSpace,
    u_nom: &DVector<f64>,
    energy: Task,
) -> Vec<Task> {
    let n = u_nom.len();
    let preserve = |prio| Task::soft_equality("cartesian", Category::Performance, prio, ts.p.clone(), &ts.p * u_nom);
    let nullspace = |prio| Task::soft_equality("nullspace", Category::Performance, prio, ts.n.clone(), &ts.n * u_nom);
    match mode {
        Mode::SingleQp => {
            let mut hard = energy.with_priority(1);
            hard.slack.fill(0.0);
            let track = Task::soft_equality("nominal", Category::Performance, 1, DMatrix::identity(n, n), u_nom.clone());
            vec![track, hard]
        }
        Mode::HqpPerformance => vec![preserve(1), energy.with_priority(2), nullspace(3)],
        Mode::HqpSafety => vec![energy.with_priority(1), preserve(2), nullspace(3)],
    }
}

/// One control period: build rows, run the cascade and update the slack memory.
pub fn step(
    model: &RobotModel,
    state: &RobotState,
    ctrl: &mut ControllerState,
    tau_ext: &DVector<f64>,
) -> Result<StepOutput, ControlError> {
    let ts = projections(state);
    let u_nom = nominal_torque_with(state, &ctrl.impedance, &ts);
    let z = nullspace_basis(state, ctrl.z_prev.as_ref())?;
    ctrl.z_prev = Some(z.clone());

    let strict = strict_tasks(state, &ctrl.cbf, model, tau_ext);
    let energy = energy_cbf_row(state, &ctrl.cbf, tau_ext, ctrl.delta_prev)?;
    let energy_prio = match ctrl.mode {
        Mode::SingleQp | Mode::HqpSafety => 1,
        Mode::HqpPerformance => 2,
    };
    let tasks = mode_tasks(ctrl.mode, &ts, &u_nom, energy);

    let (u, delta, statuses, active_strict, eq_residual, fault) =
        match run_cascade(&strict, &tasks, &u_nom, ctrl.rho) {
            Ok(r) => {
                let delta = if ctrl.mode == Mode::SingleQp { 0.0 } else { r.levels[energy_prio - 1].delta };
                let (a_eq, b_eq) = r.ledger.equalities();
                let eq_res = if b_eq.is_empty() { 0.0 } else { (a_eq * &r.u_final - b_eq).amax() };
                let active = r
                    .active_strict_rows()
                    .into_iter()
                    .map(|i| r.ledger.row_label(i).to_string())
                    .collect();
                let statuses = r.levels.iter().map(|l| l.status).collect();
                (r.u_final, delta, statuses, active, eq_res, None)
            }
            Err(e) => {
                let fallback = ctrl.last_u.clone().unwrap_or_else(|| u_nom.clone());
                let status = match &e {
                    HqpError::LevelFailed { status, .. } => *status,
                    _ => QpStatus::Infeasible,
                };
                (fallback, ctrl.delta_prev, vec![status], Vec::new(), 0.0, Some(e.to_string()))
            }
        };

    if fault.is_none() {
        ctrl.delta_prev = delta;
        ctrl.last_u = Some(u.clone());
    }
    Ok(StepOutput {
        wrench_dev: wrench_deviation(&ts, &u, &u_nom),
        alpha_dev: nullspace_coefficient(&ts, &z, &(&u - &u_nom)),
        k_max_eff: ctrl.cbf.k_max + delta,
        u_applied: u,
        u_nom,
        delta,
        statuses,
        active_strict,
        eq_residual,
        damped: ts.damped,
        fault,
    })
}
