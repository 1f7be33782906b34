//! Dynamics invariant suite over random states of a model.

use std::path::Path;
use std::process::ExitCode;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbf_hqp::dynamics::{forward_kinematics, jacobian, mass_matrix, RobotState};
use cbf_hqp::model::{ModelError, RobotModel};

use crate::{EXIT_FAULT, EXIT_USAGE};

const SYMMETRY_TOL: f64 = 1e-12;
const SKEW_TOL: f64 = 1e-6;
const JACOBIAN_TOL: f64 = 1e-5;
const CLOSED_FORM_TOL: f64 = 1e-10;

struct Check {
    name: &'static str,
    worst: f64,
    tol: f64,
    failed: bool,
}

impl Check {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, worst: 0.0, tol, failed: false }
    }

    fn record(&mut self, value: f64) {
        self.worst = self.worst.max(value);
        if value.is_nan() || value > self.tol {
            self.failed = true;
        }
    }
}

/// Mass, Coriolis and gravity of a two-link planar arm with gravity along -y,
/// or `None` when the model is not of that form.
fn planar_closed_form(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let l = &model.links;
    let flat = l.len() == 2
        && l.iter().all(|k| k.alpha == 0.0 && k.d == 0.0 && k.theta_offset == 0.0 && k.com.y == 0.0 && k.com.z == 0.0)
        && l[0].a == 0.0
        && model.gravity.x == 0.0
        && model.gravity.z == 0.0;
    if !flat {
        return None;
    }
    let g = -model.gravity.y;
    let (m1, m2) = (l[0].mass, l[1].mass);
    let (lc1, lc2, l1) = (l[0].com.x, l[1].com.x, l[1].a);
    let (i1, i2) = (l[0].inertia[(2, 2)], l[1].inertia[(2, 2)]);
    let c2 = q[1].cos();
    let m11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i1 + i2;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let m22 = m2 * lc2 * lc2 + i2;
    let h = -m2 * l1 * lc2 * q[1].sin();
    let mass = DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22]);
    let cor = DMatrix::from_row_slice(2, 2, &[h * qd[1], h * (qd[0] + qd[1]), -h * qd[0], 0.0]);
    let g1 = (m1 * lc1 + m2 * l1) * g * q[0].cos() + m2 * lc2 * g * (q[0] + q[1]).cos();
    let g2 = m2 * lc2 * g * (q[0] + q[1]).cos();
    Some((mass, cor, DVector::from_vec(vec![g1, g2])))
}

fn fd_jacobian(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let eps = 1e-7;
    let n = q.len();
    let mut j = DMatrix::zeros(6, n);
    let pose = forward_kinematics(model, q).expect("dimension checked");
    for k in 0..n {
        let mut qp = q.clone();
        qp[k] += eps;
        let pp = forward_kinematics(model, &qp).expect("dimension checked");
        let dp = (pp.translation.vector - pose.translation.vector) / eps;
        let dr = (pp.rotation * pose.rotation.inverse()).scaled_axis() / eps;
        for r in 0..3 {
            j[(r, k)] = dp[r];
            j[(r + 3, k)] = dr[r];
        }
    }
    j
}

pub fn cmd_check(path: &Path, states: usize, seed: u64) -> ExitCode {
    let model = match RobotModel::load(path) {
        Ok(m) => m,
        Err(ModelError::Invalid { field, reason }) => {
            println!("model: FAIL ({field}: {reason})");
            println!("spd: FAIL");
            return ExitCode::from(EXIT_FAULT);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let n = model.n_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symmetry = Check::new("symmetry", SYMMETRY_TOL);
    let mut spd = Check::new("spd", 0.0);
    let mut skew = Check::new("skew-symmetry", SKEW_TOL);
    let mut jac = Check::new("jacobian", JACOBIAN_TOL);
    let mut closed = Check::new("closed-form", CLOSED_FORM_TOL);
    let mut has_closed_form = false;

    for _ in 0..states {
        let q = DVector::from_iterator(n, model.links.iter().map(|l| rng.gen_range(l.q_min..l.q_max)));
        let qd = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.5..1.5)));
        let m = mass_matrix(&model, &q).expect("dimension checked");
        symmetry.record((&m - m.transpose()).amax());
        spd.record(if m.clone().cholesky().is_some() { 0.0 } else { 1.0 });
        let state = match RobotState::new(&model, q.clone(), qd.clone()) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let h = 1e-6;
        let mdot = (mass_matrix(&model, &(&q + &qd * h)).expect("dimension checked")
            - mass_matrix(&model, &(&q - &qd * h)).expect("dimension checked"))
            / (2.0 * h);
        let s = mdot - state.coriolis() * 2.0;
        skew.record((&s + s.transpose()).amax());
        let j = jacobian(&model, &q).expect("dimension checked");
        jac.record((j - fd_jacobian(&model, &q)).amax());
        if let Some((mc, cc, gc)) = planar_closed_form(&model, &q, &qd) {
            has_closed_form = true;
            let err = (state.mass() - mc).amax().max((state.coriolis() - cc).amax()).max((state.gravity() - gc).amax());
            closed.record(err);
        }
    }

    let mut checks = vec![symmetry, spd, skew, jac];
    if has_closed_form {
        checks.push(closed);
    }
    let mut failed = false;
    for c in &checks {
        let verdict = if c.failed { "FAIL" } else { "pass" };
        println!("{}: {verdict} (worst {:.3e}, tol {:.0e})", c.name, c.worst, c.tol);
        failed |= c.failed;
    }
    if failed { ExitCode::from(EXIT_FAULT) } else { ExitCode::SUCCESS }
}
