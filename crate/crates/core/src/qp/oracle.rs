//! Exhaustive active-set enumeration for small QPs.
//!
//! Every subset of inequality rows (up to the problem dimension) is treated as
//! a set of equalities; each resulting equality-constrained problem is solved
//! in closed form and the best primal-feasible candidate wins. The global
//! minimizer of the (regularized, strictly convex) problem is always one of the
//! candidates, so the search is exact. Only meant for tests.

use nalgebra::{DMatrix, DVector};

use super::linalg::{lstsq, EqualityElimination};
use super::{QpError, QpProblem, QpSolution, QpStatus};

pub const MAX_VARS: usize = 8;
pub const MAX_ROWS: usize = 12;

/// Candidates within this of satisfying every row count as feasible.
const ORACLE_TOL: f64 = 1e-9;

pub fn oracle_solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n();
    let m = problem.b_in.len();
    if n > MAX_VARS || m > MAX_ROWS {
        return Err(QpError::SizeExceeded { vars: n, rows: m });
    }
    let (hr, fr) = problem.regularized();
    let reg_obj = |z: &DVector<f64>| 0.5 * z.dot(&(&hr * z)) + fr.dot(z);

    let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    let mut visited = 0;
    for mask in 0u32..(1u32 << m) {
        if mask.count_ones() as usize > n {
            continue;
        }
        visited += 1;
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let rows = problem.b_eq.len() + subset.len();
        let mut e = DMatrix::zeros(rows, n);
        let mut rhs = DVector::zeros(rows);
        for i in 0..problem.b_eq.len() {
            e.row_mut(i).copy_from(&problem.a_eq.row(i));
            rhs[i] = problem.b_eq[i];
        }
        for (k, &i) in subset.iter().enumerate() {
            let r = problem.b_eq.len() + k;
            e.row_mut(r).copy_from(&problem.a_in.row(i));
            rhs[r] = problem.b_in[i];
        }
        let elim = EqualityElimination::new(&e, &rhs, n);
        if elim.residual > ORACLE_TOL {
            continue;
        }
        let z = if elim.basis.ncols() == 0 {
            elim.z0.clone()
        } else {
            let hy = elim.basis.transpose() * &hr * &elim.basis;
            let gy = elim.basis.transpose() * (&hr * &elim.z0 + &fr);
            let y = match hy.clone().cholesky() {
                Some(ch) => -ch.solve(&gy),
                None => -lstsq(&hy, &gy),
            };
            &elim.z0 + &elim.basis * y
        };
        if problem.equality_residual(&z) > ORACLE_TOL || problem.inequality_violation(&z) > ORACLE_TOL {
            continue;
        }
        let obj = reg_obj(&z);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, z, subset));
        }
    }

    Ok(match best {
        Some((_, z, active_set)) => QpSolution {
            objective: problem.objective(&z),
            z,
            status: QpStatus::Optimal,
            active_set,
            iterations: visited,
            eq_multipliers: DVector::zeros(problem.b_eq.len()),
            in_multipliers: DVector::zeros(m),
        },
        None => QpSolution {
            objective: f64::NAN,
            z: DVector::zeros(n),
            status: QpStatus::Infeasible,
            active_set: Vec::new(),
            iterations: visited,
            eq_multipliers: DVector::zeros(problem.b_eq.len()),
            in_multipliers: DVector::zeros(m),
        },
    })
}
