//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 z' H z + f' z
//!     subject to  A_eq z  = b_eq
//!                 A_in z >= b_in
//! ```
//!
//! with `H` symmetric positive semidefinite. A Tikhonov term
//! `REGULARIZATION/2 * |z - anchor|^2` is always added so the minimizer is
//! unique; among equally good points it selects the one closest to the anchor
//! (the origin by default).
//!
//! [`solve_qp`] eliminates the equalities with an SVD null-space basis, finds
//! a feasible point by projecting onto the inequality polytope with a dual
//! (Goldfarb-Idnani) method, then runs a primal active-set method from there.
//! [`oracle::oracle_solve`] is an exhaustive reference for small problems.

pub(crate) mod linalg;
pub mod oracle;
mod phase1;

use nalgebra::{DMatrix, DVector};

use linalg::{lstsq, null_space, EqualityElimination};

pub const REGULARIZATION: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

/// Rows whose reduced normal is this small relative to the original row are
/// constant on the equality manifold and only checked for consistency.
const DEGENERATE_ROW: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite problem data")]
    NonFinite,
    #[error("problem too large for the exhaustive oracle: {vars} variables, {rows} inequality rows")]
    SizeExceeded { vars: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Point the regularization pulls toward; the origin when `None`.
    pub anchor: Option<DVector<f64>>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            anchor: None,
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_anchor(mut self, anchor: DVector<f64>) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let dim = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.h.shape() != (n, n) {
            return dim("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return dim("equality block");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return dim("inequality block");
        }
        if self.anchor.as_ref().is_some_and(|a| a.len() != n) {
            return dim("anchor");
        }
        let finite = self.h.iter().all(|x| x.is_finite())
            && self.f.iter().all(|x| x.is_finite())
            && self.a_eq.iter().all(|x| x.is_finite())
            && self.b_eq.iter().all(|x| x.is_finite())
            && self.a_in.iter().all(|x| x.is_finite())
            && self.b_in.iter().all(|x| x.is_finite())
            && self.anchor.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let asym = if n == 0 { 0.0 } else { (&self.h - self.h.transpose()).amax() };
        if asym > 1e-12 * (1.0 + self.h.amax()) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }

    /// `1/2 z'Hz + f'z` without the regularization term.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Regularized Hessian and linear term actually minimized by the solvers.
    pub(crate) fn regularized(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let h = &self.h + DMatrix::identity(n, n) * REGULARIZATION;
        let f = match &self.anchor {
            Some(a) => &self.f - a * REGULARIZATION,
            None => self.f.clone(),
        };
        (h, f)
    }

    pub fn equality_residual(&self, z: &DVector<f64>) -> f64 {
        if self.b_eq.is_empty() {
            return 0.0;
        }
        (&self.a_eq * z - &self.b_eq).amax()
    }

    /// Largest amount by which an inequality row is violated (0 when all hold).
    pub fn inequality_violation(&self, z: &DVector<f64>) -> f64 {
        (&self.b_in - &self.a_in * z).iter().fold(0.0_f64, |m, &v| m.max(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    /// Inequality rows in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Unregularized objective at `z`.
    pub objective: f64,
    pub iterations: usize,
    pub eq_multipliers: DVector<f64>,
    pub in_multipliers: DVector<f64>,
}

impl QpSolution {
    fn failed(p: &QpProblem, z: DVector<f64>, status: QpStatus, iterations: usize) -> Self {
        Self {
            objective: p.objective(&z),
            z,
            status,
            active_set: Vec::new(),
            iterations,
            eq_multipliers: DVector::zeros(p.b_eq.len()),
            in_multipliers: DVector::zeros(p.b_in.len()),
        }
    }
}

/// Inequalities restricted to the equality manifold `z = z0 + Z y`, with unit-norm rows.
struct ReducedRows {
    g: DMatrix<f64>,
    h: DVector<f64>,
    /// Original row index and the norm it was divided by.
    origin: Vec<(usize, f64)>,
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n();
    let (hr, fr) = problem.regularized();

    let elim = EqualityElimination::new(&problem.a_eq, &problem.b_eq, n);
    if elim.residual > FEASIBILITY_TOL {
        return Ok(QpSolution::failed(problem, elim.z0, QpStatus::Infeasible, 0));
    }
    let basis = &elim.basis;
    let z0 = &elim.z0;

    // Inequalities on the manifold.
    let g_full = &problem.a_in * basis;
    let h_full = &problem.b_in - &problem.a_in * z0;
    let mut kept = Vec::new();
    for i in 0..problem.b_in.len() {
        let row_norm = problem.a_in.row(i).norm();
        let red_norm = g_full.row(i).norm();
        if red_norm <= DEGENERATE_ROW * (1.0 + row_norm) {
            if h_full[i] > FEASIBILITY_TOL {
                return Ok(QpSolution::failed(problem, z0.clone(), QpStatus::Infeasible, 0));
            }
        } else {
            kept.push((i, red_norm));
        }
    }
    let r = basis.ncols();
    let rows = ReducedRows {
        g: DMatrix::from_fn(kept.len(), r, |k, j| g_full[(kept[k].0, j)] / kept[k].1),
        h: DVector::from_fn(kept.len(), |k, _| h_full[kept[k].0] / kept[k].1),
        origin: kept,
    };

    let hy = basis.transpose() * &hr * basis;
    let gy0 = basis.transpose() * (&hr * z0 + &fr);

    // Unconstrained minimizer on the manifold as the starting guess.
    let y_start = if r == 0 {
        DVector::zeros(0)
    } else {
        match hy.clone().cholesky() {
            Some(ch) => -ch.solve(&gy0),
            None => -lstsq(&hy, &gy0),
        }
    };

    let Some((y_feas, working)) = phase1::project(&rows.g, &rows.h, &y_start) else {
        return Ok(QpSolution::failed(problem, z0 + basis * &y_start, QpStatus::Infeasible, 0));
    };

    let outcome = primal_active_set(&hy, &gy0, &rows, y_feas, working);
    let z = z0 + basis * &outcome.y;
    let status = outcome.status;

    // Multipliers in the original row scaling.
    let mut in_mult = DVector::zeros(problem.b_in.len());
    for (&w, &mu) in outcome.working.iter().zip(outcome.multipliers.iter()) {
        let (orig, scale) = rows.origin[w];
        in_mult[orig] = mu / scale;
    }
    let eq_mult = if problem.b_eq.is_empty() {
        DVector::zeros(0)
    } else {
        let resid = &hr * &z + &fr - problem.a_in.transpose() * &in_mult;
        lstsq(&problem.a_eq.transpose(), &resid)
    };
    let mut active_set: Vec<usize> = outcome.working.iter().map(|&w| rows.origin[w].0).collect();
    active_set.sort_unstable();

    Ok(QpSolution {
        objective: problem.objective(&z),
        z,
        status,
        active_set,
        iterations: outcome.iterations,
        eq_multipliers: eq_mult,
        in_multipliers: in_mult,
    })
}

struct PrimalOutcome {
    y: DVector<f64>,
    working: Vec<usize>,
    multipliers: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

fn primal_active_set(
    hy: &DMatrix<f64>,
    gy0: &DVector<f64>,
    rows: &ReducedRows,
    mut y: DVector<f64>,
    mut working: Vec<usize>,
) -> PrimalOutcome {
    let r = y.len();
    let m = rows.h.len();
    let mut at_subspace_min = false;

    for iter in 1..=MAX_ITERATIONS {
        let grad = hy * &y + gy0;
        let wrows = DMatrix::from_fn(working.len(), r, |k, j| rows.g[(working[k], j)]);

        if !at_subspace_min {
            let zw = if working.is_empty() { DMatrix::identity(r, r) } else { null_space(&wrows, r) };
            let p = if zw.ncols() == 0 {
                DVector::zeros(r)
            } else {
                let reduced = zw.transpose() * hy * &zw;
                let rhs = zw.transpose() * &grad;
                let step = match reduced.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => lstsq(&reduced, &rhs),
                };
                -(&zw * step)
            };
            let pnorm = p.amax();
            if pnorm > 1e-14 * (1.0 + y.amax()) {
                let mut alpha = 1.0;
                let mut block = None;
                for i in 0..m {
                    if working.contains(&i) {
                        continue;
                    }
                    let gp = rows.g.row(i).dot(&p.transpose());
                    if gp < -1e-13 * pnorm {
                        let slack = (rows.g.row(i).dot(&y.transpose()) - rows.h[i]).max(0.0);
                        let t = slack / -gp;
                        if t < alpha {
                            alpha = t;
                            block = Some(i);
                        }
                    }
                }
                y += &p * alpha;
                match block {
                    Some(i) => working.push(i),
                    None => at_subspace_min = true,
                }
                continue;
            }
        }

        // At the minimizer over the current working set: check multiplier signs.
        if working.is_empty() {
            return PrimalOutcome { y, working, multipliers: Vec::new(), status: QpStatus::Optimal, iterations: iter };
        }
        let mu = lstsq(&wrows.transpose(), &grad);
        let tol = 1e-10 * (1.0 + grad.amax());
        let (jmin, &mumin) = mu
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("working set is nonempty");
        if mumin >= -tol {
            let multipliers = mu.iter().map(|&v| v.max(0.0)).collect();
            return PrimalOutcome { y, working, multipliers, status: QpStatus::Optimal, iterations: iter };
        }
        working.remove(jmin);
        at_subspace_min = false;
    }
    let multipliers = vec![0.0; working.len()];
    PrimalOutcome { y, working, multipliers, status: QpStatus::MaxIterations, iterations: MAX_ITERATIONS }
}

#[cfg(test)]
mod tests;
