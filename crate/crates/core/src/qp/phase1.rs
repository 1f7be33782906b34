//! Feasibility phase: Euclidean projection of a point onto `{ y : G y >= h }`.
//!
//! This is the Goldfarb-Idnani dual active-set method specialised to an
//! identity Hessian. It either returns the projection together with a linearly
//! independent set of active rows, or proves the polytope empty. A row that is
//! linearly dependent on the active set and violated by no more than the
//! feasibility tolerance (relative to its right-hand side) is left out of the
//! active set instead of failing.

use nalgebra::{DMatrix, DVector};

use super::linalg::{lstsq, null_space};
use super::FEASIBILITY_TOL;

/// Rows of `g` are expected to have unit norm; violations below this are ignored.
const VIOLATION_TOL: f64 = 1e-11;

fn tolerance(h: f64) -> f64 {
    FEASIBILITY_TOL * (1.0 + h.abs())
}

pub(crate) fn project(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    start: &DVector<f64>,
) -> Option<(DVector<f64>, Vec<usize>)> {
    let r = start.len();
    let m = h.len();
    let mut x = start.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut tolerated: Vec<usize> = Vec::new();
    let max_outer = 10 * (m + r) + 50;

    for _ in 0..max_outer {
        let slack = g * &x - h;
        let candidate = (0..m)
            .filter(|i| !active.contains(i) && !tolerated.contains(i))
            .min_by(|&a, &b| slack[a].total_cmp(&slack[b]));
        let done = match candidate {
            None => true,
            Some(p) => slack[p] >= -VIOLATION_TOL,
        };
        if done {
            return tolerated.iter().all(|&i| slack[i] >= -tolerance(h[i])).then_some((x, active));
        }
        let p = candidate.expect("checked above");
        let np = g.row(p).transpose();
        let mut mult_plus = mult.clone();
        mult_plus.push(0.0);

        loop {
            let q = active.len();
            let normals = DMatrix::from_fn(r, q, |i, k| g[(active[k], i)]);
            // r = N^+ n_p, z = (I - N N^+) n_p
            let coef = if q == 0 { DVector::zeros(0) } else { lstsq(&normals, &np) };
            let z = if q == 0 {
                np.clone()
            } else {
                let basis = null_space(&normals.transpose(), r);
                &basis * (basis.transpose() * &np)
            };

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if coef[k] > 1e-14 {
                    let t = mult_plus[k] / coef[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let sp = g.row(p).dot(&x.transpose()) - h[p];
            let t2 = if z.amax() > 1e-12 && zn > 0.0 { (-sp / zn).max(0.0) } else { f64::INFINITY };

            let t = t1.min(t2);
            if !t.is_finite() {
                if sp >= -tolerance(h[p]) {
                    tolerated.push(p);
                    mult_plus.pop();
                    mult = mult_plus;
                    break;
                }
                return None;
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for k in 0..q {
                mult_plus[k] -= t * coef[k];
            }
            mult_plus[q] += t;

            if t2 <= t1 {
                active.push(p);
                mult = mult_plus;
                break;
            }
            let k = drop.expect("partial step always names a row");
            active.remove(k);
            mult_plus.remove(k);
        }
    }
    None
}
