//! Small SVD helpers shared by the solver and the oracle.
//!
//! The decomposition itself comes from faer, whose SVD stays accurate on the
//! rank-deficient and zero-row matrices that stacked task rows produce.

use nalgebra::{DMatrix, DVector};

const RANK_TOL: f64 = 1e-11;

/// Full SVD `a = U S V'` with `U` m x m, `V` n x n and `min(m, n)` singular values.
struct FullSvd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

impl FullSvd {
    fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
        let svd = fa.svd().expect("SVD of finite data converges");
        let (fu, fv, fs) = (svd.U(), svd.V(), svd.S());
        Self {
            u: DMatrix::from_fn(m, m, |i, j| fu[(i, j)]),
            s: (0..m.min(n)).map(|k| fs[k]).collect(),
            v: DMatrix::from_fn(n, n, |i, j| fv[(i, j)]),
        }
    }

    /// Indices of singular values above the relative rank tolerance.
    fn range(&self) -> Vec<usize> {
        let smax = self.s.iter().fold(0.0_f64, |m, &v| m.max(v));
        (0..self.s.len())
            .filter(|&i| self.s[i] > RANK_TOL * smax && self.s[i] > f64::MIN_POSITIVE)
            .collect()
    }
}

/// Orthonormal basis (columns) of the null space of `a`, which has `ncols` columns.
pub(crate) fn null_space(a: &DMatrix<f64>, ncols: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    let svd = FullSvd::new(a);
    let range = svd.range();
    let null: Vec<usize> = (0..ncols).filter(|i| !range.contains(i)).collect();
    DMatrix::from_fn(ncols, null.len(), |r, c| svd.v[(r, null[c])])
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return DVector::zeros(n);
    }
    let svd = FullSvd::new(a);
    let mut x = DVector::zeros(n);
    for i in svd.range() {
        let coef = svd.u.column(i).dot(b) / svd.s[i];
        x += svd.v.column(i) * coef;
    }
    x
}

/// Parameterization `z = z0 + basis * y` of `{ z : a z = b }` (least-squares
/// sense when inconsistent; `residual` reports how far off that is).
pub(crate) struct EqualityElimination {
    pub z0: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub residual: f64,
}

impl EqualityElimination {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>, n: usize) -> Self {
        if a.nrows() == 0 {
            return Self { z0: DVector::zeros(n), basis: DMatrix::identity(n, n), residual: 0.0 };
        }
        let z0 = lstsq(a, b);
        let residual = (a * &z0 - b).amax();
        let basis = null_space(a, n);
        Self { z0, basis, residual }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_rank_deficient_rows() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let z = null_space(&a, 3);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-14);
        assert!((z.transpose() * &z - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn padded_rank_deficient_rows_stay_accurate() {
        // Zero rows on top of a rank-deficient block.
        let mut a = DMatrix::zeros(8, 8);
        for i in 0..6 {
            a[(i, i)] = 1.0;
            a[(i, 6)] = 0.3 * i as f64;
        }
        let b = &a * DVector::from_fn(8, |i, _| i as f64 - 3.0);
        let x = lstsq(&a, &b);
        assert!((&a * x - b).amax() < 1e-13);
        let z = null_space(&a, 8);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-14);
    }

    #[test]
    fn lstsq_min_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq(&a, &DVector::from_vec(vec![2.0]));
        assert!((x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-14);
    }
}
