use super::oracle::oracle_solve;
use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

/// min ||z||^2, z >= 1
fn halfspace() -> QpProblem {
    QpProblem::new(dm(1, 1, &[2.0]), dv(&[0.0])).with_inequalities(dm(1, 1, &[1.0]), dv(&[1.0]))
}

/// min ||z - [1,1]||^2, z1 + z2 = 0
fn line() -> QpProblem {
    QpProblem::new(dm(2, 2, &[2.0, 0.0, 0.0, 2.0]), dv(&[-2.0, -2.0]))
        .with_equalities(dm(1, 2, &[1.0, 1.0]), dv(&[0.0]))
}

#[test]
fn projection_onto_halfspace() {
    let s = solve_qp(&halfspace()).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!((s.z[0] - 1.0).abs() < 1e-8);
    assert_eq!(s.active_set, vec![0]);
    let o = oracle_solve(&halfspace()).unwrap();
    assert!((o.z[0] - s.z[0]).abs() < 1e-8);
}

#[test]
fn projection_onto_line() {
    let s = solve_qp(&line()).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!(s.z.amax() < 1e-8);
    let o = oracle_solve(&line()).unwrap();
    assert!((o.z - s.z).amax() < 1e-8);
}

#[test]
fn unconstrained_minimum_is_origin() {
    let p = QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(3));
    let s = solve_qp(&p).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert_eq!(s.z, DVector::zeros(3));
    assert_eq!(oracle_solve(&p).unwrap().z, DVector::zeros(3));
}

#[test]
fn contradictory_rows_are_infeasible() {
    let p = QpProblem::new(dm(1, 1, &[1.0]), dv(&[0.0]))
        .with_inequalities(dm(2, 1, &[1.0, -1.0]), dv(&[1.0, 1.0]));
    assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    assert_eq!(oracle_solve(&p).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn inconsistent_equalities_are_infeasible() {
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_equalities(dm(2, 2, &[1.0, 1.0, 2.0, 2.0]), dv(&[1.0, 3.0]));
    assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn redundant_equalities_are_absorbed() {
    // Same plane stated three times with scaling.
    let p = QpProblem::new(DMatrix::identity(3, 3), dv(&[-1.0, -2.0, -3.0])).with_equalities(
        dm(3, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0]),
        dv(&[1.0, 2.0, -1.0]),
    );
    let s = solve_qp(&p).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    assert!(p.equality_residual(&s.z) < 1e-12);
    let o = oracle_solve(&p).unwrap();
    assert!((s.z - o.z).amax() < 1e-8);
}

#[test]
fn semidefinite_cost_picks_min_norm_point() {
    // Cost only sees z1; z2 is free and should come out at the anchor (origin).
    let p = QpProblem::new(dm(2, 2, &[1.0, 0.0, 0.0, 0.0]), dv(&[-1.0, 0.0]));
    let s = solve_qp(&p).unwrap();
    assert!((s.z[0] - 1.0).abs() < 1e-8);
    assert!(s.z[1].abs() < 1e-12);
    let anchored = p.clone().with_anchor(dv(&[0.0, 4.0]));
    let s = solve_qp(&anchored).unwrap();
    assert!((s.z[1] - 4.0).abs() < 1e-8);
}

#[test]
fn oracle_rejects_large_problems() {
    let p = QpProblem::new(DMatrix::identity(9, 9), DVector::zeros(9));
    assert!(matches!(oracle_solve(&p), Err(QpError::SizeExceeded { .. })));
}

#[test]
fn malformed_problems_are_rejected() {
    let p = QpProblem::new(dm(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
    assert!(matches!(solve_qp(&p), Err(QpError::NotSymmetric(_))));
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
    assert!(matches!(solve_qp(&p), Err(QpError::Dimension(_))));
}

/// Random instance; `feasible` decides whether the inequality set is made contradictory.
pub(crate) fn random_problem(rng: &mut ChaCha8Rng, feasible: bool) -> QpProblem {
    let n = rng.gen_range(1..=6);
    let psd = rng.gen_bool(0.2);
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut h = b.transpose() * &b;
    let f = if psd {
        // Rank-deficient cost with f in its range, so the true problem is bounded.
        let k = rng.gen_range(1..=n);
        let bk = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
        h = bk.transpose() * &bk;
        &h * DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    } else {
        h += DMatrix::identity(n, n) * 0.1;
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    };
    let z_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let m_in = rng.gen_range(0..=6);
    let a_in = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut b_in = &a_in * &z_feas;
    for v in b_in.iter_mut() {
        if rng.gen_bool(0.7) {
            *v -= rng.gen_range(0.0..1.0);
        }
    }
    let m_eq = rng.gen_range(0..=n.saturating_sub(1).min(2));
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &z_feas;
    let mut p = QpProblem::new(h, f).with_equalities(a_eq, b_eq);
    if feasible {
        p = p.with_inequalities(a_in, b_in);
    } else {
        // Append a row and its negation that cannot both hold.
        let row = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = DMatrix::zeros(m_in + 2, n);
        a.rows_mut(0, m_in).copy_from(&a_in);
        a.rows_mut(m_in, 1).copy_from(&row);
        a.rows_mut(m_in + 1, 1).copy_from(&(-&row));
        let mut bb = DVector::zeros(m_in + 2);
        bb.rows_mut(0, m_in).copy_from(&b_in);
        bb[m_in] = 0.5;
        bb[m_in + 1] = -0.2;
        p = p.with_inequalities(a, bb);
    }
    p
}

fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> (f64, f64, f64) {
    let grad = &p.h * &s.z + &p.f;
    let stat = grad - p.a_eq.transpose() * &s.eq_multipliers - p.a_in.transpose() * &s.in_multipliers;
    let slack = &p.a_in * &s.z - &p.b_in;
    let comp = s
        .in_multipliers
        .iter()
        .zip(slack.iter())
        .fold(0.0_f64, |m, (mu, sl)| m.max((mu * sl).abs()));
    let mu_min = s.in_multipliers.iter().fold(0.0_f64, |m, &v| m.min(v));
    (stat.amax(), comp, mu_min)
}

#[test]
fn kkt_conditions_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        let p = random_problem(&mut rng, true);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(p.equality_residual(&s.z) <= 1e-8);
        assert!(p.inequality_violation(&s.z) <= 1e-8);
        let (stat, comp, mu_min) = kkt_residuals(&p, &s);
        assert!(stat <= 1e-6, "stationarity {stat}");
        assert!(comp <= 1e-6, "complementarity {comp}");
        assert!(mu_min >= -1e-8);
    }
}

#[test]
fn agrees_with_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..400 {
        let p = random_problem(&mut rng, i % 5 != 0);
        let s = solve_qp(&p).unwrap();
        let o = oracle_solve(&p).unwrap();
        assert_eq!(s.status, o.status, "instance {i}");
        if o.status == QpStatus::Optimal {
            assert!((s.objective - o.objective).abs() <= 1e-6, "instance {i}");
        }
    }
}

#[test]
fn solver_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_problem(&mut rng, true);
    let a = solve_qp(&p).unwrap();
    let b = solve_qp(&p).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn box_projection_is_clamp(target in proptest::collection::vec(-5.0..5.0f64, 1..6)) {
        // min 1/2|z - t|^2 s.t. -1 <= z <= 1 is a clamp.
        let n = target.len();
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        let p = QpProblem::new(DMatrix::identity(n, n), -DVector::from_vec(target.clone()))
            .with_inequalities(a, DVector::from_element(2 * n, -1.0));
        let s = solve_qp(&p).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        for (z, t) in s.z.iter().zip(&target) {
            prop_assert!((z - t.clamp(-1.0, 1.0)).abs() < 1e-8);
        }
    }
}
