//! Each strict barrier family, enforced alone, keeps its safe set along long runs.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbf_hqp::control::Mode;
use cbf_hqp::dynamics::RobotState;
use cbf_hqp::model::RobotModel;
use cbf_hqp::sim::{run_scenario, EquilibriumStep, Scenario};
use cbf_hqp::sweep::par_map;
use cbf_hqp::tasks::{plane_clearance, StrictFamilies};

const STATES: usize = 20;
const DURATION: f64 = 10.0;
const H_FLOOR: f64 = -1e-3;

#[derive(Clone, Copy, Debug)]
enum Family {
    Velocity,
    Position,
    Collision,
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn families(f: Family) -> StrictFamilies {
    StrictFamilies {
        torque: false,
        velocity: matches!(f, Family::Velocity),
        position: matches!(f, Family::Position),
        collision: matches!(f, Family::Collision),
    }
}

/// Random interior starts, each driven by an equilibrium jump toward the family's boundary.
fn scenarios(model: &RobotModel, family: Family, seed: u64) -> Vec<Scenario> {
    let mut base = Scenario::load(root().join("experiments/step.cfg")).unwrap();
    base.mode = Mode::SingleQp;
    base.duration = DURATION;
    // The single-layer QP keeps its energy row; only the strict family varies.
    base.cbf.families = families(family);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < STATES {
        let q0 = DVector::from_iterator(
            7,
            model.links.iter().map(|l| {
                let mid = 0.5 * (l.q_min + l.q_max);
                let half = 0.3 * (l.q_max - l.q_min);
                rng.gen_range(mid - half..mid + half)
            }),
        );
        let qd0 = DVector::from_iterator(7, model.links.iter().map(|l| rng.gen_range(-0.3..0.3) * l.v_max));
        let state = RobotState::new(model, q0.clone(), qd0.clone()).unwrap();
        if plane_clearance(&state, &base.cbf) < 0.1 {
            continue;
        }
        let offset = match family {
            // Descend to 5 cm past the clearance boundary.
            Family::Collision => Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                -(plane_clearance(&state, &base.cbf) + 0.05),
            ),
            _ => Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..-1.0)).normalize() * 0.6,
        };
        let mut s = base.clone();
        s.q0 = q0;
        s.qd0 = qd0;
        s.equilibrium = vec![EquilibriumStep { t: 0.2, offset: offset.into() }];
        out.push(s);
    }
    out
}

fn barrier(model: &RobotModel, s: &Scenario, family: Family, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    match family {
        Family::Velocity => model
            .links
            .iter()
            .zip(qd.iter())
            .map(|(l, v)| l.v_max - v.abs())
            .fold(f64::INFINITY, f64::min),
        Family::Position => model
            .links
            .iter()
            .zip(q.iter())
            .map(|(l, p)| (l.q_max - p).min(p - l.q_min))
            .fold(f64::INFINITY, f64::min),
        Family::Collision => plane_clearance(&RobotState::new(model, q.clone(), qd.clone()).unwrap(), &s.cbf),
    }
}

fn check(family: Family, seed: u64) {
    let model = RobotModel::load(root().join("models/panda.cfg")).unwrap();
    let runs = scenarios(&model, family, seed);
    let lows = par_map(&runs, |s| {
        let log = run_scenario(s, &model).unwrap();
        assert!(log.fault.is_none(), "{family:?}: {:?}", log.fault);
        log.records
            .iter()
            .map(|r| barrier(&model, s, family, &r.q, &r.qd))
            .fold(f64::INFINITY, f64::min)
    });
    let worst = lows.iter().copied().fold(f64::INFINITY, f64::min);
    println!("{family:?}: min h over {STATES} runs = {worst:.4e}");
    assert!(worst >= H_FLOOR, "{family:?}: min h = {worst:e}");
}

#[test]
fn velocity_barrier_alone_is_forward_invariant() {
    check(Family::Velocity, 1);
}

#[test]
fn position_barrier_alone_is_forward_invariant() {
    check(Family::Position, 2);
}

#[test]
fn collision_barrier_alone_is_forward_invariant() {
    check(Family::Collision, 3);
}
