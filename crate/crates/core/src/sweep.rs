//! Data-parallel helpers for scenario grids and per-record audits.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it everything runs on the calling thread. `CBF_HQP_THREADS` caps
//! the pool size.

use crate::control::Mode;
use crate::model::RobotModel;
use crate::sim::{run_scenario, RunLog, Scenario, SimError};

pub const THREADS_ENV: &str = "CBF_HQP_THREADS";

/// Thread cap from the environment; `None` when unset or not a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub fn map_sequential<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.par_iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}

/// Order-preserving map, parallel when the feature is enabled.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Every (mode, gamma) variant of a base scenario, modes outermost.
pub fn grid(base: &Scenario, modes: &[Mode], gammas: &[f64]) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(modes.len() * gammas.len());
    for &mode in modes {
        for &gamma in gammas {
            let mut s = base.clone();
            s.mode = mode;
            s.cbf.gamma = gamma;
            out.push(s);
        }
    }
    out
}

pub fn run_all(model: &RobotModel, scenarios: &[Scenario]) -> Vec<Result<RunLog, SimError>> {
    par_map(scenarios, |s| run_scenario(s, model))
}
