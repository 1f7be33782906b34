//! Fixed-step closed-loop simulation, scenario files and run logs.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use serde::Deserialize;

use crate::control::{projections, step, ControlError, ControllerState, ImpedanceParams, Mode};
use crate::dynamics::{forward_kinematics, mass_matrix, RobotState};
use crate::model::{ModelError, RobotModel};
use crate::tasks::{CbfParams, StrictFamilies};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("log format: {0}")]
    Log(String),
}

/// Equilibrium offset from the initial end-effector position, applied from `t` on.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumStep {
    pub t: f64,
    pub offset: [f64; 3],
}

/// End-effector wrench `amplitude * sin(2 pi frequency t + phase)` for `t >= start`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineWrench {
    pub amplitude: [f64; 6],
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub start: f64,
}

impl SineWrench {
    pub fn at(&self, t: f64) -> DVector<f64> {
        if t < self.start {
            return DVector::zeros(6);
        }
        let s = (2.0 * std::f64::consts::PI * self.frequency * t + self.phase).sin();
        DVector::from_iterator(6, self.amplitude.iter().map(|a| a * s))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImpedanceFile {
    k_trans: [f64; 3],
    k_rot: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CbfFile {
    gamma: Option<f64>,
    gamma_velocity: Option<f64>,
    k_max: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    plane_normal: Option<[f64; 3]>,
    plane_offset: Option<f64>,
    d_min: Option<f64>,
    rho: Option<f64>,
    #[serde(default)]
    families: StrictFamilies,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    model: String,
    duration: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_mode")]
    mode: String,
    q0: Vec<f64>,
    #[serde(default)]
    qd0: Option<Vec<f64>>,
    impedance: ImpedanceFile,
    cbf: Option<CbfFile>,
    #[serde(default)]
    equilibrium: Vec<EquilibriumStep>,
    wrench: Option<SineWrench>,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_mode() -> String {
    Mode::HqpPerformance.as_str().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model_path: PathBuf,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
    pub k_trans: Vector3<f64>,
    pub k_rot: Vector3<f64>,
    pub equilibrium: Vec<EquilibriumStep>,
    pub wrench: Option<SineWrench>,
    pub duration: f64,
    pub dt: f64,
    pub cbf: CbfParams,
    pub rho: f64,
    pub mode: Mode,
}

impl Scenario {
    /// Parses a scenario; a relative model path is resolved against `base_dir`.
    pub fn from_config_str(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let mode = f.mode.parse::<Mode>().map_err(|reason| SimError::Invalid { field: "mode".into(), reason })?;
        let defaults = CbfParams::default();
        let c = f.cbf.unwrap_or(CbfFile {
            gamma: None,
            gamma_velocity: None,
            k_max: None,
            lambda1: None,
            lambda2: None,
            plane_normal: None,
            plane_offset: None,
            d_min: None,
            rho: None,
            families: StrictFamilies::default(),
        });
        let cbf = CbfParams {
            gamma: c.gamma.unwrap_or(defaults.gamma),
            gamma_velocity: c.gamma_velocity.unwrap_or(defaults.gamma_velocity),
            k_max: c.k_max.unwrap_or(defaults.k_max),
            lambda1: c.lambda1.unwrap_or(defaults.lambda1),
            lambda2: c.lambda2.unwrap_or(defaults.lambda2),
            plane_normal: c.plane_normal.map_or(defaults.plane_normal, Vector3::from),
            plane_offset: c.plane_offset.unwrap_or(defaults.plane_offset),
            d_min: c.d_min.unwrap_or(defaults.d_min),
            dt: f.dt,
            families: c.families,
        };
        let q0 = DVector::from_vec(f.q0);
        let qd0 = f.qd0.map_or_else(|| DVector::zeros(q0.len()), DVector::from_vec);
        let model_path = base_dir.join(&f.model);
        let s = Scenario {
            name: f.name,
            model_path,
            q0,
            qd0,
            k_trans: Vector3::from(f.impedance.k_trans),
            k_rot: Vector3::from(f.impedance.k_rot),
            equilibrium: f.equilibrium,
            wrench: f.wrench,
            duration: f.duration,
            dt: f.dt,
            cbf,
            rho: c.rho.unwrap_or(crate::hqp::RHO_DEFAULT),
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_config_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: &str, reason: &str| {
            Err(SimError::Invalid { field: field.into(), reason: reason.into() })
        };
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid("duration", "must be > 0");
        }
        if !(self.dt > 0.0 && self.dt < self.duration) {
            return invalid("dt", "must be > 0 and shorter than the duration");
        }
        if self.q0.len() != self.qd0.len() {
            return invalid("qd0", "length differs from q0");
        }
        if !(self.rho > 0.0) {
            return invalid("cbf.rho", "must be > 0");
        }
        if self.k_trans.iter().chain(self.k_rot.iter()).any(|&k| !(k > 0.0)) {
            return invalid("impedance", "stiffnesses must be > 0");
        }
        if let Some(w) = &self.wrench {
            if !(w.frequency >= 0.0) || w.amplitude.iter().any(|a| !a.is_finite()) {
                return invalid("wrench", "needs finite amplitude and frequency >= 0");
            }
        }
        self.cbf
            .validate()
            .map_err(|e| SimError::Invalid { field: "cbf".into(), reason: e.to_string() })
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn wrench_at(&self, t: f64) -> DVector<f64> {
        self.wrench.as_ref().map_or_else(|| DVector::zeros(6), |w| w.at(t))
    }

    /// Offset of the equilibrium from its initial position at time `t`.
    pub fn equilibrium_offset(&self, t: f64) -> Vector3<f64> {
        self.equilibrium
            .iter()
            .filter(|e| e.t <= t)
            .max_by(|a, b| a.t.total_cmp(&b.t))
            .map_or_else(Vector3::zeros, |e| Vector3::from(e.offset))
    }

    /// `<scenario>_<mode>_gamma<value>.csv`
    pub fn log_file_name(&self) -> String {
        format!("{}_{}_gamma{}.csv", self.name, self.mode, self.cbf.gamma)
    }
}

/// Semi-implicit Euler step under torque `u` and an end-effector wrench.
pub fn integrate_step(
    model: &RobotModel,
    state: &RobotState,
    u: &DVector<f64>,
    wrench: &DVector<f64>,
    dt: f64,
) -> Result<RobotState, SimError> {
    let tau_ext = state.jacobian().transpose() * wrench;
    let qdd = state.acceleration(u, &tau_ext);
    let qd = state.qd() + qdd * dt;
    let q = state.q() + &qd * dt;
    if !(q.iter().chain(qd.iter()).all(|v| v.is_finite())) {
        return Err(SimError::Invalid { field: "state".into(), reason: "non-finite after integration".into() });
    }
    Ok(RobotState::new(model, q, qd)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub u: DVector<f64>,
    pub tau_ext: DVector<f64>,
    pub k: f64,
    pub k_max: f64,
    pub k_max_eff: f64,
    pub delta: f64,
    pub wrench_dev: DVector<f64>,
    pub alpha_dev: f64,
    pub eq_residual: f64,
    pub damped: bool,
    pub statuses: String,
    pub active_strict: String,
    pub solve_us: f64,
}

impl LogRecord {
    /// Equal in every field except the wall-clock solve time.
    pub fn same_trajectory(&self, other: &LogRecord) -> bool {
        LogRecord { solve_us: 0.0, ..self.clone() } == LogRecord { solve_us: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub mode: Mode,
    pub gamma: f64,
    pub records: Vec<LogRecord>,
    /// Controller or integration fault that stopped the run early.
    pub fault: Option<String>,
}

pub fn run_scenario(scenario: &Scenario, model: &RobotModel) -> Result<RunLog, SimError> {
    scenario.validate()?;
    let mut state = RobotState::new(model, scenario.q0.clone(), scenario.qd0.clone())?;
    let pose0 = forward_kinematics(model, &scenario.q0)?;
    let impedance = ImpedanceParams {
        eq_position: pose0.translation.vector,
        eq_orientation: pose0.rotation,
        ..ImpedanceParams::new(scenario.k_trans, scenario.k_rot)
    };
    let mut ctrl = ControllerState::new(scenario.mode, scenario.cbf.clone(), impedance);
    ctrl.rho = scenario.rho;

    let steps = scenario.steps();
    let mut records = Vec::with_capacity(steps);
    let mut fault = None;
    for k in 0..steps {
        let t = k as f64 * scenario.dt;
        ctrl.impedance.eq_position = pose0.translation.vector + scenario.equilibrium_offset(t);
        let wrench = scenario.wrench_at(t);
        let tau_ext = state.jacobian().transpose() * &wrench;
        let started = Instant::now();
        let out = step(model, &state, &mut ctrl, &tau_ext)?;
        let solve_us = started.elapsed().as_secs_f64() * 1e6;
        records.push(LogRecord {
            t,
            q: state.q().clone(),
            qd: state.qd().clone(),
            u_nom: out.u_nom,
            u: out.u_applied.clone(),
            tau_ext,
            k: state.kinetic_energy(),
            k_max: scenario.cbf.k_max,
            k_max_eff: out.k_max_eff,
            delta: out.delta,
            wrench_dev: out.wrench_dev,
            alpha_dev: out.alpha_dev,
            eq_residual: out.eq_residual,
            damped: out.damped,
            statuses: out.statuses.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|"),
            active_strict: out.active_strict.join("|"),
            solve_us,
        });
        if let Some(f) = out.fault {
            fault = Some(format!("t = {t:.3} s: {f}"));
            break;
        }
        match integrate_step(model, &state, &out.u_applied, &wrench, scenario.dt) {
            Ok(next) => state = next,
            Err(e) => {
                fault = Some(format!("t = {t:.3} s: {e}"));
                break;
            }
        }
    }
    Ok(RunLog {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        gamma: scenario.cbf.gamma,
        records,
        fault,
    })
}

fn vector_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for p in ["q", "qd", "u_nom", "u", "tau_ext"] {
        h.extend(vector_columns(p, n));
    }
    h.extend(["K", "K_max", "K_max_eff", "delta"].map(String::from));
    h.extend(vector_columns("dW", 6));
    h.extend(["alpha_dev", "eq_residual", "damped", "statuses", "active_strict", "solve_us"].map(String::from));
    h
}

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_csv(log: &RunLog, out: impl Write) -> Result<(), SimError> {
    let n = log.records.first().map_or(0, |r| r.q.len());
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Log(e.to_string());
    w.write_record(header(n)).map_err(err)?;
    for r in &log.records {
        let mut row = vec![num(r.t)];
        for v in [&r.q, &r.qd, &r.u_nom, &r.u, &r.tau_ext] {
            row.extend(v.iter().map(|&x| num(x)));
        }
        row.extend([r.k, r.k_max, r.k_max_eff, r.delta].map(num));
        row.extend(r.wrench_dev.iter().map(|&x| num(x)));
        row.push(num(r.alpha_dev));
        row.push(num(r.eq_residual));
        row.push(u8::from(r.damped).to_string());
        row.push(r.statuses.clone());
        row.push(r.active_strict.clone());
        row.push(num(r.solve_us));
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| SimError::Log(e.to_string()))
}

pub fn save_csv(log: &RunLog, path: impl AsRef<Path>) -> Result<(), SimError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
    write_csv(log, std::io::BufWriter::new(file))
}

/// Reads records back from a log written by [`write_csv`].
pub fn read_csv(input: impl Read) -> Result<Vec<LogRecord>, SimError> {
    let mut rd = csv::Reader::from_reader(input);
    let err = |e: csv::Error| SimError::Log(e.to_string());
    let cols = rd.headers().map_err(err)?.len();
    // 1 + 5n + 4 + 6 + 6 columns
    if cols < 17 || (cols - 17) % 5 != 0 {
        return Err(SimError::Log(format!("unexpected column count {cols}")));
    }
    let n = (cols - 17) / 5;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(err)?;
        let f = |i: usize| -> Result<f64, SimError> {
            row[i].parse::<f64>().map_err(|e| SimError::Log(format!("column {i}: {e}")))
        };
        let vec_at = |start: usize, len: usize| -> Result<DVector<f64>, SimError> {
            Ok(DVector::from_vec((start..start + len).map(f).collect::<Result<_, _>>()?))
        };
        let base = 1 + 5 * n;
        out.push(LogRecord {
            t: f(0)?,
            q: vec_at(1, n)?,
            qd: vec_at(1 + n, n)?,
            u_nom: vec_at(1 + 2 * n, n)?,
            u: vec_at(1 + 3 * n, n)?,
            tau_ext: vec_at(1 + 4 * n, n)?,
            k: f(base)?,
            k_max: f(base + 1)?,
            k_max_eff: f(base + 2)?,
            delta: f(base + 3)?,
            wrench_dev: vec_at(base + 4, 6)?,
            alpha_dev: f(base + 10)?,
            eq_residual: f(base + 11)?,
            damped: &row[base + 12] == "1",
            statuses: row[base + 13].to_string(),
            active_strict: row[base + 14].to_string(),
            solve_us: f(base + 15)?,
        });
    }
    Ok(out)
}

/// Per-run figures of merit.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub max_k: f64,
    pub max_k_excess: f64,
    pub max_wrench_dev: f64,
    pub max_alpha_dev: f64,
    pub max_delta: f64,
    pub mean_solve_us: f64,
}

impl Summary {
    pub fn from_records(records: &[LogRecord]) -> Self {
        let fold = |f: &dyn Fn(&LogRecord) -> f64| records.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Summary {
            steps: records.len(),
            max_k: fold(&|r| r.k),
            max_k_excess: fold(&|r| r.k - r.k_max),
            max_wrench_dev: fold(&|r| r.wrench_dev.amax()),
            max_alpha_dev: fold(&|r| r.alpha_dev.abs()),
            max_delta: fold(&|r| r.delta),
            mean_solve_us: records.iter().map(|r| r.solve_us).sum::<f64>() / records.len().max(1) as f64,
        }
    }
}

/// Worst value of each post-run identity over a log.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Audit {
    /// `|(Mdot - 2C) + (Mdot - 2C)'|`, `Mdot` by central difference along `qd`.
    pub skew: f64,
    /// `|Kdot - qd'(u + tau_ext - g)|`, `Kdot` by central difference along the flow with the torque held.
    pub power: f64,
    pub idempotence: f64,
    pub consistency: f64,
    pub eq_residual: f64,
}

impl Audit {
    fn worst(self, o: Audit) -> Audit {
        Audit {
            skew: self.skew.max(o.skew),
            power: self.power.max(o.power),
            idempotence: self.idempotence.max(o.idempotence),
            consistency: self.consistency.max(o.consistency),
            eq_residual: self.eq_residual.max(o.eq_residual),
        }
    }
}

const FD_STEP: f64 = 1e-6;

pub fn audit_record(model: &RobotModel, r: &LogRecord) -> Result<Audit, SimError> {
    let s = RobotState::new(model, r.q.clone(), r.qd.clone())?;
    let h = FD_STEP;
    let m_plus = mass_matrix(model, &(&r.q + &r.qd * h))?;
    let m_minus = mass_matrix(model, &(&r.q - &r.qd * h))?;
    let mdot = (m_plus - m_minus) / (2.0 * h);
    let skew_mat = mdot - s.coriolis() * 2.0;
    let skew = (&skew_mat + skew_mat.transpose()).amax();

    let qdd = s.acceleration(&r.u, &r.tau_ext);
    let kin = |sign: f64| -> Result<f64, SimError> {
        let q = &r.q + &r.qd * (sign * h);
        let qd = &r.qd + &qdd * (sign * h);
        let m = mass_matrix(model, &q)?;
        Ok(0.5 * qd.dot(&(m * &qd)))
    };
    let kdot = (kin(1.0)? - kin(-1.0)?) / (2.0 * h);
    let power = (kdot - r.qd.dot(&(&r.u + &r.tau_ext - s.gravity()))).abs();

    // Damped steps use a regularized inverse, so the projector identities do not hold there.
    let (idempotence, consistency) = if r.damped {
        (0.0, 0.0)
    } else {
        let ts = projections(&s);
        ((&ts.p * &ts.p - &ts.p).amax(), (s.jacobian() * s.solve_mass_mat(&ts.n)).amax())
    };
    Ok(Audit { skew, power, idempotence, consistency, eq_residual: r.eq_residual })
}

pub fn audit_log(model: &RobotModel, records: &[LogRecord]) -> Result<Audit, SimError> {
    let per = crate::sweep::par_map(records, |r| audit_record(model, r));
    per.into_iter().try_fold(Audit::default(), |acc, a| Ok(acc.worst(a?)))
}
