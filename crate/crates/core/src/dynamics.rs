//! Rigid-body kinematics and dynamics of a serial chain of revolute joints.
//!
//! The mass matrix is assembled from per-link center-of-mass Jacobians and its
//! partial derivatives are computed analytically, which lets the Coriolis
//! matrix be built from Christoffel symbols of the first kind. With that
//! construction `dM/dt - 2C` is skew-symmetric to rounding error.

use nalgebra::{
    Cholesky, DMatrix, DVector, Dyn, Isometry3, Matrix3, Point3, Translation3, UnitQuaternion,
    Vector3,
};

use crate::model::{ModelError, RobotModel};

/// World-frame geometry of every link at one configuration.
struct ChainGeometry {
    origin: Vec<Vector3<f64>>,
    axis: Vec<Vector3<f64>>,
    com: Vec<Vector3<f64>>,
    inertia_world: Vec<Matrix3<f64>>,
    ee: Isometry3<f64>,
}

fn chain_geometry(model: &RobotModel, q: &[f64]) -> ChainGeometry {
    let n = model.n_joints();
    let mut g = ChainGeometry {
        origin: Vec::with_capacity(n),
        axis: Vec::with_capacity(n),
        com: Vec::with_capacity(n),
        inertia_world: Vec::with_capacity(n),
        ee: Isometry3::identity(),
    };
    let mut frame = Isometry3::identity();
    for (link, &qi) in model.links.iter().zip(q) {
        frame = frame
            * Isometry3::rotation(Vector3::x() * link.alpha)
            * Translation3::new(link.a, 0.0, 0.0)
            * Isometry3::rotation(Vector3::z() * (link.theta_offset + qi))
            * Translation3::new(0.0, 0.0, link.d);
        let rot = frame.rotation.to_rotation_matrix().into_inner();
        g.origin.push(frame.translation.vector);
        g.axis.push(rot.column(2).into_owned());
        g.com.push((frame * Point3::from(link.com)).coords);
        g.inertia_world.push(rot * link.inertia * rot.transpose());
    }
    g.ee = frame * model.tool;
    g
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    v.cross_matrix()
}

/// Center-of-mass Jacobians (linear 3xn, angular 3xn) of link `i`.
fn link_jacobians(geo: &ChainGeometry, i: usize, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut jv = DMatrix::zeros(3, n);
    let mut jw = DMatrix::zeros(3, n);
    for j in 0..=i {
        let lin = geo.axis[j].cross(&(geo.com[i] - geo.origin[j]));
        jv.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jw.fixed_view_mut::<3, 1>(0, j).copy_from(&geo.axis[j]);
    }
    (jv, jw)
}

fn mass_matrix_from(model: &RobotModel, geo: &ChainGeometry) -> DMatrix<f64> {
    let n = model.n_joints();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate() {
        let (jv, jw) = link_jacobians(geo, i, n);
        let iw = DMatrix::from_column_slice(3, 3, geo.inertia_world[i].as_slice());
        m += link.mass * jv.transpose() * &jv + jw.transpose() * iw * &jw;
    }
    // Exact symmetry; the two triangles differ only by rounding.
    (&m + m.transpose()) * 0.5
}

/// Partial derivatives `dM/dq_k` for every joint `k`.
fn mass_matrix_partials_from(model: &RobotModel, geo: &ChainGeometry) -> Vec<DMatrix<f64>> {
    let n = model.n_joints();
    let mut partials = vec![DMatrix::zeros(n, n); n];
    for (i, link) in model.links.iter().enumerate() {
        let (jv, jw) = link_jacobians(geo, i, n);
        let iw = geo.inertia_world[i];
        let iw_d = DMatrix::from_column_slice(3, 3, iw.as_slice());
        for (k, dm) in partials.iter_mut().enumerate().take(i + 1) {
            let zk = geo.axis[k];
            let ok = geo.origin[k];
            let dcom = zk.cross(&(geo.com[i] - ok));
            let mut djv = DMatrix::zeros(3, n);
            let mut djw = DMatrix::zeros(3, n);
            for j in 0..=i {
                // Joint axes and origins of frames at or before k do not move with q_k.
                let (dz, dorigin) = if k < j {
                    (zk.cross(&geo.axis[j]), zk.cross(&(geo.origin[j] - ok)))
                } else {
                    (Vector3::zeros(), Vector3::zeros())
                };
                let col = dz.cross(&(geo.com[i] - geo.origin[j]))
                    + geo.axis[j].cross(&(dcom - dorigin));
                djv.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
                djw.fixed_view_mut::<3, 1>(0, j).copy_from(&dz);
            }
            let s = skew(&zk);
            let diw = s * iw - iw * s;
            let diw = DMatrix::from_column_slice(3, 3, diw.as_slice());
            let lin = djv.transpose() * &jv;
            let ang = djw.transpose() * &iw_d * &jw;
            *dm += link.mass * (&lin + lin.transpose())
                + &ang
                + ang.transpose()
                + jw.transpose() * diw * &jw;
        }
    }
    partials
}

fn gravity_from(model: &RobotModel, geo: &ChainGeometry) -> DVector<f64> {
    let n = model.n_joints();
    let mut g = DVector::zeros(n);
    for (i, link) in model.links.iter().enumerate() {
        let (jv, _) = link_jacobians(geo, i, n);
        g -= link.mass * jv.transpose() * DVector::from_column_slice(model.gravity.as_slice());
    }
    g
}

fn ee_jacobian_from(model: &RobotModel, geo: &ChainGeometry) -> DMatrix<f64> {
    let n = model.n_joints();
    let p = geo.ee.translation.vector;
    let mut jac = DMatrix::zeros(6, n);
    for j in 0..n {
        let lin = geo.axis[j].cross(&(p - geo.origin[j]));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&geo.axis[j]);
    }
    jac
}

/// Christoffel-symbol Coriolis matrix:
/// `C_ij = sum_k 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i) qd_k`.
fn coriolis_from_partials(partials: &[DMatrix<f64>], qd: &DVector<f64>) -> DMatrix<f64> {
    let n = qd.len();
    // dm_qd[i] = (dM/dq_i) * qd
    let dm_qd: Vec<DVector<f64>> = partials.iter().map(|d| d * qd).collect();
    let mut mdot = DMatrix::zeros(n, n);
    for (d, &v) in partials.iter().zip(qd.iter()) {
        mdot += d * v;
    }
    DMatrix::from_fn(n, n, |i, j| 0.5 * (mdot[(i, j)] + dm_qd[j][i] - dm_qd[i][j]))
}

fn as_slice_checked<'a>(model: &RobotModel, v: &'a DVector<f64>) -> Result<&'a [f64], ModelError> {
    model.check_dim(v.len())?;
    Ok(v.as_slice())
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Result<Isometry3<f64>, ModelError> {
    let q = as_slice_checked(model, q)?;
    Ok(chain_geometry(model, q).ee)
}

/// Geometric end-effector Jacobian, linear rows stacked over angular rows, world frame.
pub fn jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
    let q = as_slice_checked(model, q)?;
    Ok(ee_jacobian_from(model, &chain_geometry(model, q)))
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
    let q = as_slice_checked(model, q)?;
    Ok(mass_matrix_from(model, &chain_geometry(model, q)))
}

pub fn mass_matrix_partials(
    model: &RobotModel,
    q: &DVector<f64>,
) -> Result<Vec<DMatrix<f64>>, ModelError> {
    let q = as_slice_checked(model, q)?;
    Ok(mass_matrix_partials_from(model, &chain_geometry(model, q)))
}

/// Gravity torque `dV/dq`.
pub fn gravity_torque(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let q = as_slice_checked(model, q)?;
    Ok(gravity_from(model, &chain_geometry(model, q)))
}

/// Potential energy relative to the world origin.
pub fn potential_energy(model: &RobotModel, q: &DVector<f64>) -> Result<f64, ModelError> {
    let q = as_slice_checked(model, q)?;
    let geo = chain_geometry(model, q);
    Ok(model
        .links
        .iter()
        .zip(&geo.com)
        .map(|(l, c)| -l.mass * model.gravity.dot(c))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

pub fn dynamics_terms(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DynamicsTerms, ModelError> {
    let qs = as_slice_checked(model, q)?;
    model.check_dim(qd.len())?;
    let geo = chain_geometry(model, qs);
    let partials = mass_matrix_partials_from(model, &geo);
    Ok(DynamicsTerms {
        mass: mass_matrix_from(model, &geo),
        coriolis: coriolis_from_partials(&partials, qd),
        gravity: gravity_from(model, &geo),
    })
}

pub fn kinetic_energy(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64, ModelError> {
    model.check_dim(qd.len())?;
    let m = mass_matrix(model, q)?;
    Ok(0.5 * qd.dot(&(m * qd)))
}

/// Joint state with every dynamics quantity the controller needs, computed once.
///
/// Fields are private: a state can only be produced by [`RobotState::new`], so
/// the cached terms always correspond to the stored `q` and `qd`.
#[derive(Debug, Clone)]
pub struct RobotState {
    q: DVector<f64>,
    qd: DVector<f64>,
    mass: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
    coriolis: DMatrix<f64>,
    gravity: DVector<f64>,
    jacobian: DMatrix<f64>,
    ee_pose: Isometry3<f64>,
    kinetic_energy: f64,
}

impl RobotState {
    pub fn new(model: &RobotModel, q: DVector<f64>, qd: DVector<f64>) -> Result<Self, ModelError> {
        model.check_dim(q.len())?;
        model.check_dim(qd.len())?;
        let geo = chain_geometry(model, q.as_slice());
        let mass = mass_matrix_from(model, &geo);
        let partials = mass_matrix_partials_from(model, &geo);
        let coriolis = coriolis_from_partials(&partials, &qd);
        let gravity = gravity_from(model, &geo);
        let jacobian = ee_jacobian_from(model, &geo);
        let mass_chol = Cholesky::new(mass.clone()).ok_or_else(|| ModelError::Invalid {
            field: "mass matrix".into(),
            reason: "not positive definite at this configuration".into(),
        })?;
        let kinetic_energy = 0.5 * qd.dot(&(&mass * &qd));
        let mut ee_pose = geo.ee;
        ee_pose.rotation = UnitQuaternion::new_normalize(ee_pose.rotation.into_inner());
        Ok(Self {
            q,
            qd,
            mass,
            mass_chol,
            coriolis,
            gravity,
            jacobian,
            ee_pose,
            kinetic_energy,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn qd(&self) -> &DVector<f64> {
        &self.qd
    }
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }
    pub fn coriolis(&self) -> &DMatrix<f64> {
        &self.coriolis
    }
    pub fn gravity(&self) -> &DVector<f64> {
        &self.gravity
    }
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }
    pub fn ee_pose(&self) -> &Isometry3<f64> {
        &self.ee_pose
    }
    pub fn ee_position(&self) -> Vector3<f64> {
        self.ee_pose.translation.vector
    }
    pub fn kinetic_energy(&self) -> f64 {
        self.kinetic_energy
    }

    /// `M^-1 x`
    pub fn solve_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(x)
    }

    /// `M^-1 X`
    pub fn solve_mass_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.mass_chol.solve(x)
    }

    /// Torque that is not under direct control: `-C qd - g` plus the external torque.
    pub fn drift_torque(&self, tau_ext: &DVector<f64>) -> DVector<f64> {
        tau_ext - &self.coriolis * &self.qd - &self.gravity
    }

    /// Forward dynamics `M^-1 (tau + tau_ext - C qd - g)`.
    pub fn acceleration(&self, tau: &DVector<f64>, tau_ext: &DVector<f64>) -> DVector<f64> {
        self.solve_mass(&(tau + self.drift_torque(tau_ext)))
    }
}
