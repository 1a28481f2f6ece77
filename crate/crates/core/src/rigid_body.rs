//! Analytic dynamics of a planar serial arm with point masses at the link tips.
//!
//! Joint angles are relative; the absolute angle of link `i` is the running sum
//! `q1 + ... + qi`. The task point is the tip of the last link. A two-link arm
//! has task coordinates `(x, y)`; a three-link arm adds the planar orientation
//! of the last link, giving `(x, y, theta)` and wrenches `(F_x, F_y, T)`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Tikhonov damping used for the task inertia near singularities.
pub const DEFAULT_TASK_DAMPING: f64 = 1e-3;

/// Condition number above which the undamped task inertia is refused.
pub const SINGULARITY_CONDITION: f64 = 1e12;

/// Kinematic and inertial parameters of a planar serial arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorModel {
    /// Link lengths in m.
    pub link_lengths: Vec<f64>,
    /// Point mass at each link tip in kg.
    pub link_masses: Vec<f64>,
    /// Gravity magnitude in m/s², acting along task -y.
    pub gravity: f64,
    /// Viscous joint damping in N·m·s/rad.
    pub joint_damping: Vec<f64>,
    /// Coulomb joint friction level in N·m (regularized with `friction_velocity`).
    /// Empty means frictionless.
    #[serde(default)]
    pub joint_friction: Vec<f64>,
    /// Regularization velocity of the joint friction in rad/s.
    #[serde(default = "default_friction_velocity")]
    pub friction_velocity: f64,
}

fn default_friction_velocity() -> f64 {
    1e-5
}

impl ManipulatorModel {
    /// Frictionless arm with the given lengths, masses and uniform damping.
    pub fn new(link_lengths: Vec<f64>, link_masses: Vec<f64>, gravity: f64, damping: f64) -> Self {
        let n = link_lengths.len();
        Self {
            link_lengths,
            link_masses,
            gravity,
            joint_damping: vec![damping; n],
            joint_friction: vec![0.0; n],
            friction_velocity: default_friction_velocity(),
        }
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    /// Task-space dimension: 2 for a two-link arm, 3 for a three-link arm.
    pub fn task_dim(&self) -> usize {
        if self.dof() == 2 {
            2
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n != 2 && n != 3 {
            return Err(Error::config(
                "model.link_lengths",
                "arm must have 2 or 3 joints",
            ));
        }
        let check_len = |field: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::config(
                    format!("model.{field}"),
                    format!("expected {n} entries, got {len}"),
                ))
            }
        };
        check_len("link_masses", self.link_masses.len())?;
        check_len("joint_damping", self.joint_damping.len())?;
        if !self.joint_friction.is_empty() {
            check_len("joint_friction", self.joint_friction.len())?;
        }
        if self
            .link_lengths
            .iter()
            .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::config(
                "model.link_lengths",
                "all lengths must be > 0",
            ));
        }
        if self
            .link_masses
            .iter()
            .any(|&m| !(m > 0.0 && m.is_finite()))
        {
            return Err(Error::config("model.link_masses", "all masses must be > 0"));
        }
        if self
            .joint_damping
            .iter()
            .any(|&d| !(d >= 0.0 && d.is_finite()))
        {
            return Err(Error::config("model.joint_damping", "damping must be >= 0"));
        }
        if self
            .joint_friction
            .iter()
            .any(|&f| !(f >= 0.0 && f.is_finite()))
        {
            return Err(Error::config(
                "model.joint_friction",
                "friction must be >= 0",
            ));
        }
        if !(self.friction_velocity > 0.0) {
            return Err(Error::config("model.friction_velocity", "must be > 0"));
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return Err(Error::config("model.gravity", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Joint positions (rad) and velocities (rad/s).
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Task pose, velocity and acceleration.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskState {
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
    pub xddot: DVector<f64>,
}

/// Task-space force/moment vector: forces first, then the planar moment.
#[derive(Clone, Debug, PartialEq)]
pub struct Wrench(pub DVector<f64>);

impl Wrench {
    pub fn zeros(dim: usize) -> Self {
        Wrench(DVector::zeros(dim))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Wrench(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    /// Euclidean norm of the force components (first two entries).
    pub fn force_norm(&self) -> f64 {
        let n = self.dim().min(2);
        self.0.rows(0, n).norm()
    }

    /// Magnitude of the moment component; zero for a two-dimensional task.
    pub fn moment_norm(&self) -> f64 {
        if self.dim() > 2 {
            self.0.rows(2, self.dim() - 2).norm()
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, v: &DVector<f64>) -> f64 {
        self.0.dot(v)
    }
}

impl Index<usize> for Wrench {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Wrench {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Wrench {
    type Output = Wrench;
    fn add(self, rhs: &Wrench) -> Wrench {
        Wrench(&self.0 + &rhs.0)
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench(self.0 + rhs.0)
    }
}

impl AddAssign<&Wrench> for Wrench {
    fn add_assign(&mut self, rhs: &Wrench) {
        self.0 += &rhs.0;
    }
}

impl Sub for &Wrench {
    type Output = Wrench;
    fn sub(self, rhs: &Wrench) -> Wrench {
        Wrench(&self.0 - &rhs.0)
    }
}

impl Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench(self.0 - rhs.0)
    }
}

impl Neg for &Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench(-&self.0)
    }
}

impl Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench(-self.0)
    }
}

impl Mul<f64> for &Wrench {
    type Output = Wrench;
    fn mul(self, s: f64) -> Wrench {
        Wrench(&self.0 * s)
    }
}

impl From<DVector<f64>> for Wrench {
    fn from(v: DVector<f64>) -> Self {
        Wrench(v)
    }
}

/// Absolute link angles `q1, q1+q2, ...`.
fn absolute_angles(q: &DVector<f64>) -> Vec<f64> {
    q.iter()
        .scan(0.0, |acc, &qi| {
            *acc += qi;
            Some(*acc)
        })
        .collect()
}

/// Tip position of every link, base at the origin.
pub fn link_tip_positions(model: &ManipulatorModel, q: &DVector<f64>) -> Vec<[f64; 2]> {
    let phi = absolute_angles(q);
    let mut p = [0.0, 0.0];
    model
        .link_lengths
        .iter()
        .zip(phi)
        .map(|(&l, a)| {
            p[0] += l * a.cos();
            p[1] += l * a.sin();
            p
        })
        .collect()
}

/// Task pose: tip position, plus the last link's absolute angle for three links.
pub fn forward_kinematics(model: &ManipulatorModel, q: &DVector<f64>) -> DVector<f64> {
    let tips = link_tip_positions(model, q);
    let tip = tips[tips.len() - 1];
    if model.task_dim() == 2 {
        DVector::from_column_slice(&tip)
    } else {
        DVector::from_column_slice(&[tip[0], tip[1], q.sum()])
    }
}

/// 2×n Jacobian of the tip of link `link` (0-based).
fn point_jacobian(model: &ManipulatorModel, phi: &[f64], link: usize) -> DMatrix<f64> {
    let n = model.dof();
    let mut jac = DMatrix::zeros(2, n);
    for k in 0..=link {
        // link k's angle depends on joints 0..=k
        let (s, c) = phi[k].sin_cos();
        let l = model.link_lengths[k];
        for j in 0..=k {
            jac[(0, j)] -= l * s;
            jac[(1, j)] += l * c;
        }
    }
    jac
}

/// Analytic task Jacobian (m×n).
pub fn jacobian(model: &ManipulatorModel, q: &DVector<f64>) -> DMatrix<f64> {
    let phi = absolute_angles(q);
    let n = model.dof();
    let pos = point_jacobian(model, &phi, n - 1);
    if model.task_dim() == 2 {
        pos
    } else {
        let mut jac = DMatrix::zeros(3, n);
        jac.rows_mut(0, 2).copy_from(&pos);
        jac.row_mut(2).fill(1.0);
        jac
    }
}

/// Second-order term of the tip-`link` acceleration, `J̇_i q̇`, in closed form.
fn point_jdot_qdot(model: &ManipulatorModel, phi: &[f64], phidot: &[f64], link: usize) -> [f64; 2] {
    let mut acc = [0.0, 0.0];
    for k in 0..=link {
        let l = model.link_lengths[k];
        let w2 = phidot[k] * phidot[k];
        acc[0] -= l * w2 * phi[k].cos();
        acc[1] -= l * w2 * phi[k].sin();
    }
    acc
}

/// `J̇ q̇` for the task Jacobian; the orientation row is constant so its entry is zero.
pub fn jacobian_dot_qdot(
    model: &ManipulatorModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> DVector<f64> {
    let phi = absolute_angles(q);
    let phidot = absolute_angles(qdot);
    let acc = point_jdot_qdot(model, &phi, &phidot, model.dof() - 1);
    let mut out = DVector::zeros(model.task_dim());
    out[0] = acc[0];
    out[1] = acc[1];
    out
}

/// Joint-space mass matrix `M(q) = Σ m_i J_iᵀ J_i`.
pub fn mass_matrix(model: &ManipulatorModel, q: &DVector<f64>) -> DMatrix<f64> {
    let phi = absolute_angles(q);
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    for (i, &mass) in model.link_masses.iter().enumerate() {
        let ji = point_jacobian(model, &phi, i);
        m += ji.transpose() * &ji * mass;
    }
    // exact symmetry regardless of summation order
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Coriolis/centrifugal joint torques `C(q, q̇) q̇`.
pub fn coriolis_torque(
    model: &ManipulatorModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> DVector<f64> {
    let phi = absolute_angles(q);
    let phidot = absolute_angles(qdot);
    let n = model.dof();
    let mut tau = DVector::zeros(n);
    for (i, &mass) in model.link_masses.iter().enumerate() {
        let ji = point_jacobian(model, &phi, i);
        let a = point_jdot_qdot(model, &phi, &phidot, i);
        tau += ji.transpose() * DVector::from_column_slice(&a) * mass;
    }
    tau
}

/// Gravity joint torques `g(q) = ∂V/∂q`.
pub fn gravity_torque(model: &ManipulatorModel, q: &DVector<f64>) -> DVector<f64> {
    let n = model.dof();
    if model.gravity == 0.0 {
        return DVector::zeros(n);
    }
    let phi = absolute_angles(q);
    let mut tau = DVector::zeros(n);
    for (i, &mass) in model.link_masses.iter().enumerate() {
        let ji = point_jacobian(model, &phi, i);
        tau += ji.row(1).transpose() * (mass * model.gravity);
    }
    tau
}

/// Joint dissipation: viscous damping plus regularized Coulomb friction.
pub fn dissipative_torque(model: &ManipulatorModel, qdot: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        model.dof(),
        qdot.iter().enumerate().map(|(i, &w)| {
            model.joint_damping[i] * w
                + model.joint_friction.get(i).copied().unwrap_or(0.0)
                    * (w / model.friction_velocity).tanh()
        }),
    )
}

/// Task inertia from an explicit Jacobian and mass matrix: `(J M⁻¹ Jᵀ + λ² I)⁻¹`.
pub fn task_inertia_from(
    jac: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    damping: f64,
) -> Result<DMatrix<f64>> {
    let m = jac.nrows();
    let minv_jt = mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .solve(&jac.transpose());
    let mut mobility = jac * minv_jt;
    mobility = (&mobility + mobility.transpose()) * 0.5;
    if damping == 0.0 {
        let eig = mobility.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
        if condition > SINGULARITY_CONDITION {
            return Err(Error::SingularTaskInertia { condition });
        }
    } else {
        mobility += DMatrix::identity(m, m) * (damping * damping);
    }
    let lambda = mobility
        .cholesky()
        .ok_or(Error::SingularTaskInertia {
            condition: f64::INFINITY,
        })?
        .inverse();
    Ok((&lambda + lambda.transpose()) * 0.5)
}

/// Task-space inertia `Λ(q)` with Tikhonov damping `λ`.
pub fn task_inertia(
    model: &ManipulatorModel,
    q: &DVector<f64>,
    damping: f64,
) -> Result<DMatrix<f64>> {
    task_inertia_from(&jacobian(model, q), &mass_matrix(model, q), damping)
}

/// Task bias wrench `μ = Λ (J M⁻¹ (C q̇ + g) − J̇ q̇)`.
pub fn bias_wrench(
    model: &ManipulatorModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    damping: f64,
) -> Result<Wrench> {
    let jac = jacobian(model, q);
    let mass = mass_matrix(model, q);
    let lambda = task_inertia_from(&jac, &mass, damping)?;
    let h = coriolis_torque(model, q, qdot) + gravity_torque(model, q);
    let minv_h = mass.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&h);
    let inner = &jac * minv_h - jacobian_dot_qdot(model, q, qdot);
    Ok(Wrench(lambda * inner))
}

/// Joint accelerations `q̈ = M⁻¹ (Jᵀ(τ_task + f_ext) − C q̇ − g − D q̇ − friction)`.
pub fn forward_dynamics(
    model: &ManipulatorModel,
    state: &JointState,
    tau_task: &Wrench,
    f_ext: &Wrench,
) -> DVector<f64> {
    let jac = jacobian(model, &state.q);
    let rhs = jac.transpose() * (&tau_task.0 + &f_ext.0)
        - coriolis_torque(model, &state.q, &state.qdot)
        - gravity_torque(model, &state.q)
        - dissipative_torque(model, &state.qdot);
    let mass = mass_matrix(model, &state.q);
    mass.cholesky()
        .expect("point-mass arm has a positive definite mass matrix")
        .solve(&rhs)
}

/// Task velocity `ẋ = J q̇`.
pub fn task_velocity(model: &ManipulatorModel, state: &JointState) -> DVector<f64> {
    jacobian(model, &state.q) * &state.qdot
}

/// Task acceleration `ẍ = J q̈ + J̇ q̇`.
pub fn task_acceleration(
    model: &ManipulatorModel,
    state: &JointState,
    qddot: &DVector<f64>,
) -> DVector<f64> {
    jacobian(model, &state.q) * qddot + jacobian_dot_qdot(model, &state.q, &state.qdot)
}

pub fn kinetic_energy(model: &ManipulatorModel, state: &JointState) -> f64 {
    0.5 * state
        .qdot
        .dot(&(mass_matrix(model, &state.q) * &state.qdot))
}

pub fn potential_energy(model: &ManipulatorModel, q: &DVector<f64>) -> f64 {
    link_tip_positions(model, q)
        .iter()
        .zip(&model.link_masses)
        .map(|(p, &m)| m * model.gravity * p[1])
        .sum()
}

/// One semi-implicit Euler step: velocity first, then position with the new velocity.
pub fn semi_implicit_euler_step(
    model: &ManipulatorModel,
    state: &mut JointState,
    tau_task: &Wrench,
    f_ext: &Wrench,
    dt: f64,
) {
    let qddot = forward_dynamics(model, state, tau_task, f_ext);
    state.qdot += qddot * dt;
    state.q += &state.qdot * dt;
}

/// Slope of `tanh(v / eps)` measured from the origin, `tanh(v / eps) / v`.
/// Bounded by `1 / eps` and never smaller than the tangent slope.
pub fn tanh_secant(v: f64, eps: f64) -> f64 {
    let u = v / eps;
    if u.abs() < 1e-8 {
        1.0 / eps
    } else {
        u.tanh() / v
    }
}

/// Secant slope of the joint dissipation, `(D q̇ + friction) / q̇` per joint.
pub fn dissipative_slope(model: &ManipulatorModel, qdot: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        model.dof(),
        qdot.iter().enumerate().map(|(i, &w)| {
            model.joint_damping[i]
                + model.joint_friction.get(i).copied().unwrap_or(0.0)
                    * tanh_secant(w, model.friction_velocity)
        }),
    )
}

/// Semi-implicit Euler step with the dissipative forces taken at the new
/// velocity through their secant slopes:
/// `(M + h B) (q̇⁺ − q̇) = h · rhs(q̇)`, then `q⁺ = q + h q̇⁺`.
///
/// `B` collects the joint secant slopes and `Jᵀ B_task J`, where
/// `task_damping` maps task velocity to the velocity-dependent part of the
/// external wrench. Since friction acts as `−B q̇⁺`, a step can stop a
/// sliding joint but never reverse it.
/// Stiff friction regularizations stay stable at any step size.
pub fn implicit_dissipation_step(
    model: &ManipulatorModel,
    state: &mut JointState,
    tau_task: &Wrench,
    f_ext: &Wrench,
    task_damping: &DMatrix<f64>,
    dt: f64,
) {
    let jac = jacobian(model, &state.q);
    let mass = mass_matrix(model, &state.q);
    let rhs = jac.transpose() * (&tau_task.0 + &f_ext.0)
        - coriolis_torque(model, &state.q, &state.qdot)
        - gravity_torque(model, &state.q)
        - dissipative_torque(model, &state.qdot);
    let mut lhs = mass + jac.transpose() * task_damping * &jac * dt;
    for (i, b) in dissipative_slope(model, &state.qdot).iter().enumerate() {
        lhs[(i, i)] += b * dt;
    }
    let dv = lhs
        .lu()
        .solve(&(rhs * dt))
        .expect("mass plus dissipation is nonsingular");
    state.qdot += dv;
    state.q += &state.qdot * dt;
}

/// One classical Runge-Kutta step with inputs held constant over the step.
pub fn rk4_step(
    model: &ManipulatorModel,
    state: &mut JointState,
    tau_task: &Wrench,
    f_ext: &Wrench,
    dt: f64,
) {
    let deriv = |s: &JointState| (s.qdot.clone(), forward_dynamics(model, s, tau_task, f_ext));
    let offset = |s: &JointState, dq: &DVector<f64>, dv: &DVector<f64>, h: f64| JointState {
        q: &s.q + dq * h,
        qdot: &s.qdot + dv * h,
    };
    let (k1q, k1v) = deriv(state);
    let (k2q, k2v) = deriv(&offset(state, &k1q, &k1v, dt / 2.0));
    let (k3q, k3v) = deriv(&offset(state, &k2q, &k2v, dt / 2.0));
    let (k4q, k4v) = deriv(&offset(state, &k3q, &k3v, dt));
    state.q += (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (dt / 6.0);
    state.qdot += (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (dt / 6.0);
}

/// Joint angles placing a three-link tip at `(x, y)` with last-link angle `theta`
/// (elbow-down branch), or a two-link tip at `(x, y)`.
pub fn inverse_kinematics(model: &ManipulatorModel, pose: &[f64]) -> Result<DVector<f64>> {
    let l = &model.link_lengths;
    let (wx, wy) = match model.dof() {
        2 => (pose[0], pose[1]),
        _ => {
            let theta = *pose.get(2).ok_or(Error::DimensionMismatch {
                expected: 3,
                got: pose.len(),
            })?;
            (pose[0] - l[2] * theta.cos(), pose[1] - l[2] * theta.sin())
        }
    };
    let r2 = wx * wx + wy * wy;
    let c2 = (r2 - l[0] * l[0] - l[1] * l[1]) / (2.0 * l[0] * l[1]);
    if !(-1.0..=1.0).contains(&c2) {
        return Err(Error::config(
            "sim.initial_pose",
            "pose is outside the workspace",
        ));
    }
    let q2 = -c2.acos();
    let q1 = wy.atan2(wx) - (l[1] * q2.sin()).atan2(l[0] + l[1] * q2.cos());
    if model.dof() == 2 {
        Ok(DVector::from_column_slice(&[q1, q2]))
    } else {
        Ok(DVector::from_column_slice(&[q1, q2, pose[2] - q1 - q2]))
    }
}
