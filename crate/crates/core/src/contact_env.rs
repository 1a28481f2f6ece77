//! Planar peg-in-hole world with penalty contact, and the fixed-step loop that
//! couples the arm, the contact model and a controller.
//!
//! Frame: `x` lateral, `y` up, insertion along `-y`. The peg is the last link
//! of a three-link arm; its tip is the task point and the reference point of
//! every wrench. The tool axis `(cos θ, sin θ)` points from the gripper to the
//! tip, so an aligned peg has `θ = -π/2`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observers::{ControlInput, ControlOutput, Controller, MismatchConfig};
use crate::passivity::{
    observer_storage, port_energy_step, safety_check, storage, EnergyLedger, SafetyLimits,
    StopReason,
};
use crate::rigid_body::{
    forward_kinematics, implicit_dissipation_step, inverse_kinematics, jacobian, tanh_secant,
    task_inertia, JointState, ManipulatorModel, Wrench, DEFAULT_TASK_DAMPING,
};

const BLOCK_EXTENT: f64 = 0.05;

fn default_friction_velocity() -> f64 {
    1e-4
}

/// Hole cut into a fixture, plus the peg that goes into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleGeometry {
    /// Lateral position of the hole axis, m.
    pub center_x: f64,
    /// Height of the fixture surface, m.
    pub top_y: f64,
    pub width: f64,
    pub depth: f64,
    pub peg_width: f64,
    pub peg_length: f64,
    /// 45° lead-in on both hole edges, m.
    pub chamfer: f64,
    /// N/m.
    pub wall_stiffness: f64,
    /// N·s/m.
    pub wall_damping: f64,
    pub friction_coeff: f64,
    /// Tangential speed at which Coulomb friction saturates, m/s.
    #[serde(default = "default_friction_velocity")]
    pub friction_velocity: f64,
}

impl HoleGeometry {
    /// 20 mm peg, 0.2 mm diametral clearance, 20 mm deep hole.
    pub fn nominal() -> Self {
        Self {
            center_x: -0.216,
            top_y: -0.341,
            width: 0.0202,
            depth: 0.020,
            peg_width: 0.020,
            peg_length: 0.05,
            chamfer: 0.001,
            wall_stiffness: 1e5,
            wall_damping: 100.0,
            friction_coeff: 0.3,
            friction_velocity: default_friction_velocity(),
        }
    }

    /// Press-fit class clearance with a ten times stiffer fixture.
    pub fn tight() -> Self {
        Self {
            width: 0.020034,
            wall_stiffness: 1e6,
            wall_damping: 300.0,
            ..Self::nominal()
        }
    }

    pub fn clearance(&self) -> f64 {
        self.width - self.peg_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("geom.width", self.width),
            ("geom.depth", self.depth),
            ("geom.peg_width", self.peg_width),
            ("geom.peg_length", self.peg_length),
            ("geom.wall_stiffness", self.wall_stiffness),
            ("geom.friction_velocity", self.friction_velocity),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if !(self.clearance() > 0.0) {
            return Err(Error::config(
                "geom.width",
                "hole must be wider than the peg",
            ));
        }
        if !(self.chamfer >= 0.0 && self.chamfer < self.depth) {
            return Err(Error::config(
                "geom.chamfer",
                "must be >= 0 and shallower than the hole",
            ));
        }
        if !(self.wall_damping >= 0.0) {
            return Err(Error::config("geom.wall_damping", "must be >= 0"));
        }
        if !(0.0..2.0).contains(&self.friction_coeff) {
            return Err(Error::config("geom.friction_coeff", "must lie in [0, 2)"));
        }
        if !(self.center_x.is_finite() && self.top_y.is_finite()) {
            return Err(Error::config("geom.center_x", "placement must be finite"));
        }
        Ok(())
    }

    /// Depth of the peg tip below the fixture surface.
    pub fn insertion_depth(&self, tip_y: f64) -> f64 {
        self.top_y - tip_y
    }

    fn solids(&self) -> [Solid; 3] {
        let t = self.top_y;
        let b = self.top_y - self.depth;
        let c = self.chamfer;
        let xl = self.center_x - 0.5 * self.width;
        let xr = self.center_x + 0.5 * self.width;
        let far_l = xl - BLOCK_EXTENT;
        let far_r = xr + BLOCK_EXTENT;
        [
            Solid::new(
                vec![[far_l, b], [xl, b], [xl, t - c], [xl - c, t], [far_l, t]],
                vec![false, true, true, true, false],
            ),
            Solid::new(
                vec![[xr, b], [far_r, b], [far_r, t], [xr + c, t], [xr, t - c]],
                vec![false, false, true, true, true],
            ),
            Solid::new(
                vec![
                    [far_l, b - BLOCK_EXTENT],
                    [far_r, b - BLOCK_EXTENT],
                    [far_r, b],
                    [far_l, b],
                ],
                vec![false, false, true, false],
            ),
        ]
    }

    fn convex_corners(&self) -> Vec<[f64; 2]> {
        let t = self.top_y;
        let c = self.chamfer;
        let xl = self.center_x - 0.5 * self.width;
        let xr = self.center_x + 0.5 * self.width;
        if c > 0.0 {
            vec![[xl, t - c], [xl - c, t], [xr, t - c], [xr + c, t]]
        } else {
            vec![[xl, t], [xr, t]]
        }
    }
}

/// Convex polygon, counter-clockwise, with the edges that can be touched.
struct Solid {
    vertices: Vec<[f64; 2]>,
    exposed: Vec<bool>,
}

impl Solid {
    fn new(vertices: Vec<[f64; 2]>, exposed: Vec<bool>) -> Self {
        Self { vertices, exposed }
    }

    /// Penetration depth and outward normal of the nearest exposed edge, if inside.
    fn penetration(&self, p: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let n = self.vertices.len();
        let mut best: Option<(f64, [f64; 2])> = None;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                continue;
            }
            let normal = [dy / len, -dx / len];
            let signed = normal[0] * (p[0] - a[0]) + normal[1] * (p[1] - a[1]);
            if signed >= 0.0 {
                return None;
            }
            if self.exposed[i] && best.is_none_or(|(d, _)| -signed < d) {
                best = Some((-signed, normal));
            }
        }
        best
    }
}

/// One active contact: where it acts, along which direction it pushes the peg,
/// how deep it is and the force it applies to the peg.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPoint {
    pub point: [f64; 2],
    pub normal: [f64; 2],
    pub penetration: f64,
    pub normal_force: f64,
    pub force: [f64; 2],
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// All active contacts for a peg whose tip sits at `pose = (x, y, θ)`.
pub fn contact_points(
    pose: &DVector<f64>,
    vel: &DVector<f64>,
    geom: &HoleGeometry,
) -> Vec<ContactPoint> {
    let tip = [pose[0], pose[1]];
    let (s, c) = pose[2].sin_cos();
    // `up` runs from the tip back along the peg, `side` is its left-hand normal
    let up = [-c, -s];
    let side = [s, -c];
    let half = 0.5 * geom.peg_width;
    let point_velocity = |p: [f64; 2]| {
        let r = [p[0] - tip[0], p[1] - tip[1]];
        [vel[0] - vel[2] * r[1], vel[1] + vel[2] * r[0]]
    };
    let mut contacts = Vec::new();
    let mut push = |point: [f64; 2], normal: [f64; 2], depth: f64| {
        let v = point_velocity(point);
        let rate = -(normal[0] * v[0] + normal[1] * v[1]);
        let n_force = (geom.wall_stiffness * depth + geom.wall_damping * rate).max(0.0);
        let tangent = [-normal[1], normal[0]];
        let v_t = tangent[0] * v[0] + tangent[1] * v[1];
        let f_t = -geom.friction_coeff * n_force * (v_t / geom.friction_velocity).tanh();
        contacts.push(ContactPoint {
            point,
            normal,
            penetration: depth,
            normal_force: n_force,
            force: [
                n_force * normal[0] + f_t * tangent[0],
                n_force * normal[1] + f_t * tangent[1],
            ],
        });
    };

    for sign in [1.0, -1.0] {
        let corner = [
            tip[0] + sign * half * side[0],
            tip[1] + sign * half * side[1],
        ];
        for solid in geom.solids() {
            if let Some((depth, normal)) = solid.penetration(corner) {
                push(corner, normal, depth);
            }
        }
    }

    for corner in geom.convex_corners() {
        let rel = [corner[0] - tip[0], corner[1] - tip[1]];
        let along = rel[0] * up[0] + rel[1] * up[1];
        let lateral = rel[0] * side[0] + rel[1] * side[1];
        if along <= 0.0 || along >= geom.peg_length || lateral.abs() >= half {
            continue;
        }
        let side_depth = half - lateral.abs();
        let (depth, peg_normal) = if along < side_depth {
            (along, [-up[0], -up[1]])
        } else {
            let sgn = lateral.signum();
            (side_depth, [sgn * side[0], sgn * side[1]])
        };
        push(corner, [-peg_normal[0], -peg_normal[1]], depth);
    }
    contacts
}

/// Net contact wrench `(F_x, F_y, T)` on the peg, moments about the tip.
pub fn contact_wrench(pose: &DVector<f64>, vel: &DVector<f64>, geom: &HoleGeometry) -> Wrench {
    contact_wrench_and_damping(pose, vel, geom).0
}

/// Contact wrench plus a task damping matrix: normal damping plus the secant
/// slope of friction, holding the normal force fixed.
pub fn contact_wrench_and_damping(
    pose: &DVector<f64>,
    vel: &DVector<f64>,
    geom: &HoleGeometry,
) -> (Wrench, DMatrix<f64>) {
    let mut w = Wrench::zeros(3);
    let mut damping = DMatrix::zeros(3, 3);
    for cp in contact_points(pose, vel, geom) {
        let r = [cp.point[0] - pose[0], cp.point[1] - pose[1]];
        w[0] += cp.force[0];
        w[1] += cp.force[1];
        w[2] += cross(r, cp.force);
        if cp.normal_force <= 0.0 {
            continue;
        }
        // point velocity = G ẋ
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -r[1], 0.0, 1.0, r[0]]);
        let n = cp.normal;
        let t = [-n[1], n[0]];
        let v = &g * vel;
        let v_t = t[0] * v[0] + t[1] * v[1];
        let c_t = geom.friction_coeff * cp.normal_force * tanh_secant(v_t, geom.friction_velocity);
        let c_n = geom.wall_damping;
        let local = DMatrix::from_fn(2, 2, |i, j| c_n * n[i] * n[j] + c_t * t[i] * t[j]);
        damping += g.transpose() * local * g;
    }
    (w, damping)
}

/// Extra lateral force added to the command over a time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandTransient {
    /// s.
    pub start: f64,
    /// s.
    pub duration: f64,
    /// N, along `x`.
    pub force: f64,
}

/// Loop timing, initial condition and command settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// s.
    pub control_dt: f64,
    pub physics_substeps: usize,
    /// s.
    pub duration: f64,
    /// Constant force along the tool axis, N; negative pushes the tip forward.
    pub feedforward: f64,
    /// Tip position `(x, y)`, m.
    pub initial_position: [f64; 2],
    /// Angular misalignment from the hole axis, rad.
    pub initial_tilt: f64,
    /// Standard deviation of the force-sensor noise, N. Moment noise uses
    /// this value times half the peg width.
    #[serde(default)]
    pub sensor_noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<CommandTransient>,
    #[serde(default)]
    pub safety: SafetyLimits,
    /// Diagonal weights of the optional observer storage term; empty disables it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observer_storage: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 1e-3,
            physics_substeps: 10,
            duration: 6.0,
            feedforward: -20.0,
            initial_position: [-0.216, -0.340],
            initial_tilt: 0.02,
            sensor_noise_std: 0.0,
            transient: None,
            safety: SafetyLimits::default(),
            observer_storage: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return Err(Error::config("sim.control_dt", "must be > 0"));
        }
        if self.physics_substeps < 1 {
            return Err(Error::config("sim.physics_substeps", "must be >= 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("sim.duration", "must be > 0"));
        }
        if !(self.sensor_noise_std >= 0.0) {
            return Err(Error::config("sim.sensor_noise_std", "must be >= 0"));
        }
        if !self.feedforward.is_finite() || !self.initial_tilt.is_finite() {
            return Err(Error::config("sim", "feedforward and tilt must be finite"));
        }
        if let Some(tr) = &self.transient {
            if !(tr.duration >= 0.0 && tr.start >= 0.0 && tr.force.is_finite()) {
                return Err(Error::config(
                    "sim.transient",
                    "window must be non-negative",
                ));
            }
        }
        self.safety.validate()
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.control_dt).round() as usize
    }

    /// Task-space pose `(x, y, θ)` at start.
    pub fn initial_pose(&self) -> [f64; 3] {
        [
            self.initial_position[0],
            self.initial_position[1],
            -std::f64::consts::FRAC_PI_2 + self.initial_tilt,
        ]
    }

    /// Feedforward plus any active transient at time `t` for tool angle `theta`.
    pub fn command(&self, t: f64, theta: f64) -> Wrench {
        let mut w = Wrench::from_slice(&[
            -self.feedforward * theta.cos(),
            -self.feedforward * theta.sin(),
            0.0,
        ]);
        if let Some(tr) = &self.transient {
            if t >= tr.start && t < tr.start + tr.duration {
                w[0] += tr.force;
            }
        }
        w
    }
}

/// One control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub pose: DVector<f64>,
    /// Measured contact wrench on the tool.
    pub f_ext: Wrench,
    pub f_c: Wrench,
    pub f_c_prime: Wrench,
    pub d_hat: Wrench,
    pub depth: f64,
    pub e_port: f64,
    pub rho: f64,
    pub stopped: bool,
}

/// Uniformly sampled record of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub records: Vec<TickRecord>,
    pub stop_reason: StopReason,
}

impl Trace {
    pub fn final_depth(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.depth)
    }

    pub fn depth_at(&self, t: f64) -> f64 {
        let idx = ((t / self.dt).round() as usize).min(self.records.len().saturating_sub(1));
        self.records.get(idx).map_or(0.0, |r| r.depth)
    }

    pub fn peak_force(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.f_ext.force_norm())
            .fold(0.0, f64::max)
    }

    pub fn peak_moment(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.f_ext.moment_norm())
            .fold(0.0, f64::max)
    }

    pub fn peak_estimate(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.d_hat.0.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_rho(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.rho)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_e_port(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.e_port)
    }

    /// Column names with units, in output order.
    pub fn header(dof: usize) -> Vec<String> {
        let mut cols = vec!["t[s]".to_string()];
        cols.extend((1..=dof).map(|i| format!("q{i}[rad]")));
        cols.extend(
            [
                "depth[m]",
                "fx[N]",
                "fy[N]",
                "t_theta[N*m]",
                "fcx[N]",
                "fcy[N]",
                "fc_t[N*m]",
                "dhat_x[N]",
                "dhat_y[N]",
                "dhat_t[N*m]",
                "e_port[J]",
                "rho[J]",
                "stopped",
            ]
            .map(String::from),
        );
        cols
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dof = self.records.first().map_or(3, |r| r.q.len());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(dof))?;
        let fmt = |v: f64| format!("{v:.8e}");
        for r in &self.records {
            let mut row = vec![fmt(r.t)];
            row.extend(r.q.iter().map(|&v| fmt(v)));
            row.push(fmt(r.depth));
            for wrench in [&r.f_ext, &r.f_c_prime, &r.d_hat] {
                row.extend(wrench.0.iter().map(|&v| fmt(v)));
            }
            row.push(fmt(r.e_port));
            row.push(fmt(r.rho));
            row.push(if r.stopped { "1" } else { "0" }.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Plant, fixture, controller and bookkeeping of one simulation.
#[derive(Clone, Debug)]
pub struct World {
    pub model: ManipulatorModel,
    pub geom: HoleGeometry,
    pub sim: SimConfig,
    pub mismatch: MismatchConfig,
    pub state: JointState,
    pub controller: Controller,
    pub ledger: EnergyLedger,
    pub task_damping: f64,
    tick: usize,
    rng: ChaCha8Rng,
    last_output: Option<ControlOutput>,
}

impl World {
    pub fn new(
        model: ManipulatorModel,
        geom: HoleGeometry,
        sim: SimConfig,
        controller: Controller,
        mismatch: MismatchConfig,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        if model.dof() != 3 {
            return Err(Error::config(
                "model.link_lengths",
                "the insertion world needs a three-link arm",
            ));
        }
        geom.validate()?;
        sim.validate()?;
        mismatch.validate()?;
        let q = inverse_kinematics(&model, &sim.initial_pose())?;
        let state = JointState::at_rest(q);
        let mut world = Self {
            model,
            geom,
            sim,
            mismatch,
            state,
            controller,
            ledger: EnergyLedger::default(),
            task_damping: DEFAULT_TASK_DAMPING,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_output: None,
        };
        let s0 = world.storage_now(&world.lambda_hat()?, &Wrench::zeros(3))?;
        world.ledger = EnergyLedger::new(s0);
        Ok(world)
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.sim.control_dt
    }

    pub fn pose(&self) -> DVector<f64> {
        forward_kinematics(&self.model, &self.state.q)
    }

    pub fn task_velocity(&self) -> DVector<f64> {
        jacobian(&self.model, &self.state.q) * &self.state.qdot
    }

    pub fn lambda_hat(&self) -> Result<DMatrix<f64>> {
        self.mismatch.apply(&task_inertia(
            &self.model,
            &self.state.q,
            self.task_damping,
        )?)
    }

    pub fn true_contact(&self) -> Wrench {
        contact_wrench(&self.pose(), &self.task_velocity(), &self.geom)
    }

    fn storage_now(&self, lambda_hat: &DMatrix<f64>, d_hat: &Wrench) -> Result<f64> {
        Ok(storage(lambda_hat, &self.task_velocity())?
            + observer_storage(&self.sim.observer_storage, d_hat))
    }

    fn measure(&mut self, truth: &Wrench) -> Wrench {
        let std = self.sim.sensor_noise_std;
        if std == 0.0 {
            return truth.clone();
        }
        let force = Normal::new(0.0, std).expect("std checked non-negative");
        let moment =
            Normal::new(0.0, std * 0.5 * self.geom.peg_width).expect("std checked non-negative");
        let mut w = truth.clone();
        w[0] += force.sample(&mut self.rng);
        w[1] += force.sample(&mut self.rng);
        w[2] += moment.sample(&mut self.rng);
        w
    }

    pub fn stopped(&self) -> bool {
        self.ledger.stopped
    }

    /// Runs one control tick and integrates the plant to the next one. After a
    /// safety stop the tick is recorded with the last outputs and the plant is
    /// left untouched.
    pub fn step_closed_loop(&mut self) -> Result<TickRecord> {
        let t = self.time();
        let pose = self.pose();
        let xdot = self.task_velocity();
        let truth = contact_wrench(&pose, &xdot, &self.geom);
        let measured = self.measure(&truth);
        let lambda_hat = self.lambda_hat()?;

        self.ledger.latch(safety_check(&self.sim.safety, &measured));
        let output = match (&self.last_output, self.ledger.stopped) {
            (Some(last), true) => last.clone(),
            _ => {
                let command = self.sim.command(t, pose[2]);
                self.controller.step(&ControlInput {
                    f_ext: &measured,
                    pose: &pose,
                    lambda_hat: &lambda_hat,
                    feedforward: &command,
                })?
            }
        };

        port_energy_step(&mut self.ledger, &truth, &xdot, self.sim.control_dt);
        let s_now = self.storage_now(&lambda_hat, &output.d_hat)?;
        self.ledger.record_storage(s_now);

        let record = TickRecord {
            t,
            q: self.state.q.clone(),
            qdot: self.state.qdot.clone(),
            depth: self.geom.insertion_depth(pose[1]),
            pose,
            f_ext: measured,
            f_c: output.f_c.clone(),
            f_c_prime: output.f_c_prime.clone(),
            d_hat: output.d_hat.clone(),
            e_port: self.ledger.e_port,
            rho: self.ledger.rho,
            stopped: self.ledger.stopped,
        };

        if !self.ledger.stopped {
            let h = self.sim.control_dt / self.sim.physics_substeps as f64;
            for _ in 0..self.sim.physics_substeps {
                let (contact, damping) =
                    contact_wrench_and_damping(&self.pose(), &self.task_velocity(), &self.geom);
                implicit_dissipation_step(
                    &self.model,
                    &mut self.state,
                    &output.f_c_prime,
                    &contact,
                    &damping,
                    h,
                );
            }
            if !self.state.is_finite() {
                return Err(Error::config(
                    "sim",
                    "plant state diverged to a non-finite value",
                ));
            }
        }
        self.last_output = Some(output);
        self.tick += 1;
        Ok(record)
    }

    /// Runs to the configured duration or the first safety stop.
    pub fn run(mut self) -> Result<Trace> {
        let ticks = self.sim.ticks();
        let mut records = Vec::with_capacity(ticks);
        for _ in 0..ticks {
            let record = self.step_closed_loop()?;
            let stop = record.stopped;
            records.push(record);
            if stop {
                break;
            }
        }
        Ok(Trace {
            dt: self.sim.control_dt,
            records,
            stop_reason: self.ledger.stop_reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn at(x: f64, y: f64, tilt: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y, -FRAC_PI_2 + tilt])
    }

    fn still() -> DVector<f64> {
        DVector::zeros(3)
    }

    #[test]
    fn centered_peg_has_no_contact() {
        let g = HoleGeometry::nominal();
        let w = contact_wrench(&at(g.center_x, g.top_y - 0.01, 0.0), &still(), &g);
        assert_eq!(w, Wrench::zeros(3));
        let w = contact_wrench(&at(g.center_x, g.top_y + 0.01, 0.3), &still(), &g);
        assert_eq!(w, Wrench::zeros(3));
    }

    #[test]
    fn right_wall_penetration_pushes_left() {
        let g = HoleGeometry::nominal();
        let delta = 5e-5;
        let x = g.center_x + 0.5 * g.clearance() + delta;
        // the lower corner and the hole edge both bite into the flat peg side
        let contacts = contact_points(&at(x, g.top_y - 0.01, 0.0), &still(), &g);
        assert_eq!(contacts.len(), 2);
        for cp in &contacts {
            assert!(
                (cp.normal_force - g.wall_stiffness * delta).abs()
                    < 1e-6 * g.wall_stiffness * delta
            );
            assert!((cp.normal[0] + 1.0).abs() < 1e-12);
        }
        let w = contact_wrench(&at(x, g.top_y - 0.01, 0.0), &still(), &g);
        assert!(w[0] < 0.0 && w[1].abs() < 1e-9);
    }

    #[test]
    fn bottom_contact_pushes_up() {
        let g = HoleGeometry::nominal();
        let delta = 1e-4;
        let w = contact_wrench(
            &at(g.center_x, g.top_y - g.depth - delta, 0.0),
            &still(),
            &g,
        );
        assert!((w[1] - 2.0 * g.wall_stiffness * delta).abs() < 1e-9);
        assert!(w[0].abs() < 1e-9 && w[2].abs() < 1e-12);
    }

    #[test]
    fn wedged_peg_moment_opposes_tilt() {
        // Tilted peg inside the hole touching the right wall with its lower
        // corner and the left hole edge with its side.
        let g = HoleGeometry {
            chamfer: 0.0,
            friction_coeff: 0.0,
            wall_damping: 0.0,
            ..HoleGeometry::nominal()
        };
        let tilt = 0.02;
        let depth = 0.012;
        let (s, c) = (-FRAC_PI_2 + tilt).sin_cos();
        let half = 0.5 * g.peg_width;
        // lower right corner sits 20 µm inside the right wall
        let corner_x = g.center_x + 0.5 * g.width + 2e-5;
        let tip_x = corner_x + half * s;
        let pose = DVector::from_column_slice(&[tip_x, g.top_y - depth, -FRAC_PI_2 + tilt]);
        let contacts = contact_points(&pose, &still(), &g);
        assert_eq!(contacts.len(), 2, "{contacts:?}");
        // by hand: the wall pushes -x at the corner, the left hole edge pushes the peg side outward
        let corner = [tip_x - half * s, pose[1] + half * c];
        let f1 = [-g.wall_stiffness * 2e-5, 0.0];
        let vertex = [g.center_x - 0.5 * g.width, g.top_y];
        let rel = [vertex[0] - tip_x, vertex[1] - pose[1]];
        let lateral = rel[0] * s - rel[1] * c;
        let pen = half - lateral;
        let f2 = [-g.wall_stiffness * pen * s, g.wall_stiffness * pen * c];
        let moment = cross([corner[0] - tip_x, corner[1] - pose[1]], f1) + cross(rel, f2);
        let w = contact_wrench(&pose, &still(), &g);
        assert!((w[2] - moment).abs() < 1e-9 * moment.abs().max(1.0));
        assert!(
            w[2] * tilt < 0.0,
            "moment {} should oppose tilt {tilt}",
            w[2]
        );
    }

    #[test]
    fn normal_force_never_pulls() {
        let g = HoleGeometry::nominal();
        let x = g.center_x + 0.5 * g.clearance() + 1e-5;
        // fast withdrawal: damping would pull without the clamp
        let vel = DVector::from_column_slice(&[-1.0, 0.0, 0.0]);
        for cp in contact_points(&at(x, g.top_y - 0.01, 0.0), &vel, &g) {
            assert!(cp.normal_force >= 0.0);
        }
    }

    #[test]
    fn contact_does_not_create_energy() {
        // Drive the peg into the wall and back out along a prescribed path; the
        // work done on the peg can never exceed the spring energy stored.
        let g = HoleGeometry::nominal();
        let dt = 1e-4;
        let x0 = g.center_x + 0.5 * g.clearance();
        let mut work = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=4000 {
            let t = k as f64 * dt;
            let phase = (std::f64::consts::PI * t / 0.4).sin();
            let x = x0 + 2e-4 * phase;
            let v = 2e-4 * std::f64::consts::PI / 0.4 * (std::f64::consts::PI * t / 0.4).cos();
            let vel = DVector::from_column_slice(&[v, -0.01, 0.0]);
            let w = contact_wrench(&at(x, g.top_y - 0.01 - 0.01 * t, 0.0), &vel, &g);
            let power = w[0] * v + w[1] * -0.01;
            if let Some((p0, _)) = prev {
                work += 0.5 * (p0 + power) * dt;
            }
            prev = Some((power, x));
            let pen = (x - x0).max(0.0);
            assert!(
                work <= 0.5 * g.wall_stiffness * pen * pen + 1e-9,
                "t={t}: {work}"
            );
        }
        assert!(work <= 1e-9);
    }

    #[test]
    fn geometry_validation() {
        let mut g = HoleGeometry::nominal();
        assert!(g.validate().is_ok());
        assert!(HoleGeometry::tight().validate().is_ok());
        assert!((HoleGeometry::tight().clearance() - 3.4e-5).abs() < 1e-12);
        g.width = g.peg_width;
        assert!(g.validate().is_err());
        let g = HoleGeometry {
            friction_coeff: 2.0,
            ..HoleGeometry::nominal()
        };
        assert!(g.validate().is_err());
    }
}
