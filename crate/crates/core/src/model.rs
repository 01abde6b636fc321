//! Task, robot-structure, and control data model, plus DH-convention
//! forward kinematics producing the full segment state of the manipulator.
//!
//! A design is a serial chain of identical modules. Module `k` contributes
//! one revolute joint: the actuator body spans the DH offset `d` along the
//! joint axis, and a rigid link of length `r_k` connects it to the next
//! module. The manipulator state is the list of `2*n_dof + 1` global points
//! whose consecutive pairs are alternately actuator and link segments.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_sphere, Point3, Segment3, SphereObstacle, WallObstacle};

/// Force/moment pair acting on the end-effector, global frame.
/// Serialized as `[f_x, f_y, f_z, M_x, M_y, M_z]` in N and N·m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench {
        force: Vector3::new(0.0, 0.0, 0.0),
        moment: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(force: Vector3<f64>, moment: Vector3<f64>) -> Self {
        Wrench { force, moment }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|v| v.is_finite())
    }
}

impl From<[f64; 6]> for Wrench {
    fn from(a: [f64; 6]) -> Self {
        Wrench {
            force: Vector3::new(a[0], a[1], a[2]),
            moment: Vector3::new(a[3], a[4], a[5]),
        }
    }
}

impl From<Wrench> for [f64; 6] {
    fn from(w: Wrench) -> Self {
        [w.force.x, w.force.y, w.force.z, w.moment.x, w.moment.y, w.moment.z]
    }
}

/// One timed task point: reach `p` at time `t` while sustaining load `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskPoint {
    pub p: Point3,
    pub t: f64,
    #[serde(rename = "F")]
    pub f: Wrench,
}

/// Axis-aligned rectangle of admissible base origins, at fixed height `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

/// A complete task: ordered timed points, obstacles, and the base region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub points: Vec<TaskPoint>,
    #[serde(default)]
    pub spheres: Vec<SphereObstacle>,
    #[serde(default)]
    pub walls: Vec<WallObstacle>,
    pub base: BaseRegion,
}

/// Fixed per-module actuator data (identical modules).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    /// Actuator mass, kg.
    pub mass: f64,
    /// Radius of the actuator body cylinder, m.
    pub body_radius: f64,
    /// Height of the actuator body cylinder, m.
    pub body_height: f64,
    /// DH link offset along the joint axis, m (set by the actuator dimensions).
    pub d: f64,
    /// Torque limit, N·m.
    pub tau_max: f64,
    /// Optional joint velocity limit, rad/s. Absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
}

impl ActuatorSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("mass", self.mass),
            ("body_radius", self.body_radius),
            ("body_height", self.body_height),
            ("d", self.d),
            ("tau_max", self.tau_max),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("actuator.{name} must be positive, got {v}")));
            }
        }
        if let Some(w) = self.omega_max {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig(format!("actuator.omega_max must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// Fixed per-module link data: hollow cylinder of uniform density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Material density, kg/m³.
    pub density: f64,
    /// Inner radius (rad_1), m.
    pub rad_inner: f64,
    /// Outer radius (rad_2), m.
    pub rad_outer: f64,
    /// Component thickness used as the collision inflation diameter, m.
    pub delta: f64,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) {
            return Err(Error::InvalidConfig(format!("link.density must be positive, got {}", self.density)));
        }
        if !(self.rad_inner >= 0.0 && self.rad_inner < self.rad_outer) {
            return Err(Error::InvalidConfig(format!(
                "link radii must satisfy 0 <= rad_inner < rad_outer, got {} and {}",
                self.rad_inner, self.rad_outer
            )));
        }
        if self.delta + 1e-12 < 2.0 * self.rad_outer {
            return Err(Error::InvalidConfig(format!(
                "link.delta ({}) must cover the link diameter 2*rad_outer ({})",
                self.delta,
                2.0 * self.rad_outer
            )));
        }
        Ok(())
    }

    /// Mass of a link of length `r`, kg.
    pub fn mass(&self, r: f64) -> f64 {
        self.density * std::f64::consts::PI * (self.rad_outer.powi(2) - self.rad_inner.powi(2)) * r
    }
}

/// A manipulator structure: base origin, module count, per-module DH twist
/// and link length, and the shared actuator/link specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub origin: Point3,
    pub n_dof: usize,
    /// Twist angles α_k, rad.
    pub alpha: Vec<f64>,
    /// Link lengths r_k, m.
    pub r: Vec<f64>,
    pub actuator: ActuatorSpec,
    pub link: LinkSpec,
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.n_dof || self.r.len() != self.n_dof {
            return Err(Error::InvalidArgument(format!(
                "design arrays must have n_dof = {} entries (alpha: {}, r: {})",
                self.n_dof,
                self.alpha.len(),
                self.r.len()
            )));
        }
        if self.n_dof == 0 {
            return Err(Error::InvalidArgument("design must have at least one module".into()));
        }
        self.actuator.validate()?;
        self.link.validate()?;
        Ok(())
    }
}

/// Joint angles θ_k, rad. Stored unwrapped (no modulo).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub theta: Vec<f64>,
}

impl Configuration {
    pub fn new(theta: Vec<f64>) -> Self {
        Configuration { theta }
    }

    pub fn zeros(n: usize) -> Self {
        Configuration { theta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// The `2*n_dof + 1` global points `s_0 ..= s_{2 n_dof}` of a posed design:
/// `s_0` is the base origin and `s_{2 n_dof}` the end-effector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorState {
    pub points: Vec<Point3>,
}

impl ManipulatorState {
    pub fn n_dof(&self) -> usize {
        (self.points.len() - 1) / 2
    }

    /// End-effector position s_{2 n_dof}.
    pub fn ef(&self) -> Point3 {
        *self.points.last().expect("state has at least the origin")
    }
}

/// Label of one collision segment of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentLabel {
    /// Actuator body of module k (1-based).
    Act(usize),
    /// Link of module k (1-based).
    Link(usize),
}

impl std::fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegmentLabel::Act(k) => write!(f, "act_{k}"),
            SegmentLabel::Link(k) => write!(f, "link_{k}"),
        }
    }
}

/// The `2*n_dof` labeled segments of a state, alternating act_k, link_k.
/// Degenerate (zero-length) segments are preserved.
pub fn state_segments(state: &ManipulatorState) -> Vec<(SegmentLabel, Segment3)> {
    let mut out = Vec::with_capacity(state.points.len() - 1);
    for (i, pair) in state.points.windows(2).enumerate() {
        let k = i / 2 + 1;
        let label = if i % 2 == 0 { SegmentLabel::Act(k) } else { SegmentLabel::Link(k) };
        out.push((label, Segment3::new(pair[0], pair[1])));
    }
    out
}

/// One control sample: joint angles, velocities, and torques at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: f64,
    pub q: Configuration,
    pub q_dot: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Classic (distal) DH homogeneous transform
/// `Rot_z(θ) · Trans_z(d) · Trans_x(a) · Rot_x(α)`.
pub fn dh_transform(theta: f64, d: f64, a: f64, alpha: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Matrix4::new(
        ct, -st * ca, st * sa, a * ct,
        st, ct * ca, -ct * sa, a * st,
        0.0, sa, ca, d,
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Per-frame kinematic data of a posed design, used by the Jacobian and the
/// inverse dynamics: frame origins `O_0..O_n`, cumulative rotations
/// `R_{0,k}`, and the intermediate actuator endpoints.
///
/// Frame 0 sits at the design origin with axes equal to the global axes, so
/// the first joint axis is the global z-axis.
#[derive(Debug, Clone)]
pub struct FrameChain {
    /// O_k for k = 0..=n, global coordinates.
    pub origins: Vec<Vector3<f64>>,
    /// R_{0,k} for k = 0..=n (R_{0,0} = identity).
    pub rotations: Vec<Matrix3<f64>>,
    /// Actuator segment endpoints s_{2k-1} = O_{k-1} + d_k · z_{k-1}, k = 1..=n.
    pub act_points: Vec<Vector3<f64>>,
}

impl FrameChain {
    /// Joint axis z_{k-1} of joint k (1-based), global coordinates.
    pub fn joint_axis(&self, k: usize) -> Vector3<f64> {
        self.rotations[k - 1].column(2).into_owned()
    }

    /// End-effector position, global coordinates.
    pub fn ef(&self) -> Vector3<f64> {
        *self.origins.last().expect("chain has at least the base")
    }
}

/// Compute the frame chain of `design` posed at `q`.
pub fn frame_chain(design: &Design, q: &Configuration) -> Result<FrameChain> {
    design.validate()?;
    if q.len() != design.n_dof {
        return Err(Error::InvalidArgument(format!(
            "configuration has {} joint angles, design has {} modules",
            q.len(),
            design.n_dof
        )));
    }
    let n = design.n_dof;
    let mut origins = Vec::with_capacity(n + 1);
    let mut rotations = Vec::with_capacity(n + 1);
    let mut act_points = Vec::with_capacity(n);

    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&design.origin.coords());
    origins.push(design.origin.coords());
    rotations.push(Matrix3::identity());

    for k in 0..n {
        let z_prev: Vector3<f64> = rotations[k].column(2).into_owned();
        act_points.push(origins[k] + design.actuator.d * z_prev);
        t *= dh_transform(q.theta[k], design.actuator.d, design.r[k], design.alpha[k]);
        origins.push(t.fixed_view::<3, 1>(0, 3).into_owned());
        rotations.push(t.fixed_view::<3, 3>(0, 0).into_owned());
    }
    Ok(FrameChain { origins, rotations, act_points })
}

/// Forward kinematics: the full segment state `S = {s_0, ..., s_{2 n_dof}}`
/// of `design` posed at `q`.
pub fn forward_kinematics(design: &Design, q: &Configuration) -> Result<ManipulatorState> {
    let chain = frame_chain(design, q)?;
    let mut points = Vec::with_capacity(2 * design.n_dof + 1);
    points.push(Point3::from_coords(chain.origins[0]));
    for k in 0..design.n_dof {
        points.push(Point3::from_coords(chain.act_points[k]));
        points.push(Point3::from_coords(chain.origins[k + 1]));
    }
    Ok(ManipulatorState { points })
}

/// Check every task invariant; returns an empty list iff the task is valid.
/// Each violation names the offending field and the rule it breaks.
pub fn validate_task(task: &Task) -> Vec<String> {
    let mut v = Vec::new();
    if task.points.is_empty() {
        v.push("points: task must contain at least one point".to_string());
        return v;
    }
    for (i, tp) in task.points.iter().enumerate() {
        if !tp.p.is_finite() {
            v.push(format!("points[{i}].p: coordinates must be finite"));
        }
        if !tp.t.is_finite() {
            v.push(format!("points[{i}].t: timestamp must be finite"));
        }
        if !tp.f.is_finite() {
            v.push(format!("points[{i}].F: wrench must be finite"));
        }
    }
    if task.points[0].t != 0.0 {
        v.push(format!(
            "points[0].t: first timestamp must be 0, got {}",
            task.points[0].t
        ));
    }
    for i in 1..task.points.len() {
        if !(task.points[i].t > task.points[i - 1].t) {
            v.push(format!(
                "points[{i}].t: timestamps must be strictly increasing ({} after {})",
                task.points[i].t,
                task.points[i - 1].t
            ));
        }
    }
    for (j, s) in task.spheres.iter().enumerate() {
        if !(s.rad > 0.0) {
            v.push(format!("spheres[{j}].rad: radius must be positive, got {}", s.rad));
        }
        if !s.c.is_finite() {
            v.push(format!("spheres[{j}].c: center must be finite"));
        }
    }
    for (i, tp) in task.points.iter().enumerate() {
        for (j, s) in task.spheres.iter().enumerate() {
            if s.rad > 0.0 && point_in_sphere(&tp.p, s) {
                v.push(format!("points[{i}].p: task point {i} inside obstacle {j}"));
            }
        }
    }
    let b = &task.base;
    if !(b.x_min <= b.x_max) {
        v.push(format!("base: x_min ({}) must not exceed x_max ({})", b.x_min, b.x_max));
    }
    if !(b.y_min <= b.y_max) {
        v.push(format!("base: y_min ({}) must not exceed y_max ({})", b.y_min, b.y_max));
    }
    if ![b.x_min, b.x_max, b.y_min, b.y_max, b.z].iter().all(|x| x.is_finite()) {
        v.push("base: bounds must be finite".to_string());
    }
    v
}
