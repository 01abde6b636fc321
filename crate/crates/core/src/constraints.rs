//! Evaluation of every task constraint for a candidate (design,
//! configuration set): reachability, sphere/wall/self collision, origin
//! bounds, link-length ordering, and torque margin, aggregated into a
//! feasibility report.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{seg_seg_distance, seg_wall_intersect, Point3, SphereObstacle, WallObstacle};
use crate::kinodyn::{
    jacobian_time_derivative, joint_velocities, linear_jacobian, rnea, torque_margin,
};
use crate::model::{
    forward_kinematics, state_segments, BaseRegion, Configuration, ControlSample, Design,
    ManipulatorState, Task, Wrench,
};
use crate::plan::{sample_trajectory, PiecewiseTrajectory, Waypoint};

/// Parameters shared by all constraint evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Component thickness Δ used to inflate collision clearances, m.
    pub delta: f64,
    /// Torque safety factor β (≥ 1).
    pub beta: f64,
    /// Actuator torque limit, N·m.
    pub tau_max: f64,
    /// Reachability tolerance: h^R ≤ tol_reach counts as reaching, m.
    pub tol_reach: f64,
    /// When false, torque rows are skipped (kinematic-only mode).
    pub check_torque: bool,
    /// Gravity vector, global frame, m/s².
    pub gravity: Vector3<f64>,
    /// Minimum link length r_0, m.
    pub r_min: f64,
    /// Maximum link length r_max, m.
    pub r_max: f64,
}

/// One waypoint's constraint values. Clearance fields are `None` when the
/// constraint has nothing to act on (no obstacles, no eligible segment
/// pairs), which reads as "unconstrained" in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRow {
    /// Reach residual ‖EF − p‖, m.
    pub h_r: f64,
    /// Sphere clearance, m; negative means collision.
    pub g_s: Option<f64>,
    /// Wall intersection indicator: 0 or 1.
    pub h_w: u8,
    /// Self-collision clearance, m; negative means collision.
    pub g_sc: Option<f64>,
    /// Torque margin, N·m; `None` when torque checking is disabled.
    pub g_tau: Option<f64>,
}

impl WaypointRow {
    fn feasible(&self, tol_reach: f64) -> bool {
        self.h_r <= tol_reach
            && self.h_w == 0
            && self.g_s.map_or(true, |v| v >= 0.0)
            && self.g_sc.map_or(true, |v| v >= 0.0)
            && self.g_tau.map_or(true, |v| v >= 0.0)
    }
}

/// Full feasibility report over all waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub rows: Vec<WaypointRow>,
    pub origin_ok: bool,
    pub link_order_ok: bool,
    pub feasible: bool,
    pub tol_reach: f64,
}

/// Reach residual h^R: Euclidean distance between the posed EF and `p`.
pub fn reachability(design: &Design, q: &Configuration, p: &Point3) -> Result<f64> {
    Ok(forward_kinematics(design, q)?.ef().distance(p))
}

/// Sphere clearance g^S: minimum over all (obstacle, segment) pairs of the
/// segment-to-center distance minus (rad + Δ). `None` when there are no
/// spheres.
pub fn sphere_clearance(
    state: &ManipulatorState,
    spheres: &[SphereObstacle],
    delta: f64,
) -> Option<f64> {
    if spheres.is_empty() {
        return None;
    }
    let mut min = f64::INFINITY;
    for (_, seg) in state_segments(state) {
        for o in spheres {
            let d = crate::geom::seg_point_distance(&seg, &o.c) - (o.rad + delta);
            min = min.min(d);
        }
    }
    Some(min)
}

/// Wall collision h^W: 1 iff any chain segment crosses any wall.
pub fn wall_collision(state: &ManipulatorState, walls: &[WallObstacle]) -> u8 {
    for (_, seg) in state_segments(state) {
        for w in walls {
            if seg_wall_intersect(&seg, w) {
                return 1;
            }
        }
    }
    0
}

/// Self-collision clearance g^SC: minimum over all non-adjacent segment
/// pairs (pairs sharing an endpoint are excluded) of the segment-segment
/// distance minus 2Δ. `None` when no eligible pair exists.
pub fn self_collision_clearance(state: &ManipulatorState, delta: f64) -> Option<f64> {
    let segs = state_segments(state);
    let mut min: Option<f64> = None;
    for i in 0..segs.len() {
        for j in i + 2..segs.len() {
            let d = seg_seg_distance(&segs[i].1, &segs[j].1) - 2.0 * delta;
            min = Some(min.map_or(d, |m: f64| m.min(d)));
        }
    }
    min
}

/// True iff the origin lies in the closed base rectangle at its height.
pub fn origin_in_region(origin: &Point3, b: &BaseRegion) -> bool {
    origin.x >= b.x_min
        && origin.x <= b.x_max
        && origin.y >= b.y_min
        && origin.y <= b.y_max
        && (origin.z - b.z).abs() <= 1e-12
}

/// True iff r_min ≤ r_1 ≤ … ≤ r_n ≤ r_max (equalities allowed).
pub fn link_order_ok(r: &[f64], r_min: f64, r_max: f64) -> bool {
    let mut prev = r_min;
    for &v in r {
        if v < prev {
            return false;
        }
        prev = v;
    }
    prev <= r_max
}

/// Accelerations and torques at one trajectory time given the joint
/// velocities: q̈ = J⁺(a − J̇q̇), τ from the Newton-Euler recursion under
/// the given load.
pub fn dynamics_from_q_dot(
    design: &Design,
    q: &Configuration,
    q_dot: &[f64],
    traj: &PiecewiseTrajectory,
    t: f64,
    load: &Wrench,
    gravity: &Vector3<f64>,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let (_, _, a) = sample_trajectory(traj, t)?;
    let j = linear_jacobian(design, q)?;
    let jdot = jacobian_time_derivative(design, q, q_dot)?;
    let qd = nalgebra::DMatrix::from_column_slice(q_dot.len(), 1, q_dot);
    let bias = &jdot * qd;
    let rhs = a - Vector3::new(bias[(0, 0)], bias[(1, 0)], bias[(2, 0)]);
    let acc = joint_velocities(&j, &rhs);
    let tau = rnea(design, q, q_dot, &acc.values, load, gravity)?;
    Ok((acc.values, tau, acc.near_singular))
}

/// Joint velocities, accelerations, and torques commanded at one trajectory
/// time: q̇ = J⁺v, q̈ = J⁺(a − J̇q̇), τ from the Newton-Euler recursion under
/// the waypoint load. Also reports whether the Jacobian was near singular.
pub fn waypoint_dynamics(
    design: &Design,
    q: &Configuration,
    traj: &PiecewiseTrajectory,
    t: f64,
    load: &Wrench,
    gravity: &Vector3<f64>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> {
    let (_, v, _) = sample_trajectory(traj, t)?;
    let j = linear_jacobian(design, q)?;
    let vel = joint_velocities(&j, &v);
    let (q_ddot, tau, acc_singular) =
        dynamics_from_q_dot(design, q, &vel.values, traj, t, load, gravity)?;
    Ok((vel.values, q_ddot, tau, vel.near_singular || acc_singular))
}

/// Evaluate every constraint for the candidate solution. Torque rows are
/// recomputed from scratch (configuration, trajectory, load) rather than
/// taken from the control samples, so the report is independent of any
/// cached values.
pub fn evaluate_all(
    design: &Design,
    controls: &[ControlSample],
    waypoints: &[Waypoint],
    traj: &PiecewiseTrajectory,
    task: &Task,
    cfg: &EvalConfig,
) -> Result<ConstraintReport> {
    if controls.len() != waypoints.len() {
        return Err(Error::InvalidArgument(format!(
            "controls ({}) and waypoints ({}) must align by index",
            controls.len(),
            waypoints.len()
        )));
    }
    let mut rows = Vec::with_capacity(waypoints.len());
    for (c, w) in controls.iter().zip(waypoints) {
        let state = forward_kinematics(design, &c.q)?;
        let h_r = state.ef().distance(&w.p);
        let g_s = sphere_clearance(&state, &task.spheres, cfg.delta);
        let h_w = wall_collision(&state, &task.walls);
        let g_sc = self_collision_clearance(&state, cfg.delta);
        let g_tau = if cfg.check_torque {
            let (_, _, tau, _) = waypoint_dynamics(design, &c.q, traj, w.t, &w.f, &cfg.gravity)?;
            Some(torque_margin(&tau, cfg.tau_max, cfg.beta)?)
        } else {
            None
        };
        rows.push(WaypointRow { h_r, g_s, h_w, g_sc, g_tau });
    }
    let origin_ok = origin_in_region(&design.origin, &task.base);
    let link_order = link_order_ok(&design.r, cfg.r_min, cfg.r_max);
    let feasible =
        origin_ok && link_order && rows.iter().all(|r| r.feasible(cfg.tol_reach));
    Ok(ConstraintReport {
        rows,
        origin_ok,
        link_order_ok: link_order,
        feasible,
        tol_reach: cfg.tol_reach,
    })
}
