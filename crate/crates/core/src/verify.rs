//! Trajectory-following verification: discretize the trajectory into n†
//! points, solve collision-aware inverse kinematics at each, and check the
//! torque limits and inter-sample continuity bound along the way.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    self_collision_clearance, sphere_clearance, wall_collision, waypoint_dynamics, EvalConfig,
};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::kinodyn::{linear_jacobian, torque_margin};
use crate::model::{forward_kinematics, Configuration, ControlSample, Design, Task};
use crate::plan::{PiecewiseTrajectory, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iters: usize,
    /// Position tolerance on ‖EF − target‖, m.
    pub pos_tol: f64,
    /// Damped-least-squares factor λ.
    pub damping: f64,
    /// Number of perturbed-seed restarts after the plain seed fails.
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig { max_iters: 200, pos_tol: 1e-4, damping: 0.01, restarts: 16, rng_seed: 0x1717 }
    }
}

/// Why a verification run failed, earliest sample first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    IkFailed,
    Collision,
    Torque,
    Continuity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub passed: bool,
    pub samples: Vec<ControlSample>,
    pub first_failure: Option<(usize, FailureReason)>,
}

fn configuration_collides(
    design: &Design,
    q: &Configuration,
    task: &Task,
    delta: f64,
) -> Result<bool> {
    let state = forward_kinematics(design, q)?;
    Ok(sphere_clearance(&state, &task.spheres, delta).is_some_and(|g| g < 0.0)
        || wall_collision(&state, &task.walls) == 1
        || self_collision_clearance(&state, delta).is_some_and(|g| g < 0.0))
}

/// Collision-aware inverse kinematics: damped least-squares on the linear
/// Jacobian seeded at `q_seed`, retried from perturbed seeds when the
/// converged configuration collides or the iteration stalls. Returns `None`
/// when no collision-free solution is found within the budgets.
pub fn inverse_kinematics(
    design: &Design,
    target: &Point3,
    q_seed: &Configuration,
    task: &Task,
    delta: f64,
    cfg: &IkConfig,
) -> Result<Option<Configuration>> {
    if q_seed.len() != design.n_dof {
        return Err(Error::InvalidArgument(format!(
            "IK seed has {} angles, design has {} modules",
            q_seed.len(),
            design.n_dof
        )));
    }
    let lambda2 = cfg.damping * cfg.damping;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    for attempt in 0..=cfg.restarts {
        let mut q = q_seed.clone();
        if attempt > 0 {
            let spread = std::f64::consts::PI * attempt as f64 / cfg.restarts as f64;
            for th in &mut q.theta {
                *th += rng.random_range(-spread..spread);
            }
        }
        for _ in 0..cfg.max_iters {
            let ef = forward_kinematics(design, &q)?.ef();
            let e = *target - ef;
            if e.norm() <= cfg.pos_tol {
                break;
            }
            let j = linear_jacobian(design, &q)?.matrix;
            let jjt = &j * j.transpose();
            let mut a = Matrix3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    a[(r, c)] = jjt[(r, c)];
                }
            }
            a += Matrix3::identity() * lambda2;
            let y = a.lu().solve(&e).unwrap_or_else(Vector3::zeros);
            let dq = j.transpose() * y;
            let cap = dq.amax().max(1e-300);
            let scale = if cap > 0.5 { 0.5 / cap } else { 1.0 };
            for k in 0..q.theta.len() {
                q.theta[k] += scale * dq[k];
            }
        }
        let ef = forward_kinematics(design, &q)?.ef();
        if (*target - ef).norm() <= cfg.pos_tol && !configuration_collides(design, &q, task, delta)? {
            return Ok(Some(q));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub ik: IkConfig,
    pub eval: EvalConfig,
}

/// Load carried at time `t`: the step function over waypoint intervals.
fn load_at(waypoints: &[Waypoint], t: f64) -> crate::model::Wrench {
    let idx = waypoints
        .partition_point(|w| w.t <= t)
        .saturating_sub(1)
        .min(waypoints.len() - 1);
    waypoints[idx].f
}

/// Continuity slack absorbing the IK position tolerance and third-order
/// discretization dust, rad.
const CONTINUITY_FLOOR: f64 = 1e-3;

/// Per-joint bound on the distance an actuator can travel during one sample
/// interval, from the commanded velocities and accelerations at its
/// endpoints. The acceleration term covers velocity crests inside the
/// interval, which the endpoint velocities alone underestimate by O(dt²).
pub fn continuity_bound(q_dot_a: f64, q_dot_b: f64, q_ddot_a: f64, q_ddot_b: f64, dt: f64) -> f64 {
    q_dot_a.abs().max(q_dot_b.abs()) * dt
        + 0.5 * q_ddot_a.abs().max(q_ddot_b.abs()) * dt * dt
        + CONTINUITY_FLOOR
}

/// Follow the trajectory at n† uniformly spaced samples: IK each point
/// (seeded by integrating the previous sample's commanded velocity, the
/// first with `q_init`), recompute joint velocities/accelerations and
/// torques, and enforce the torque margin plus the per-joint continuity
/// bound between consecutive samples.
pub fn verify_trajectory(
    design: &Design,
    traj: &PiecewiseTrajectory,
    waypoints: &[Waypoint],
    task: &Task,
    q_init: &Configuration,
    n_dagger: usize,
    cfg: &VerifyConfig,
) -> Result<VerificationResult> {
    if n_dagger <= waypoints.len() {
        return Err(Error::InvalidArgument(format!(
            "n_dagger ({n_dagger}) must exceed the waypoint count ({})",
            waypoints.len()
        )));
    }
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let dt = (t1 - t0) / (n_dagger - 1) as f64;

    let mut samples: Vec<ControlSample> = Vec::with_capacity(n_dagger);
    let fail = |idx: usize, reason: FailureReason, samples: Vec<ControlSample>| {
        Ok(VerificationResult { passed: false, samples, first_failure: Some((idx, reason)) })
    };

    let mut seed = q_init.clone();
    let mut prev_q_ddot: Vec<f64> = vec![0.0; design.n_dof];
    for j in 0..n_dagger {
        let t = (t0 + j as f64 * dt).min(t1);
        let (p, _, _) = crate::plan::sample_trajectory(traj, t)?;
        let q = match inverse_kinematics(design, &p, &seed, task, cfg.eval.delta, &cfg.ik)? {
            Some(q) => q,
            None => return fail(j, FailureReason::IkFailed, samples),
        };
        // independent soundness recheck of the IK result
        let state = forward_kinematics(design, &q)?;
        if state.ef().distance(&p) > cfg.ik.pos_tol
            || configuration_collides(design, &q, task, cfg.eval.delta)?
        {
            return fail(j, FailureReason::Collision, samples);
        }

        let load = load_at(waypoints, t);
        let (q_dot, q_ddot, tau, _) =
            waypoint_dynamics(design, &q, traj, t, &load, &cfg.eval.gravity)?;
        if cfg.eval.check_torque
            && torque_margin(&tau, cfg.eval.tau_max, cfg.eval.beta)? < 0.0
        {
            return fail(j, FailureReason::Torque, samples);
        }

        if let Some(prev) = samples.last() {
            for k in 0..design.n_dof {
                let eps =
                    continuity_bound(prev.q_dot[k], q_dot[k], prev_q_ddot[k], q_ddot[k], dt);
                if (q.theta[k] - prev.q.theta[k]).abs() > eps {
                    return fail(j, FailureReason::Continuity, samples);
                }
            }
        }

        // feedforward seed: integrate the commanded velocity so the next IK
        // only corrects O(dt²) residuals instead of chasing a full step
        seed = Configuration::new(
            q.theta.iter().zip(&q_dot).map(|(th, qd)| th + qd * dt).collect(),
        );
        prev_q_ddot = q_ddot;
        samples.push(ControlSample { t, q, q_dot, tau });
    }
    Ok(VerificationResult { passed: true, samples, first_failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SphereObstacle;
    use crate::model::{ActuatorSpec, BaseRegion, LinkSpec, TaskPoint, Wrench};

    fn design(alpha: Vec<f64>, r: Vec<f64>) -> Design {
        Design {
            origin: Point3::new(0.0, 0.0, 0.0),
            n_dof: alpha.len(),
            alpha,
            r,
            actuator: ActuatorSpec {
                mass: 0.34,
                body_radius: 0.035,
                body_height: 0.055,
                d: 0.08,
                tau_max: 8.0,
                omega_max: None,
            },
            link: LinkSpec { density: 2700.0, rad_inner: 0.0143, rad_outer: 0.0159, delta: 0.032 },
        }
    }

    fn free_task() -> Task {
        Task {
            points: vec![TaskPoint { p: Point3::new(0.3, 0.0, 0.16), t: 0.0, f: Wrench::ZERO }],
            spheres: vec![],
            walls: vec![],
            base: BaseRegion { x_min: -0.1, x_max: 0.1, y_min: -0.1, y_max: 0.1, z: 0.0 },
        }
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let d = design(vec![0.0, 0.0], vec![0.2, 0.3]);
        let q = Configuration::new(vec![0.4, -0.9]);
        let target = forward_kinematics(&d, &q).unwrap().ef();
        let got = inverse_kinematics(&d, &target, &q, &free_task(), 0.032, &IkConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(got, q);
    }

    #[test]
    fn ik_matches_closed_form_two_link() {
        // planar two-link: the EF stays at height 2d and the reachable set is
        // an annulus; closed-form elbow solutions from the law of cosines
        let d = design(vec![0.0, 0.0], vec![0.25, 0.35]);
        let (r1, r2) = (d.r[0], d.r[1]);
        let target_planar = 0.5f64;
        let target = Point3::new(target_planar, 0.0, 2.0 * d.actuator.d);
        let c2 = (target_planar.powi(2) - r1 * r1 - r2 * r2) / (2.0 * r1 * r2);
        let th2 = c2.acos();
        let th1 = -(r2 * th2.sin()).atan2(r1 + r2 * th2.cos());

        let seed = Configuration::new(vec![th1 + 0.2, th2 - 0.3]);
        let cfg = IkConfig { pos_tol: 1e-9, ..Default::default() };
        let got = inverse_kinematics(&d, &target, &seed, &free_task(), 0.032, &cfg)
            .unwrap()
            .unwrap();
        // nearest branch to the seed is the elbow-down pair (th1, th2)
        assert!(
            (got.theta[0] - th1).abs() < 1e-6 && (got.theta[1] - th2).abs() < 1e-6,
            "got {:?}, expected ({th1}, {th2})",
            got.theta
        );
    }

    #[test]
    fn ik_fails_beyond_reach() {
        let d = design(vec![0.0, 0.0], vec![0.2, 0.3]);
        let target = Point3::new(2.0, 0.0, 0.16);
        let got = inverse_kinematics(
            &d,
            &target,
            &Configuration::zeros(2),
            &free_task(),
            0.032,
            &IkConfig::default(),
        )
        .unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn ik_rejects_colliding_branch() {
        // target reachable, but a sphere sits on the elbow-down branch's
        // elbow; IK must return the mirrored branch instead
        let d = design(vec![0.0, 0.0], vec![0.25, 0.35]);
        let target = Point3::new(0.5, 0.0, 2.0 * d.actuator.d);
        let (r1, r2) = (d.r[0], d.r[1]);
        let c2 = (0.5f64.powi(2) - r1 * r1 - r2 * r2) / (2.0 * r1 * r2);
        let th2 = c2.acos();
        let th1 = -(r2 * th2.sin()).atan2(r1 + r2 * th2.cos());
        let elbow = forward_kinematics(&d, &Configuration::new(vec![th1, th2]))
            .unwrap()
            .points[2];
        let mut task = free_task();
        task.spheres.push(SphereObstacle { c: elbow, rad: 0.04 });
        let seed = Configuration::new(vec![th1, th2]);
        let got = inverse_kinematics(&d, &target, &seed, &task, 0.032, &IkConfig::default())
            .unwrap()
            .expect("mirror branch is collision-free");
        assert!(!configuration_collides(&d, &got, &task, 0.032).unwrap());
        assert!(forward_kinematics(&d, &got).unwrap().ef().distance(&target) <= 1e-4);
    }
}
