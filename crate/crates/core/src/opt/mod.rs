//! Constrained-optimization formulations over the decision vector
//! (base x, base y, twist angles, link lengths, and per-waypoint joint
//! angles): the kinematic stage with soft collision costs that seeds the
//! full stage with hard kinodynamic constraints.

mod solver;

pub use solver::{solve_nlp, NlpProblem, OptResult, ProblemEval, SolverConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{
    evaluate_all, self_collision_clearance, sphere_clearance, wall_collision, waypoint_dynamics,
    EvalConfig,
};
use crate::error::Result;
use crate::geom::{seg_wall_intersect, WallObstacle};
use crate::kinodyn::torque_margin;
use crate::model::{
    forward_kinematics, state_segments, ActuatorSpec, Configuration, ControlSample, Design,
    LinkSpec, ManipulatorState, Task,
};
use crate::plan::{PiecewiseTrajectory, Waypoint};
use crate::verify::{inverse_kinematics, IkConfig};

/// Index map of the flat decision vector
/// `[base_x, base_y, α_1..α_n, r_1..r_n, θ_{1,1}..θ_{n*,n}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub n_dof: usize,
    pub n_waypoints: usize,
}

impl DecisionLayout {
    pub fn len(&self) -> usize {
        2 + 2 * self.n_dof + self.n_dof * self.n_waypoints
    }

    pub fn base_x(&self) -> usize {
        0
    }

    pub fn base_y(&self) -> usize {
        1
    }

    pub fn alpha(&self, k: usize) -> usize {
        2 + k
    }

    pub fn r(&self, k: usize) -> usize {
        2 + self.n_dof + k
    }

    /// Joint k of waypoint i.
    pub fn theta(&self, i: usize, k: usize) -> usize {
        2 + 2 * self.n_dof + i * self.n_dof + k
    }

    pub fn decode(&self, x: &[f64], tmpl: &DesignTemplate) -> (Design, Vec<Configuration>) {
        let design = Design {
            origin: crate::geom::Point3::new(x[self.base_x()], x[self.base_y()], tmpl.base_z),
            n_dof: self.n_dof,
            alpha: (0..self.n_dof).map(|k| x[self.alpha(k)]).collect(),
            r: (0..self.n_dof).map(|k| x[self.r(k)]).collect(),
            actuator: tmpl.actuator,
            link: tmpl.link,
        };
        let qs = (0..self.n_waypoints)
            .map(|i| Configuration::new((0..self.n_dof).map(|k| x[self.theta(i, k)]).collect()))
            .collect();
        (design, qs)
    }

    pub fn encode(&self, design: &Design, qs: &[Configuration]) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        x[self.base_x()] = design.origin.x;
        x[self.base_y()] = design.origin.y;
        for k in 0..self.n_dof {
            x[self.alpha(k)] = design.alpha[k];
            x[self.r(k)] = design.r[k];
        }
        for (i, q) in qs.iter().enumerate() {
            for k in 0..self.n_dof {
                x[self.theta(i, k)] = q.theta[k];
            }
        }
        x
    }
}

/// Fixed parts of a design that the optimizer does not decide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignTemplate {
    pub base_z: f64,
    pub actuator: ActuatorSpec,
    pub link: LinkSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub solver: SolverConfig,
    /// Clearance terms in the soft objective are clamped at this value so
    /// the objective stays bounded below.
    pub clearance_cap: f64,
    pub eval: EvalConfig,
    pub ik: IkConfig,
    /// Perturbed-start fan size for the post-optimization collision repair.
    pub repair_restarts: usize,
    pub actuator: ActuatorSpec,
    pub link: LinkSpec,
}

impl OptConfig {
    fn template(&self, task: &Task) -> DesignTemplate {
        DesignTemplate { base_z: task.base.z, actuator: self.actuator, link: self.link }
    }
}

/// Depth of a segment/wall crossing: zero when the segment does not cross,
/// otherwise the smaller endpoint distance to the plane. A piecewise-linear
/// stand-in for the binary intersect inside smooth objectives; feasibility
/// reports keep the exact binary form.
fn wall_hinge(state: &ManipulatorState, walls: &[WallObstacle]) -> f64 {
    let mut total = 0.0;
    for (_, seg) in state_segments(state) {
        for w in walls {
            if seg_wall_intersect(&seg, w) {
                let da = w.signed_distance(&seg.a).abs();
                let db = w.signed_distance(&seg.b).abs();
                total += da.min(db);
            }
        }
    }
    total
}

fn box_bounds(layout: &DecisionLayout, task: &Task, cfg: &EvalConfig) -> (Vec<f64>, Vec<f64>) {
    let n = layout.len();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    lo[layout.base_x()] = task.base.x_min;
    hi[layout.base_x()] = task.base.x_max;
    lo[layout.base_y()] = task.base.y_min;
    hi[layout.base_y()] = task.base.y_max;
    for k in 0..layout.n_dof {
        lo[layout.alpha(k)] = 0.0;
        hi[layout.alpha(k)] = 2.0 * std::f64::consts::PI;
        lo[layout.r(k)] = cfg.r_min;
        hi[layout.r(k)] = cfg.r_max;
    }
    (lo, hi)
}

fn reach_names(n_wp: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(3 * n_wp);
    for i in 0..n_wp {
        for axis in ["x", "y", "z"] {
            names.push(format!("reach[{i}].{axis}"));
        }
    }
    names
}

fn link_order_names(n_dof: usize) -> Vec<String> {
    (1..n_dof).map(|k| format!("link_order[{k}]")).collect()
}

/// Kinematic-stage optimization: soft collision costs in the objective,
/// reachability as hard equalities, origin and link bounds as box/order
/// constraints. After the solve, waypoint configurations that still collide
/// are repaired by collision-aware IK from a fan of perturbed starts.
pub fn kinematic_optimize(
    task: &Task,
    waypoints: &[Waypoint],
    n_dof: usize,
    x0: &[f64],
    cfg: &OptConfig,
) -> Result<OptResult> {
    let layout = DecisionLayout { n_dof, n_waypoints: waypoints.len() };
    let tmpl = cfg.template(task);
    let cap = cfg.clearance_cap;
    let delta = cfg.eval.delta;
    let n_wp = waypoints.len();
    let targets: Vec<crate::geom::Point3> = waypoints.iter().map(|w| w.p).collect();

    let eval_task = task.clone();
    let batched = move |x: &[f64]| -> ProblemEval {
        let (design, qs) = layout.decode(x, &tmpl);
        let mut out = ProblemEval {
            objective: 0.0,
            eq: Vec::with_capacity(3 * n_wp),
            ineq: Vec::with_capacity(n_dof.saturating_sub(1)),
        };
        for (i, q) in qs.iter().enumerate() {
            match forward_kinematics(&design, q) {
                Ok(state) => {
                    let ef = state.ef();
                    out.eq.push(ef.x - targets[i].x);
                    out.eq.push(ef.y - targets[i].y);
                    out.eq.push(ef.z - targets[i].z);
                    let g_s = sphere_clearance(&state, &eval_task.spheres, delta).unwrap_or(cap);
                    let g_sc = self_collision_clearance(&state, delta).unwrap_or(cap);
                    out.objective +=
                        -g_s.min(cap) + wall_hinge(&state, &eval_task.walls) - g_sc.min(cap);
                }
                Err(_) => {
                    out.objective = f64::NAN;
                    out.eq.extend([f64::NAN; 3]);
                }
            }
        }
        for k in 1..n_dof {
            out.ineq.push(x[layout.r(k)] - x[layout.r(k - 1)]);
        }
        out
    };

    let (lower, upper) = box_bounds(&layout, task, &cfg.eval);
    let problem = NlpProblem {
        eval: Box::new(batched),
        objective_name: "soft_collision_cost".into(),
        eq_names: reach_names(n_wp),
        ineq_names: link_order_names(n_dof),
        lower,
        upper,
    };
    let mut res = solve_nlp(&problem, x0, &cfg.solver)?;

    // Post-hoc collision repair: the soft objective tolerates collisions,
    // the returned configurations must not.
    let (design, qs) = layout.decode(&res.x, &tmpl);
    let mut repaired = false;
    for (i, q) in qs.iter().enumerate() {
        let state = forward_kinematics(&design, q)?;
        let colliding = sphere_clearance(&state, &task.spheres, delta).is_some_and(|g| g < 0.0)
            || wall_collision(&state, &task.walls) == 1
            || self_collision_clearance(&state, delta).is_some_and(|g| g < 0.0);
        if colliding {
            let ik_cfg = IkConfig {
                restarts: cfg.repair_restarts,
                pos_tol: cfg.ik.pos_tol.min(1e-6),
                max_iters: 2 * cfg.ik.max_iters,
                rng_seed: crate::util::derive_seed(cfg.ik.rng_seed, &[0x7265_7061, i as u64]),
                ..cfg.ik
            };
            if let Some(q_new) =
                inverse_kinematics(&design, &waypoints[i].p, q, task, delta, &ik_cfg)?
            {
                for k in 0..n_dof {
                    res.x[layout.theta(i, k)] = q_new.theta[k];
                }
                repaired = true;
            }
        }
    }
    if repaired {
        let evx = (problem.eval)(&res.x);
        res.objective = evx.objective;
        let viol = evx
            .eq
            .iter()
            .map(|c| c.abs())
            .chain(evx.ineq.iter().map(|c| (-c).max(0.0)))
            .fold(0.0f64, f64::max);
        res.constraint_violation = viol;
        res.converged = res.converged && viol <= cfg.solver.feas_tol;
    }
    Ok(res)
}

/// Full-stage optimization: maximize the worst torque margin subject to
/// reachability, collision, torque, origin, and link-length constraints.
/// Torques flow from the trajectory samples through the pseudo-inverse
/// velocity/acceleration maps into the Newton-Euler recursion.
pub fn full_optimize(
    task: &Task,
    waypoints: &[Waypoint],
    traj: &PiecewiseTrajectory,
    n_dof: usize,
    x0: &[f64],
    cfg: &OptConfig,
) -> Result<OptResult> {
    let layout = DecisionLayout { n_dof, n_waypoints: waypoints.len() };
    let tmpl = cfg.template(task);
    let delta = cfg.eval.delta;
    let beta = cfg.eval.beta;
    let tau_max = cfg.eval.tau_max;
    let gravity = cfg.eval.gravity;
    let n_wp = waypoints.len();
    let has_spheres = !task.spheres.is_empty();
    let has_walls = !task.walls.is_empty();
    let has_self = n_dof >= 2;

    let mut ineq_names = link_order_names(n_dof);
    for i in 0..n_wp {
        if has_spheres {
            ineq_names.push(format!("sphere_clearance[{i}]"));
        }
        if has_self {
            ineq_names.push(format!("self_clearance[{i}]"));
        }
        if has_walls {
            ineq_names.push(format!("wall[{i}]"));
        }
        ineq_names.push(format!("torque_margin[{i}]"));
    }

    let eval_task = task.clone();
    let eval_traj = traj.clone();
    let wps: Vec<Waypoint> = waypoints.to_vec();
    let batched = move |x: &[f64]| -> ProblemEval {
        let (design, qs) = layout.decode(x, &tmpl);
        let mut out = ProblemEval {
            objective: 0.0,
            eq: Vec::with_capacity(3 * n_wp),
            ineq: Vec::with_capacity(ineq_count(n_dof, n_wp, has_spheres, has_self, has_walls)),
        };
        for k in 1..n_dof {
            out.ineq.push(x[layout.r(k)] - x[layout.r(k - 1)]);
        }
        for (i, q) in qs.iter().enumerate() {
            let state = match forward_kinematics(&design, q) {
                Ok(s) => s,
                Err(_) => {
                    out.objective = f64::NAN;
                    out.eq.extend([f64::NAN; 3]);
                    continue;
                }
            };
            let ef = state.ef();
            out.eq.push(ef.x - wps[i].p.x);
            out.eq.push(ef.y - wps[i].p.y);
            out.eq.push(ef.z - wps[i].p.z);
            if has_spheres {
                out.ineq.push(
                    sphere_clearance(&state, &eval_task.spheres, delta).unwrap_or(f64::INFINITY),
                );
            }
            if has_self {
                out.ineq.push(self_collision_clearance(&state, delta).unwrap_or(f64::INFINITY));
            }
            if has_walls {
                out.ineq.push(-wall_hinge(&state, &eval_task.walls));
            }
            let margin = match waypoint_dynamics(&design, q, &eval_traj, wps[i].t, &wps[i].f, &gravity)
            {
                Ok((_, _, tau, _)) => torque_margin(&tau, tau_max, beta).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            };
            out.ineq.push(margin);
            out.objective -= margin;
        }
        out
    };

    let (lower, upper) = box_bounds(&layout, task, &cfg.eval);
    let problem = NlpProblem {
        eval: Box::new(batched),
        objective_name: "torque_margin_cost".into(),
        eq_names: reach_names(n_wp),
        ineq_names,
        lower,
        upper,
    };
    solve_nlp(&problem, x0, &cfg.solver)
}

fn ineq_count(n_dof: usize, n_wp: usize, spheres: bool, selfc: bool, walls: bool) -> usize {
    n_dof.saturating_sub(1)
        + n_wp * (1 + usize::from(spheres) + usize::from(selfc) + usize::from(walls))
}

/// Check whether a kinematic-stage solution already satisfies every
/// kinematic and dynamic requirement, allowing the full stage to be skipped.
pub fn feasibility_probe(
    design: &Design,
    qs: &[Configuration],
    waypoints: &[Waypoint],
    traj: &PiecewiseTrajectory,
    task: &Task,
    eval: &EvalConfig,
) -> Result<bool> {
    let controls: Vec<ControlSample> = qs
        .iter()
        .zip(waypoints)
        .map(|(q, w)| ControlSample {
            t: w.t,
            q: q.clone(),
            q_dot: vec![0.0; q.len()],
            tau: vec![0.0; q.len()],
        })
        .collect();
    Ok(evaluate_all(design, &controls, waypoints, traj, task, eval)?.feasible)
}

/// Random initial decision vector: base uniform in the region, twists in
/// [0, 2π], link lengths uniform then sorted ascending, joint angles in
/// [−π, π].
pub fn random_initial_guess(
    layout: &DecisionLayout,
    task: &Task,
    r_min: f64,
    r_max: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; layout.len()];
    let b = &task.base;
    x[layout.base_x()] =
        if b.x_max > b.x_min { rng.random_range(b.x_min..b.x_max) } else { b.x_min };
    x[layout.base_y()] =
        if b.y_max > b.y_min { rng.random_range(b.y_min..b.y_max) } else { b.y_min };
    for k in 0..layout.n_dof {
        x[layout.alpha(k)] = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    }
    let mut rs: Vec<f64> = (0..layout.n_dof).map(|_| rng.random_range(r_min..r_max)).collect();
    rs.sort_by(f64::total_cmp);
    for k in 0..layout.n_dof {
        x[layout.r(k)] = rs[k];
    }
    for i in 0..layout.n_waypoints {
        for k in 0..layout.n_dof {
            x[layout.theta(i, k)] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::model::{BaseRegion, TaskPoint, Wrench};
    use crate::plan::fit_trajectory;

    pub(super) fn actuator() -> ActuatorSpec {
        ActuatorSpec {
            mass: 0.34,
            body_radius: 0.035,
            body_height: 0.055,
            d: 0.08,
            tau_max: 8.0,
            omega_max: None,
        }
    }

    pub(super) fn link() -> LinkSpec {
        LinkSpec { density: 2700.0, rad_inner: 0.0143, rad_outer: 0.0159, delta: 0.032 }
    }

    pub(super) fn opt_cfg() -> OptConfig {
        OptConfig {
            solver: SolverConfig::default(),
            clearance_cap: 0.2,
            eval: EvalConfig {
                delta: 0.032,
                beta: 2.0,
                tau_max: 8.0,
                tol_reach: 1e-4,
                check_torque: true,
                gravity: crate::kinodyn::GRAVITY,
                r_min: 0.08,
                r_max: 0.6,
            },
            ik: IkConfig::default(),
            repair_restarts: 16,
            actuator: actuator(),
            link: link(),
        }
    }

    pub(super) fn free_task(points: Vec<(Point3, f64)>) -> Task {
        Task {
            points: points
                .into_iter()
                .map(|(p, t)| TaskPoint { p, t, f: Wrench::ZERO })
                .collect(),
            spheres: vec![],
            walls: vec![],
            base: BaseRegion { x_min: -0.15, x_max: 0.15, y_min: -0.15, y_max: 0.15, z: 0.0 },
        }
    }

    fn waypoints_of(task: &Task) -> Vec<Waypoint> {
        task.points.iter().map(|tp| Waypoint { p: tp.p, t: tp.t, f: tp.f }).collect()
    }

    #[test]
    fn kinematic_stage_reaches_free_space_waypoints() {
        // The problem is nonconvex; like the pipeline, accept the first of a
        // few seeded restarts that reaches both waypoints.
        let task = free_task(vec![
            (Point3::new(0.35, 0.05, 0.25), 0.0),
            (Point3::new(0.25, 0.25, 0.35), 2.0),
        ]);
        let wps = waypoints_of(&task);
        let layout = DecisionLayout { n_dof: 2, n_waypoints: wps.len() };
        let cfg = opt_cfg();
        let mut solved = None;
        for seed in 0..5 {
            let x0 = random_initial_guess(&layout, &task, 0.08, 0.6, seed);
            let res = kinematic_optimize(&task, &wps, 2, &x0, &cfg).unwrap();
            if res.constraint_violation <= 1e-4 {
                solved = Some(res);
                break;
            }
        }
        let res = solved.expect("a restart should reach both waypoints");
        let (design, qs) = layout.decode(&res.x, &cfg.template(&task));
        for (q, w) in qs.iter().zip(&wps) {
            let h_r = forward_kinematics(&design, q).unwrap().ef().distance(&w.p);
            assert!(h_r <= 1e-4, "reach residual {h_r}");
        }
    }

    #[test]
    fn kinematic_stage_reports_unreachable_residual() {
        // beyond any admissible span: 2 modules · 0.6 m + offsets < 4 m
        let task = free_task(vec![
            (Point3::new(0.3, 0.0, 0.2), 0.0),
            (Point3::new(4.0, 0.0, 0.2), 2.0),
        ]);
        let wps = waypoints_of(&task);
        let cfg = opt_cfg();
        let layout = DecisionLayout { n_dof: 2, n_waypoints: wps.len() };
        let x0 = random_initial_guess(&layout, &task, 0.08, 0.6, 3);
        let res = kinematic_optimize(&task, &wps, 2, &x0, &cfg).unwrap();
        assert!(!res.converged);
        assert!(res.constraint_violation > 1.0, "{res:?}");
    }

    #[test]
    fn soft_objective_is_bounded_below() {
        let task = free_task(vec![
            (Point3::new(0.3, 0.0, 0.2), 0.0),
            (Point3::new(0.2, 0.2, 0.3), 2.0),
        ]);
        let wps = waypoints_of(&task);
        let layout = DecisionLayout { n_dof: 3, n_waypoints: wps.len() };
        let cfg = opt_cfg();
        let tmpl = cfg.template(&task);
        let bound = -(wps.len() as f64) * 2.0 * cfg.clearance_cap;
        for seed in 0..20 {
            let x = random_initial_guess(&layout, &task, 0.08, 0.4, seed);
            let (design, qs) = layout.decode(&x, &tmpl);
            let mut total = 0.0;
            for q in &qs {
                let s = forward_kinematics(&design, q).unwrap();
                let g_s = sphere_clearance(&s, &task.spheres, 0.032).unwrap_or(0.2);
                let g_sc = self_collision_clearance(&s, 0.032).unwrap_or(0.2);
                total += -g_s.min(0.2) + wall_hinge(&s, &task.walls) - g_sc.min(0.2);
            }
            assert!(total >= bound - 1e-12, "objective {total} below bound {bound}");
        }
    }

    #[test]
    fn probe_accepts_light_fixture_and_rejects_heavy_payload() {
        let d = Design {
            origin: Point3::new(0.0, 0.0, 0.0),
            n_dof: 2,
            alpha: vec![std::f64::consts::FRAC_PI_2, 0.0],
            r: vec![0.2, 0.3],
            actuator: actuator(),
            link: link(),
        };
        let q1 = Configuration::new(vec![0.0, 0.1]);
        let q2 = Configuration::new(vec![0.3, -0.4]);
        let p1 = forward_kinematics(&d, &q1).unwrap().ef();
        let p2 = forward_kinematics(&d, &q2).unwrap().ef();
        let mut wps = vec![
            Waypoint { p: p1, t: 0.0, f: Wrench::ZERO },
            Waypoint { p: p2, t: 1.5, f: Wrench::ZERO },
        ];
        let traj = fit_trajectory(&wps).unwrap();
        let task = free_task(vec![(p1, 0.0), (p2, 1.5)]);
        let cfg = opt_cfg();
        let qs = vec![q1, q2];
        assert!(feasibility_probe(&d, &qs, &wps, &traj, &task, &cfg.eval).unwrap());

        // 60 N hanging at the EF exceeds the scaled torque budget
        for w in &mut wps {
            w.f = Wrench::new(nalgebra::Vector3::new(0.0, 0.0, -60.0), nalgebra::Vector3::zeros());
        }
        assert!(!feasibility_probe(&d, &qs, &wps, &traj, &task, &cfg.eval).unwrap());
    }

    #[test]
    fn deterministic_kinematic_stage() {
        let task = free_task(vec![
            (Point3::new(0.35, 0.05, 0.25), 0.0),
            (Point3::new(0.25, 0.25, 0.35), 2.0),
        ]);
        let wps = waypoints_of(&task);
        let layout = DecisionLayout { n_dof: 2, n_waypoints: wps.len() };
        let cfg = opt_cfg();
        let x0 = random_initial_guess(&layout, &task, 0.08, 0.6, 11);
        let a = kinematic_optimize(&task, &wps, 2, &x0, &cfg).unwrap();
        let b = kinematic_optimize(&task, &wps, 2, &x0, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
