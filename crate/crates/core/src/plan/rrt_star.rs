//! Leg-wise RRT* in 3D workspace coordinates. Each consecutive task-point
//! pair is planned by an independent seeded tree (with a direct-connection
//! shortcut), and the legs are concatenated into one polyline that contains
//! every task point verbatim.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, Segment3};
use crate::model::Task;
use crate::plan::segment_is_clear;

/// Probability of sampling the goal instead of a uniform point.
const GOAL_BIAS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Sample budget per leg.
    pub max_samples: usize,
    /// Maximum extension distance per tree edge, m.
    pub steer_step: f64,
    /// Rewiring radius scale γ in r = min(γ·(ln n / n)^(1/3), steer_step), m.
    pub rewire_radius_gamma: f64,
    /// A node within this distance of the goal may connect to it, m.
    pub goal_tolerance: f64,
    /// Obstacle inflation for the end-effector point, m.
    pub ef_clearance: f64,
    pub rng_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_samples: 2000,
            steer_step: 0.1,
            rewire_radius_gamma: 1.0,
            goal_tolerance: 0.05,
            ef_clearance: 0.032,
            rng_seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("steer_step", self.steer_step),
            ("rewire_radius_gamma", self.rewire_radius_gamma),
            ("goal_tolerance", self.goal_tolerance),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("planner.{name} must be positive, got {v}")));
            }
        }
        if self.ef_clearance < 0.0 {
            return Err(Error::InvalidConfig("planner.ef_clearance must be nonnegative".into()));
        }
        if self.max_samples == 0 {
            return Err(Error::InvalidConfig("planner.max_samples must be positive".into()));
        }
        Ok(())
    }
}

struct Node {
    p: Point3,
    parent: usize,
    cost: f64,
    children: Vec<usize>,
}

/// Axis-aligned sampling bounds covering the task geometry with margin.
fn sample_bounds(task: &Task, steer_step: f64) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut absorb = |p: &Point3, pad: f64| {
        for (i, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[i] = lo[i].min(v - pad);
            hi[i] = hi[i].max(v + pad);
        }
    };
    for tp in &task.points {
        absorb(&tp.p, 0.0);
    }
    for o in &task.spheres {
        absorb(&o.c, o.rad);
    }
    for w in &task.walls {
        for c in &w.corners {
            absorb(c, 0.0);
        }
    }
    absorb(&Point3::new(task.base.x_min, task.base.y_min, task.base.z), 0.0);
    absorb(&Point3::new(task.base.x_max, task.base.y_max, task.base.z), 0.0);
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
    let margin = 0.25 * diag + steer_step;
    (
        Point3::new(lo[0] - margin, lo[1] - margin, lo[2] - margin),
        Point3::new(hi[0] + margin, hi[1] + margin, hi[2] + margin),
    )
}

/// Update the stored costs of a rewired subtree.
fn propagate_cost(nodes: &mut [Node], root: usize, delta: f64) {
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        nodes[i].cost += delta;
        stack.extend(nodes[i].children.iter().copied());
    }
}

fn plan_leg(
    start: Point3,
    goal: Point3,
    task: &Task,
    cfg: &PlannerConfig,
    leg: usize,
    seed: u64,
) -> Result<Vec<Point3>> {
    let clear = |a: Point3, b: Point3| segment_is_clear(&Segment3::new(a, b), task, cfg.ef_clearance);

    // Direct connection is optimal whenever it is collision-free. The
    // polyline is still emitted at tree-node spacing: the waypoints pin the
    // design optimization along the whole path, not just at its ends.
    if clear(start, goal) {
        let len = goal.distance(&start);
        let pieces = (len / cfg.steer_step).ceil().max(1.0) as usize;
        let mut out = Vec::with_capacity(pieces + 1);
        for i in 0..=pieces {
            out.push(start + (goal - start) * (i as f64 / pieces as f64));
        }
        *out.last_mut().unwrap() = goal;
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = sample_bounds(task, cfg.steer_step);
    let mut nodes = vec![Node { p: start, parent: usize::MAX, cost: 0.0, children: vec![] }];
    // Nodes from which the goal is directly reachable; the best is chosen
    // after the full budget so that larger budgets can only shorten the path.
    let mut goal_links: Vec<usize> = Vec::new();

    for _ in 0..cfg.max_samples {
        let target = if rng.random::<f64>() < GOAL_BIAS {
            goal
        } else {
            Point3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            )
        };
        let nearest = (0..nodes.len())
            .min_by(|&a, &b| {
                nodes[a].p.distance(&target).total_cmp(&nodes[b].p.distance(&target))
            })
            .unwrap();
        let dir = target - nodes[nearest].p;
        let len = dir.norm();
        if len == 0.0 {
            continue;
        }
        let p_new = nodes[nearest].p + dir * (cfg.steer_step / len).min(1.0);

        let n = nodes.len() as f64;
        let radius = (cfg.rewire_radius_gamma * (n.ln().max(f64::MIN_POSITIVE) / n).cbrt())
            .min(cfg.steer_step);
        let neighbors: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].p.distance(&p_new) <= radius)
            .collect();

        // Choose the cheapest collision-free parent.
        let mut best: Option<(usize, f64)> = None;
        for &i in neighbors.iter().chain(std::iter::once(&nearest)) {
            let c = nodes[i].cost + nodes[i].p.distance(&p_new);
            if best.map_or(true, |(_, bc)| c < bc) && clear(nodes[i].p, p_new) {
                best = Some((i, c));
            }
        }
        let Some((parent, cost)) = best else { continue };
        let idx = nodes.len();
        nodes.push(Node { p: p_new, parent, cost, children: vec![] });
        nodes[parent].children.push(idx);

        // Rewire neighbors through the new node when that shortens them.
        for &i in &neighbors {
            if i == parent {
                continue;
            }
            let through = cost + nodes[idx].p.distance(&nodes[i].p);
            if through + 1e-12 < nodes[i].cost && clear(p_new, nodes[i].p) {
                let old_parent = nodes[i].parent;
                if old_parent != usize::MAX {
                    nodes[old_parent].children.retain(|&c| c != i);
                }
                let delta = through - nodes[i].cost;
                nodes[i].parent = idx;
                nodes[idx].children.push(i);
                propagate_cost(&mut nodes, i, delta);
            }
        }

        if p_new.distance(&goal) <= cfg.goal_tolerance && clear(p_new, goal) {
            goal_links.push(idx);
        }
    }

    let best = goal_links
        .iter()
        .copied()
        .min_by(|&a, &b| {
            (nodes[a].cost + nodes[a].p.distance(&goal))
                .total_cmp(&(nodes[b].cost + nodes[b].p.distance(&goal)))
        })
        .ok_or(Error::PlanningFailed { leg })?;

    let mut rev = vec![goal];
    let mut i = best;
    while i != usize::MAX {
        rev.push(nodes[i].p);
        i = nodes[i].parent;
    }
    rev.reverse();
    Ok(rev)
}

/// Plan a collision-free polyline visiting every task point in order. Legs
/// between consecutive task points are planned independently and
/// concatenated, merging the duplicated junction points.
pub fn rrt_star(task: &Task, cfg: &PlannerConfig) -> Result<Vec<Point3>> {
    cfg.validate()?;
    if task.points.is_empty() {
        return Err(Error::InvalidArgument("task has no points".into()));
    }
    let mut path = vec![task.points[0].p];
    for leg in 0..task.points.len() - 1 {
        let start = task.points[leg].p;
        let goal = task.points[leg + 1].p;
        let seed = crate::util::derive_seed(cfg.rng_seed, &[0x5272_5454, leg as u64]);
        let leg_path = plan_leg(start, goal, task, cfg, leg, seed)?;
        path.extend_from_slice(&leg_path[1..]);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SphereObstacle;
    use crate::model::{BaseRegion, TaskPoint, Wrench};

    fn task(points: Vec<(f64, f64, f64)>, spheres: Vec<SphereObstacle>) -> Task {
        Task {
            points: points
                .into_iter()
                .enumerate()
                .map(|(i, p)| TaskPoint {
                    p: Point3::new(p.0, p.1, p.2),
                    t: i as f64,
                    f: Wrench::ZERO,
                })
                .collect(),
            spheres,
            walls: vec![],
            base: BaseRegion { x_min: -0.1, x_max: 0.1, y_min: -0.1, y_max: 0.1, z: 0.0 },
        }
    }

    #[test]
    fn free_space_returns_subdivided_straight_segment() {
        let t = task(vec![(0.0, 0.0, 0.3), (0.6, 0.0, 0.3)], vec![]);
        let path = rrt_star(&t, &PlannerConfig::default()).unwrap();
        // collinear polyline at steer-step spacing, endpoints exact
        assert_eq!(path.len(), 7);
        assert_eq!(path[0], t.points[0].p);
        assert_eq!(*path.last().unwrap(), t.points[1].p);
        for pair in path.windows(2) {
            assert!((pair[1].x - pair[0].x - 0.1).abs() < 1e-12);
            assert_eq!(pair[1].y, 0.0);
            assert_eq!(pair[1].z, 0.3);
        }
    }

    #[test]
    fn all_task_points_present_in_order() {
        let t = task(vec![(0.0, 0.0, 0.3), (0.4, 0.2, 0.3), (0.1, 0.5, 0.4)], vec![]);
        let path = rrt_star(&t, &PlannerConfig::default()).unwrap();
        let idx: Vec<usize> = t
            .points
            .iter()
            .map(|tp| path.iter().position(|p| *p == tp.p).expect("task point present"))
            .collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]), "{idx:?}");
    }

    #[test]
    fn blocked_leg_keeps_clearance() {
        let sphere = SphereObstacle { c: Point3::new(0.3, 0.0, 0.3), rad: 0.12 };
        let t = task(vec![(0.0, 0.0, 0.3), (0.6, 0.0, 0.3)], vec![sphere]);
        let cfg = PlannerConfig { rng_seed: 7, ..Default::default() };
        let path = rrt_star(&t, &cfg).unwrap();
        assert!(path.len() > 2);
        // dense sampling along every edge must respect the inflated radius
        for pair in path.windows(2) {
            for k in 0..=200 {
                let p = Segment3::new(pair[0], pair[1]).at(k as f64 / 200.0);
                assert!(
                    p.distance(&sphere.c) > sphere.rad + cfg.ef_clearance,
                    "clearance violated at {p:?}"
                );
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let sphere = SphereObstacle { c: Point3::new(0.3, 0.0, 0.3), rad: 0.12 };
        let t = task(vec![(0.0, 0.0, 0.3), (0.6, 0.0, 0.3)], vec![sphere]);
        let cfg = PlannerConfig { rng_seed: 42, ..Default::default() };
        let a = rrt_star(&t, &cfg).unwrap();
        let b = rrt_star(&t, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exhausted_budget_reports_failing_leg() {
        // Goal buried inside an obstacle: unreachable with any budget.
        let sphere = SphereObstacle { c: Point3::new(0.6, 0.0, 0.3), rad: 0.1 };
        let mut t = task(vec![(0.0, 0.0, 0.3), (0.6, 0.0, 0.3)], vec![sphere]);
        t.points[1].t = 1.0;
        let cfg = PlannerConfig { max_samples: 200, ..Default::default() };
        match rrt_star(&t, &cfg) {
            Err(Error::PlanningFailed { leg: 0 }) => {}
            other => panic!("expected planning failure, got {other:?}"),
        }
    }
}
