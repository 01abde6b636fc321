//! Clamped cubic-spline trajectories over waypoints: position-exact at
//! knots, C² in the interior, and at rest (zero velocity) at both ends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_sphere, seg_wall_intersect, Point3, Segment3, SphereObstacle};
use crate::model::Task;
use crate::plan::Waypoint;

use nalgebra::Vector3;

/// Per-coordinate piecewise cubic polynomials over shared knot times.
/// Interval i stores `[a, b, c, d]` with
/// `y(t) = a + b·dx + c·dx² + d·dx³`, `dx = t − knots[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseTrajectory {
    pub knots: Vec<f64>,
    coeffs: [Vec<[f64; 4]>; 3],
}

impl PiecewiseTrajectory {
    pub fn t_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }
}

/// Clamped cubic spline through (ts, ys) with zero end slopes, solved via
/// the second-derivative (moment) tridiagonal system.
fn clamped_spline(ts: &[f64], ys: &[f64]) -> Vec<[f64; 4]> {
    let m = ts.len() - 1;
    let h: Vec<f64> = (0..m).map(|i| ts[i + 1] - ts[i]).collect();

    // Tridiagonal system for the moments M_0..M_m.
    let n = m + 1;
    let mut diag = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    diag[0] = 2.0 * h[0];
    upper[0] = h[0];
    rhs[0] = 6.0 * ((ys[1] - ys[0]) / h[0]);
    for i in 1..m {
        lower[i] = h[i - 1];
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        upper[i] = h[i];
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
    }
    lower[m] = h[m - 1];
    diag[m] = 2.0 * h[m - 1];
    rhs[m] = 6.0 * (-(ys[m] - ys[m - 1]) / h[m - 1]);

    // Thomas algorithm.
    let mut c_star = vec![0.0; n];
    let mut d_star = vec![0.0; n];
    c_star[0] = upper[0] / diag[0];
    d_star[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c_star[i - 1];
        c_star[i] = upper[i] / denom;
        d_star[i] = (rhs[i] - lower[i] * d_star[i - 1]) / denom;
    }
    let mut mom = vec![0.0; n];
    mom[m] = d_star[m];
    for i in (0..m).rev() {
        mom[i] = d_star[i] - c_star[i] * mom[i + 1];
    }

    (0..m)
        .map(|i| {
            let a = ys[i];
            let b = (ys[i + 1] - ys[i]) / h[i] - h[i] * (2.0 * mom[i] + mom[i + 1]) / 6.0;
            let c = mom[i] / 2.0;
            let d = (mom[i + 1] - mom[i]) / (6.0 * h[i]);
            [a, b, c, d]
        })
        .collect()
}

/// Fit the per-coordinate clamped cubic spline through `waypoints`:
/// interpolates every waypoint, C² at interior knots, zero velocity at the
/// first and last timestamps.
pub fn fit_trajectory(waypoints: &[Waypoint]) -> Result<PiecewiseTrajectory> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "trajectory fit needs at least 2 waypoints, got {}",
            waypoints.len()
        )));
    }
    for w in waypoints.windows(2) {
        if w[1].t == w[0].t {
            return Err(Error::InvalidArgument(format!(
                "duplicate waypoint timestamp {}",
                w[0].t
            )));
        }
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidArgument(format!(
                "waypoint timestamps must increase: {} then {}",
                w[0].t, w[1].t
            )));
        }
    }
    let ts: Vec<f64> = waypoints.iter().map(|w| w.t).collect();
    let coord = |f: fn(&Point3) -> f64| -> Vec<f64> { waypoints.iter().map(|w| f(&w.p)).collect() };
    let xs = coord(|p| p.x);
    let ys = coord(|p| p.y);
    let zs = coord(|p| p.z);
    Ok(PiecewiseTrajectory {
        coeffs: [clamped_spline(&ts, &xs), clamped_spline(&ts, &ys), clamped_spline(&ts, &zs)],
        knots: ts,
    })
}

/// Slack allowed past the trajectory ends before a time is out of range,
/// absorbing accumulated floating error in uniform sample grids.
const TIME_SLACK: f64 = 1e-9;

/// Sample position, velocity, and acceleration at time `t`.
pub fn sample_trajectory(
    traj: &PiecewiseTrajectory,
    t: f64,
) -> Result<(Point3, Vector3<f64>, Vector3<f64>)> {
    let (t0, t1) = (traj.t_start(), traj.t_end());
    if t < t0 - TIME_SLACK || t > t1 + TIME_SLACK {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside trajectory range [{t0}, {t1}]"
        )));
    }
    let t = t.clamp(t0, t1);
    let m = traj.knots.len() - 1;
    let i = traj.knots.partition_point(|&k| k <= t).saturating_sub(1).min(m - 1);
    let dx = t - traj.knots[i];
    let mut p = [0.0; 3];
    let mut v = [0.0; 3];
    let mut a = [0.0; 3];
    for c in 0..3 {
        let [ca, cb, cc, cd] = traj.coeffs[c][i];
        p[c] = ca + dx * (cb + dx * (cc + dx * cd));
        v[c] = cb + dx * (2.0 * cc + dx * 3.0 * cd);
        a[c] = 2.0 * cc + 6.0 * cd * dx;
    }
    Ok((
        Point3::new(p[0], p[1], p[2]),
        Vector3::new(v[0], v[1], v[2]),
        Vector3::new(a[0], a[1], a[2]),
    ))
}

/// Certify the trajectory against the task obstacles by fine discretization:
/// returns true iff no sampled point lies inside a sphere inflated by
/// `ef_clearance` and no consecutive sample pair crosses a wall.
pub fn check_trajectory_collision(
    traj: &PiecewiseTrajectory,
    task: &Task,
    dt: f64,
    ef_clearance: f64,
) -> bool {
    assert!(dt > 0.0, "sampling step must be positive");
    let inflated: Vec<SphereObstacle> = task
        .spheres
        .iter()
        .map(|o| SphereObstacle { c: o.c, rad: o.rad + ef_clearance })
        .collect();
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let steps = ((t1 - t0) / dt).ceil() as usize;
    let mut prev: Option<Point3> = None;
    for j in 0..=steps {
        let t = (t0 + j as f64 * dt).min(t1);
        let (p, _, _) = sample_trajectory(traj, t).expect("sample within range");
        if inflated.iter().any(|o| point_in_sphere(&p, o)) {
            return false;
        }
        if let Some(q) = prev {
            let seg = Segment3::new(q, p);
            if task.walls.iter().any(|w| seg_wall_intersect(&seg, w)) {
                return false;
            }
        }
        prev = Some(p);
    }
    true
}
