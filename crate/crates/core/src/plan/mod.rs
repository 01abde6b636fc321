//! Trajectory selection: RRT* path search through all task points,
//! timestamp/load assignment for the new waypoints, piecewise-polynomial
//! trajectory construction with rest boundary conditions, and trajectory-
//! level collision certification.

mod rrt_star;
mod trajectory;

pub use rrt_star::{rrt_star, PlannerConfig};
pub use trajectory::{
    check_trajectory_collision, fit_trajectory, sample_trajectory, PiecewiseTrajectory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{seg_point_distance, seg_wall_intersect, Point3, Segment3};
use crate::model::{Task, Wrench};

/// One interpolation waypoint: position, timestamp, and the load carried
/// while moving toward the next waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub p: Point3,
    pub t: f64,
    #[serde(rename = "F")]
    pub f: Wrench,
}

/// True iff `seg` keeps more than `clearance` distance from every sphere
/// surface and crosses no wall.
pub fn segment_is_clear(seg: &Segment3, task: &Task, clearance: f64) -> bool {
    for o in &task.spheres {
        if seg_point_distance(seg, &o.c) <= o.rad + clearance {
            return false;
        }
    }
    for w in &task.walls {
        if seg_wall_intersect(seg, w) {
            return false;
        }
    }
    true
}

/// Assign timestamps and loads to every point of an RRT* polyline, producing
/// the waypoint list P*. Original task points keep their own (t, F); each
/// intermediate point on leg i gets the time interpolated by arc length along
/// the leg and inherits the load F_i.
pub fn assign_times_loads(task: &Task, path: &[Point3]) -> Result<Vec<Waypoint>> {
    let pts = &task.points;
    // Locate the task points inside the polyline, in order. The planner
    // inserts them verbatim, so exact comparison is reliable. The first and
    // last task points must be the polyline endpoints; interior task points
    // anchor at their first occurrence after the previous anchor.
    if path.is_empty() || path[0] != pts[0].p {
        return Err(Error::InvalidArgument("path does not start at the first task point".into()));
    }
    if *path.last().unwrap() != pts.last().unwrap().p {
        return Err(Error::InvalidArgument("path does not end at the final task point".into()));
    }
    let mut anchors = Vec::with_capacity(pts.len());
    anchors.push(0usize);
    for (i, tp) in pts.iter().enumerate().skip(1) {
        let cursor = *anchors.last().unwrap();
        let j = if i == pts.len() - 1 {
            path.len() - 1
        } else {
            match path[cursor + 1..].iter().position(|p| *p == tp.p) {
                Some(off) => cursor + 1 + off,
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "path does not visit task point {i} in order"
                    )));
                }
            }
        };
        if j <= cursor {
            return Err(Error::InvalidArgument(format!(
                "path does not visit task point {i} in order"
            )));
        }
        anchors.push(j);
    }

    let mut out = Vec::with_capacity(path.len());
    for (leg, pair) in anchors.windows(2).enumerate() {
        let (j0, j1) = (pair[0], pair[1]);
        let (t0, t1) = (pts[leg].t, pts[leg + 1].t);
        out.push(Waypoint { p: path[j0], t: t0, f: pts[leg].f });
        if j1 == j0 {
            continue;
        }
        let total: f64 = (j0..j1).map(|j| path[j + 1].distance(&path[j])).sum();
        if j1 > j0 + 1 && total == 0.0 {
            return Err(Error::DegenerateLeg { leg });
        }
        let mut cum = 0.0;
        for j in j0 + 1..j1 {
            cum += path[j].distance(&path[j - 1]);
            let t = t0 + (t1 - t0) * (cum / total);
            // points within floating dust of a neighbor would produce
            // non-increasing timestamps; they carry no new information
            if t <= out.last().unwrap().t || t >= t1 {
                continue;
            }
            out.push(Waypoint { p: path[j], t, f: pts[leg].f });
        }
    }
    let last = pts.last().unwrap();
    out.push(Waypoint { p: last.p, t: last.t, f: last.f });

    for w in out.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidArgument(format!(
                "waypoint timestamps not strictly increasing: {} then {}",
                w[0].t, w[1].t
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SphereObstacle;
    use crate::model::{BaseRegion, TaskPoint};
    use approx::assert_relative_eq;

    fn task_two_points(p1: Point3, t1: f64, p2: Point3, t2: f64) -> Task {
        Task {
            points: vec![
                TaskPoint { p: p1, t: t1, f: Wrench::ZERO },
                TaskPoint {
                    p: p2,
                    t: t2,
                    f: Wrench::new(nalgebra::Vector3::new(0.0, 0.0, -1.0), nalgebra::Vector3::zeros()),
                },
            ],
            spheres: vec![],
            walls: vec![],
            base: BaseRegion { x_min: -0.1, x_max: 0.1, y_min: -0.1, y_max: 0.1, z: 0.0 },
        }
    }

    #[test]
    fn halfway_point_gets_halfway_time_and_leg_load() {
        let p1 = Point3::new(0.0, 0.0, 0.0);
        let p2 = Point3::new(2.0, 0.0, 0.0);
        let task = task_two_points(p1, 0.0, p2, 4.0);
        let path = vec![p1, Point3::new(1.0, 0.0, 0.0), p2];
        let wps = assign_times_loads(&task, &path).unwrap();
        assert_eq!(wps.len(), 3);
        assert_relative_eq!(wps[1].t, 2.0);
        assert_eq!(wps[1].f, task.points[0].f);
        // original points keep their own (t, F)
        assert_eq!(wps[0].t, 0.0);
        assert_eq!(wps[2].t, 4.0);
        assert_eq!(wps[2].f, task.points[1].f);
    }

    #[test]
    fn no_intermediates_is_identity() {
        let p1 = Point3::new(0.0, 0.0, 0.0);
        let p2 = Point3::new(1.0, 1.0, 0.0);
        let task = task_two_points(p1, 0.0, p2, 3.0);
        let wps = assign_times_loads(&task, &[p1, p2]).unwrap();
        assert_eq!(wps.len(), 2);
        assert_eq!(wps[0].p, p1);
        assert_eq!(wps[1].p, p2);
    }

    #[test]
    fn quarter_arc_length_gets_quarter_time() {
        let p1 = Point3::new(0.0, 0.0, 0.0);
        let p2 = Point3::new(4.0, 0.0, 0.0);
        let task = task_two_points(p1, 0.0, p2, 8.0);
        let path = vec![
            p1,
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            p2,
        ];
        let wps = assign_times_loads(&task, &path).unwrap();
        assert_relative_eq!(wps[1].t, 2.0);
        assert_relative_eq!(wps[2].t, 4.0);
    }

    #[test]
    fn zero_length_leg_with_intermediates_errors() {
        let p = Point3::new(1.0, 0.0, 0.0);
        let task = task_two_points(p, 0.0, p, 2.0);
        let path = vec![p, p, p];
        match assign_times_loads(&task, &path) {
            Err(Error::DegenerateLeg { leg: 0 }) => {}
            other => panic!("expected degenerate leg, got {other:?}"),
        }
    }

    #[test]
    fn segment_clearance_respects_inflation() {
        let mut task = task_two_points(Point3::new(0.0, 0.0, 0.0), 0.0, Point3::new(1.0, 0.0, 0.0), 1.0);
        task.spheres.push(SphereObstacle { c: Point3::new(0.5, 0.3, 0.0), rad: 0.2 });
        let seg = Segment3::new(task.points[0].p, task.points[1].p);
        assert!(segment_is_clear(&seg, &task, 0.05));
        assert!(!segment_is_clear(&seg, &task, 0.12));
    }
}
