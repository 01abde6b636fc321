//! Exact geometric primitives and distance/intersection queries between
//! line segments, spheres, and planar rectangles. These back every
//! collision constraint in the synthesis pipeline.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the global frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.coords() - other.coords()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl std::ops::Sub for Point3 {
    type Output = Vector3<f64>;
    fn sub(self, rhs: Point3) -> Vector3<f64> {
        self.coords() - rhs.coords()
    }
}

impl std::ops::Add<Vector3<f64>> for Point3 {
    type Output = Point3;
    fn add(self, rhs: Vector3<f64>) -> Point3 {
        Point3::from_coords(self.coords() + rhs)
    }
}

/// A line segment; zero length is permitted (degenerate actuator or link
/// projections collapse to points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment3 {
    pub a: Point3,
    pub b: Point3,
}

impl Segment3 {
    pub const fn new(a: Point3, b: Point3) -> Self {
        Segment3 { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(&self.b)
    }

    /// Point at parameter `t` in [0, 1].
    pub fn at(&self, t: f64) -> Point3 {
        self.a + (self.b - self.a) * t
    }
}

/// Spherical obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereObstacle {
    pub c: Point3,
    pub rad: f64,
}

/// Tolerance for the wall coplanarity check, meters.
const WALL_PLANAR_TOL: f64 = 1e-9;
/// Tolerance for adjacent-edge orthogonality, on normalized edge dot products.
const WALL_ORTHO_TOL: f64 = 1e-9;
/// Signed plane distances smaller than this count as "on the plane":
/// a grazing endpoint does not straddle.
const PLANE_EPS: f64 = 1e-12;

/// Planar rectangular obstacle, defined by its four corners in order
/// (consecutive corners are adjacent). Valid by construction: corners are
/// coplanar and adjacent edges orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WallCorners")]
pub struct WallObstacle {
    pub corners: [Point3; 4],
}

#[derive(Deserialize)]
struct WallCorners {
    corners: [Point3; 4],
}

impl TryFrom<WallCorners> for WallObstacle {
    type Error = Error;
    fn try_from(w: WallCorners) -> Result<Self> {
        WallObstacle::try_new(w.corners)
    }
}

impl WallObstacle {
    pub fn try_new(corners: [Point3; 4]) -> Result<Self> {
        for (i, c) in corners.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidConfig(format!("wall corner {i} not finite")));
            }
        }
        let edges: Vec<Vector3<f64>> = (0..4)
            .map(|i| corners[(i + 1) % 4] - corners[i])
            .collect();
        for (i, e) in edges.iter().enumerate() {
            if e.norm() == 0.0 {
                return Err(Error::InvalidConfig(format!("wall edge {i} has zero length")));
            }
        }
        for i in 0..4 {
            let dot = edges[i].normalize().dot(&edges[(i + 1) % 4].normalize());
            if dot.abs() > WALL_ORTHO_TOL {
                return Err(Error::InvalidConfig(format!(
                    "wall corners do not form a rectangle: edges {i} and {} not orthogonal (dot = {dot:e})",
                    (i + 1) % 4
                )));
            }
        }
        let n = edges[0].cross(&edges[1]);
        if n.norm() == 0.0 {
            return Err(Error::InvalidConfig("wall corners are collinear".into()));
        }
        let n = n.normalize();
        let d3 = (corners[3] - corners[0]).dot(&n).abs();
        if d3 > WALL_PLANAR_TOL {
            return Err(Error::InvalidConfig(format!(
                "wall corners not coplanar: corner 3 is {d3:e} m off the plane"
            )));
        }
        Ok(WallObstacle { corners })
    }

    /// Unit normal of the wall plane.
    pub fn normal(&self) -> Vector3<f64> {
        (self.corners[1] - self.corners[0])
            .cross(&(self.corners[2] - self.corners[1]))
            .normalize()
    }

    /// Signed distance from `p` to the wall plane.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        (*p - self.corners[0]).dot(&self.normal())
    }

    /// True iff the in-plane point `p` projects inside the rectangle
    /// (boundary inclusive).
    fn contains_in_plane(&self, p: &Point3) -> bool {
        let u = self.corners[1] - self.corners[0];
        let v = self.corners[3] - self.corners[0];
        let w = *p - self.corners[0];
        let pu = w.dot(&u) / u.norm_squared();
        let pv = w.dot(&v) / v.norm_squared();
        (0.0..=1.0).contains(&pu) && (0.0..=1.0).contains(&pv)
    }
}

/// Minimum distance from point `p` to segment `s` (clamped projection).
pub fn seg_point_distance(s: &Segment3, p: &Point3) -> f64 {
    let d = s.b - s.a;
    let dd = d.norm_squared();
    let t = if dd == 0.0 {
        0.0
    } else {
        ((*p - s.a).dot(&d) / dd).clamp(0.0, 1.0)
    };
    p.distance(&s.at(t))
}

/// Minimum distance between two segments: closest-point parameters from the
/// clamped quadratic, with the parallel case handled by re-clamping.
/// Degenerate (zero-length) segments reduce to point queries.
pub fn seg_seg_distance(s1: &Segment3, s2: &Segment3) -> f64 {
    let d1 = s1.b - s1.a;
    let d2 = s2.b - s2.a;
    let r = s1.a - s2.a;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t);
    if a == 0.0 && e == 0.0 {
        s = 0.0;
        t = 0.0;
    } else if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                // parallel: any point works, re-clamp fixes it up
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    s1.at(s).distance(&s2.at(t))
}

/// True iff the segment's endpoints straddle the wall's plane and the
/// plane-crossing point lies inside the rectangle. An endpoint exactly on
/// the plane counts as non-straddling.
pub fn seg_wall_intersect(s: &Segment3, w: &WallObstacle) -> bool {
    let da = w.signed_distance(&s.a);
    let db = w.signed_distance(&s.b);
    if da.abs() <= PLANE_EPS || db.abs() <= PLANE_EPS {
        return false;
    }
    if da * db > 0.0 {
        return false;
    }
    let crossing = s.at(da / (da - db));
    w.contains_in_plane(&crossing)
}

/// True iff `p` lies strictly inside the sphere (boundary excluded).
pub fn point_in_sphere(p: &Point3, o: &SphereObstacle) -> bool {
    (*p - o.c).norm_squared() < o.rad * o.rad
}
