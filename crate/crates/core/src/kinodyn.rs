//! Differential kinematics and inverse dynamics: linear Jacobian,
//! pseudo-inverse velocity/acceleration mapping, module inertia tensors,
//! recursive Newton-Euler torques with an end-effector wrench, and the
//! torque-margin measure used by the dynamic constraints.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::model::{frame_chain, ActuatorSpec, Configuration, Design, LinkSpec, Wrench};

/// Relative singular-value cutoff for the Moore-Penrose pseudo-inverse.
const PINV_CUTOFF_REL: f64 = 1e-8;
/// Absolute singular-value threshold below which a Jacobian is flagged
/// as near-singular.
const SINGULAR_SV_ABS: f64 = 1e-8;
/// Central-difference step for the Jacobian time derivative.
const JDOT_FD_STEP: f64 = 1e-6;

/// Standard gravity vector, global frame.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// 3 × n_dof linear (position) Jacobian: column k is
/// `z_{k-1} × (EF − O_{k-1})` for the revolute joint k.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearJacobian {
    pub matrix: DMatrix<f64>,
}

impl LinearJacobian {
    pub fn n_dof(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Result of a pseudo-inverse mapping. `near_singular` is raised when the
/// smallest singular value drops below 1e-8; the caller decides whether the
/// minimum-norm solution is still trustworthy.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvSolution {
    pub values: Vec<f64>,
    pub near_singular: bool,
}

/// Linear Jacobian of the end-effector position at configuration `q`.
pub fn linear_jacobian(design: &Design, q: &Configuration) -> Result<LinearJacobian> {
    let chain = frame_chain(design, q)?;
    let ef = chain.ef();
    let n = design.n_dof;
    let mut j = DMatrix::zeros(3, n);
    for k in 1..=n {
        let col = chain.joint_axis(k).cross(&(ef - chain.origins[k - 1]));
        j.set_column(k - 1, &col);
    }
    Ok(LinearJacobian { matrix: j })
}

/// Minimum-norm `x` with `m x ≈ rhs` through the SVD pseudo-inverse.
fn pinv_apply(m: &DMatrix<f64>, rhs: &Vector3<f64>) -> PinvSolution {
    let n = m.ncols();
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sv = &svd.singular_values;
    let cutoff = PINV_CUTOFF_REL * sv.max();
    let mut x = vec![0.0; n];
    for i in 0..sv.len() {
        if sv[i] > cutoff && sv[i] > 0.0 {
            let ui = u.column(i);
            let coeff = (ui[0] * rhs[0] + ui[1] * rhs[1] + ui[2] * rhs[2]) / sv[i];
            for j in 0..n {
                x[j] += coeff * v_t[(i, j)];
            }
        }
    }
    let near_singular = sv.min() < SINGULAR_SV_ABS;
    PinvSolution { values: x, near_singular }
}

/// Joint velocities `q̇ = J⁺ v` (minimum-norm for redundant arms).
pub fn joint_velocities(j: &LinearJacobian, v: &Vector3<f64>) -> PinvSolution {
    pinv_apply(&j.matrix, v)
}

/// Time derivative of the linear Jacobian, `J̇ = Σ_k ∂J/∂θ_k · θ̇_k`,
/// with each partial taken by central differences.
pub fn jacobian_time_derivative(
    design: &Design,
    q: &Configuration,
    q_dot: &[f64],
) -> Result<DMatrix<f64>> {
    let n = design.n_dof;
    if q_dot.len() != n {
        return Err(Error::InvalidArgument(format!(
            "q_dot has {} entries, design has {} modules",
            q_dot.len(),
            n
        )));
    }
    let mut jdot = DMatrix::zeros(3, n);
    let h = JDOT_FD_STEP;
    let mut qp = q.clone();
    for k in 0..n {
        qp.theta[k] = q.theta[k] + h;
        let jp = linear_jacobian(design, &qp)?.matrix;
        qp.theta[k] = q.theta[k] - h;
        let jm = linear_jacobian(design, &qp)?.matrix;
        qp.theta[k] = q.theta[k];
        jdot += (jp - jm) * (q_dot[k] / (2.0 * h));
    }
    Ok(jdot)
}

/// Joint accelerations `q̈ = J⁺ (a − J̇ q̇)`.
pub fn joint_accelerations(
    design: &Design,
    q: &Configuration,
    q_dot: &[f64],
    a: &Vector3<f64>,
) -> Result<PinvSolution> {
    let j = linear_jacobian(design, q)?;
    let jdot = jacobian_time_derivative(design, q, q_dot)?;
    let qd = DMatrix::from_column_slice(q_dot.len(), 1, q_dot);
    let bias = &jdot * qd;
    let rhs = a - Vector3::new(bias[(0, 0)], bias[(1, 0)], bias[(2, 0)]);
    Ok(pinv_apply(&j.matrix, &rhs))
}

/// Inertia of one module (actuator + link) about the module frame origin,
/// module-frame axes. The module frame sits at the joint origin with z along
/// the rotation axis and x along the link direction: the actuator is a solid
/// cylinder centered on the z-axis at height d/2, the link a hollow cylinder
/// from (0,0,d) to (r_k,0,d).
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaTensor {
    /// Tensor about the module frame origin, kg·m².
    pub tensor: Matrix3<f64>,
    /// Combined mass, kg.
    pub mass: f64,
    /// Center of mass in the module frame, m.
    pub com: Point3,
}

/// Parallel-axis term for a point mass `m` offset by `c` from the reference.
fn parallel_axis(m: f64, c: &Vector3<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * c.norm_squared() - c * c.transpose()) * m
}

/// Compound inertia of module k with link length `r_k`.
pub fn module_inertia(actuator: &ActuatorSpec, link: &LinkSpec, r_k: f64) -> InertiaTensor {
    // Actuator: solid cylinder, axis z, COM at the midpoint of the DH offset.
    let ma = actuator.mass;
    let ra = actuator.body_radius;
    let ha = actuator.body_height;
    let ia_axis = ma * ra * ra / 2.0;
    let ia_perp = ma * (3.0 * ra * ra + ha * ha) / 12.0;
    let ca = Vector3::new(0.0, 0.0, actuator.d / 2.0);
    let ia_com = Matrix3::from_diagonal(&Vector3::new(ia_perp, ia_perp, ia_axis));

    // Link: hollow cylinder, axis x, spanning x in [0, r_k] at height d.
    let ml = link.mass(r_k);
    let r1 = link.rad_inner;
    let r2 = link.rad_outer;
    let il_axis = ml * (r1 * r1 + r2 * r2) / 2.0;
    let il_perp = ml * (3.0 * (r1 * r1 + r2 * r2) + r_k * r_k) / 12.0;
    let cl = Vector3::new(r_k / 2.0, 0.0, actuator.d);
    let il_com = Matrix3::from_diagonal(&Vector3::new(il_axis, il_perp, il_perp));

    let tensor = ia_com + parallel_axis(ma, &ca) + il_com + parallel_axis(ml, &cl);
    let mass = ma + ml;
    let com = (ca * ma + cl * ml) / mass;
    InertiaTensor { tensor, mass, com: Point3::from_coords(com) }
}

/// Dynamic parameters of one module body expressed in its DH frame k:
/// mass, COM relative to O_k, and inertia about the COM.
struct BodyParams {
    mass: f64,
    com: Vector3<f64>,
    inertia_com: Matrix3<f64>,
}

fn body_params(design: &Design, k: usize) -> BodyParams {
    let m = module_inertia(&design.actuator, &design.link, design.r[k]);
    let c_mod = m.com.coords();
    let i_com_mod = m.tensor - parallel_axis(m.mass, &c_mod);
    // Module frame -> frame k: translate by (r_k, 0, d), rotate by Rot_x(α_k).
    let rx = Matrix3::from(nalgebra::Rotation3::from_axis_angle(
        &Vector3::x_axis(),
        design.alpha[k],
    ));
    let offset = Vector3::new(design.r[k], 0.0, design.actuator.d);
    BodyParams {
        mass: m.mass,
        com: rx.transpose() * (c_mod - offset),
        inertia_com: rx.transpose() * i_com_mod * rx,
    }
}

/// Recursive Newton-Euler inverse dynamics: joint torques for the prescribed
/// motion of `design` under `gravity` and the end-effector wrench `f_ef`
/// (the load exerted on the EF by the environment, global frame, applied at
/// the EF point). The base is static; gravity enters through the base
/// acceleration.
pub fn rnea(
    design: &Design,
    q: &Configuration,
    q_dot: &[f64],
    q_ddot: &[f64],
    f_ef: &Wrench,
    gravity: &Vector3<f64>,
) -> Result<Vec<f64>> {
    design.validate()?;
    let n = design.n_dof;
    if q.len() != n || q_dot.len() != n || q_ddot.len() != n {
        return Err(Error::InvalidArgument(format!(
            "rnea expects {} joint values (got q: {}, q_dot: {}, q_ddot: {})",
            n,
            q.len(),
            q_dot.len(),
            q_ddot.len()
        )));
    }

    let z0 = Vector3::z();

    // Per-joint DH rotation blocks and frame-(k-1) translations.
    let mut rots = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut r0n = Matrix3::identity();
    for k in 0..n {
        let t = crate::model::dh_transform(q.theta[k], design.actuator.d, design.r[k], design.alpha[k]);
        let r = t.fixed_view::<3, 3>(0, 0).into_owned();
        trans.push(t.fixed_view::<3, 1>(0, 3).into_owned());
        r0n *= r;
        rots.push(r);
    }

    let bodies: Vec<BodyParams> = (0..n).map(|k| body_params(design, k)).collect();

    // Forward recursion: angular velocity/acceleration and linear
    // acceleration of each frame and body COM, in the body's own frame.
    let mut omega = vec![Vector3::zeros(); n + 1];
    let mut domega = vec![Vector3::zeros(); n + 1];
    let mut acc = vec![Vector3::zeros(); n + 1];
    acc[0] = -gravity;
    let mut acc_com = vec![Vector3::zeros(); n + 1];
    let mut r_local = vec![Vector3::zeros(); n + 1];

    for i in 1..=n {
        let rt = rots[i - 1].transpose();
        r_local[i] = rt * trans[i - 1];
        omega[i] = rt * (omega[i - 1] + q_dot[i - 1] * z0);
        domega[i] = rt * (domega[i - 1] + q_ddot[i - 1] * z0 + q_dot[i - 1] * omega[i - 1].cross(&z0));
        acc[i] = rt * acc[i - 1]
            + domega[i].cross(&r_local[i])
            + omega[i].cross(&omega[i].cross(&r_local[i]));
        let c = &bodies[i - 1].com;
        acc_com[i] = acc[i] + domega[i].cross(c) + omega[i].cross(&omega[i].cross(c));
    }

    // Backward recursion, seeded with the reaction to the EF wrench
    // expressed in frame n.
    let mut f_next = r0n.transpose() * (-f_ef.force);
    let mut mu_next = r0n.transpose() * (-f_ef.moment);
    let mut r_next = Matrix3::identity();
    let mut tau = vec![0.0; n];

    for i in (1..=n).rev() {
        let b = &bodies[i - 1];
        let f_i = r_next * f_next + b.mass * acc_com[i];
        let mu_i = -f_i.cross(&(r_local[i] + b.com))
            + r_next * mu_next
            + (r_next * f_next).cross(&b.com)
            + b.inertia_com * domega[i]
            + omega[i].cross(&(b.inertia_com * omega[i]));
        tau[i - 1] = mu_i.dot(&(rots[i - 1].transpose() * z0));
        f_next = f_i;
        mu_next = mu_i;
        r_next = rots[i - 1];
    }
    Ok(tau)
}

/// Minimum torque headroom `min_k (τ_max − |β·τ_k|)`; nonnegative iff every
/// scaled torque is within the actuator limit.
pub fn torque_margin(tau: &[f64], tau_max: f64, beta: f64) -> Result<f64> {
    if beta < 1.0 {
        return Err(Error::InvalidConfig(format!("safety factor beta must be >= 1, got {beta}")));
    }
    Ok(tau
        .iter()
        .map(|t| tau_max - (beta * t).abs())
        .fold(tau_max, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn actuator(d: f64) -> ActuatorSpec {
        ActuatorSpec {
            mass: 0.34,
            body_radius: 0.035,
            body_height: 0.055,
            d,
            tau_max: 8.0,
            omega_max: None,
        }
    }

    fn link_spec() -> LinkSpec {
        LinkSpec { density: 2700.0, rad_inner: 0.0143, rad_outer: 0.0159, delta: 0.032 }
    }

    fn design(alpha: Vec<f64>, r: Vec<f64>, d: f64) -> Design {
        Design {
            origin: Point3::new(0.0, 0.0, 0.0),
            n_dof: alpha.len(),
            alpha,
            r,
            actuator: actuator(d),
            link: link_spec(),
        }
    }

    #[test]
    fn jacobian_unit_circle_tangent() {
        let d = design(vec![0.0], vec![1.0], 0.05);
        let j = linear_jacobian(&d, &Configuration::zeros(1)).unwrap();
        assert_relative_eq!(j.matrix[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(j.matrix[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(j.matrix[(2, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_deterministic() {
        let d = design(vec![0.4, 2.0, 5.5], vec![0.2, 0.25, 0.3], 0.06);
        let q = Configuration::new(vec![0.3, -0.7, 1.9]);
        assert_eq!(linear_jacobian(&d, &q).unwrap(), linear_jacobian(&d, &q).unwrap());
    }

    #[test]
    fn joint_velocities_orthonormal_columns() {
        let j = LinearJacobian {
            matrix: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        };
        let sol = joint_velocities(&j, &Vector3::new(1.0, 2.0, 0.0));
        assert_relative_eq!(sol.values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.values[1], 2.0, epsilon = 1e-12);
        assert!(!sol.near_singular);
    }

    #[test]
    fn joint_velocities_zero() {
        let d = design(vec![0.9, 1.5], vec![0.2, 0.3], 0.06);
        let j = linear_jacobian(&d, &Configuration::new(vec![0.2, 0.4])).unwrap();
        let sol = joint_velocities(&j, &Vector3::zeros());
        assert!(sol.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn joint_accelerations_at_rest() {
        let d = design(vec![0.9, 1.5], vec![0.2, 0.3], 0.06);
        let q = Configuration::new(vec![0.2, 0.4]);
        let sol = joint_accelerations(&d, &q, &[0.0, 0.0], &Vector3::zeros()).unwrap();
        for v in sol.values {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_accelerations_pure_centripetal() {
        // Unit circle at unit rate: a = (-1, 0, 0) at θ = 0 is entirely the
        // J̇ q̇ term, so q̈ = 0.
        let d = design(vec![0.0], vec![1.0], 0.05);
        let q = Configuration::zeros(1);
        let sol = joint_accelerations(&d, &q, &[1.0], &Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(sol.values[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn inertia_zero_link_is_actuator_alone() {
        let a = actuator(0.08);
        let l = link_spec();
        let m = module_inertia(&a, &l, 0.0);
        assert_relative_eq!(m.mass, a.mass, epsilon = 1e-15);
        let ia_axis = a.mass * a.body_radius.powi(2) / 2.0;
        let ia_perp = a.mass * (3.0 * a.body_radius.powi(2) + a.body_height.powi(2)) / 12.0;
        let off = parallel_axis(a.mass, &Vector3::new(0.0, 0.0, a.d / 2.0));
        let expect = Matrix3::from_diagonal(&Vector3::new(ia_perp, ia_perp, ia_axis)) + off;
        assert_relative_eq!(m.tensor, expect, epsilon = 1e-15);
    }

    #[test]
    fn hollow_cylinder_reduces_to_solid() {
        // With rad_inner = 0 the axial moment must match m·r²/2.
        let l = LinkSpec { density: 2700.0, rad_inner: 0.0, rad_outer: 0.02, delta: 0.04 };
        let r = 0.3;
        let m = l.mass(r);
        let axial = m * (l.rad_inner.powi(2) + l.rad_outer.powi(2)) / 2.0;
        assert_relative_eq!(axial, m * l.rad_outer.powi(2) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn inertia_symmetric_psd() {
        let m = module_inertia(&actuator(0.07), &link_spec(), 0.4);
        assert_relative_eq!(m.tensor, m.tensor.transpose(), epsilon = 1e-12);
        let eig = m.tensor.symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-15), "{eig:?}");
        // principal moments of a real body satisfy the triangle inequalities
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0] + ev[1] >= ev[2] - 1e-12);
    }

    #[test]
    fn rnea_free_float_exact_zero() {
        let d = design(vec![0.3, 4.0, 1.0], vec![0.2, 0.25, 0.3], 0.06);
        let q = Configuration::new(vec![0.5, -0.8, 2.0]);
        let tau = rnea(&d, &q, &[0.0; 3], &[0.0; 3], &Wrench::ZERO, &Vector3::zeros()).unwrap();
        assert!(tau.iter().all(|t| *t == 0.0), "{tau:?}");
    }

    #[test]
    fn rnea_static_gravity_matches_hand_statics() {
        // One module along +x with gravity along -y so that the vertical
        // joint axis feels the full lever: τ = g·(m_a·c_a + m_l·c_l) with the
        // payload term W·r on top when loaded.
        let r = 0.5;
        let d = design(vec![0.0], vec![r], 0.08);
        let q = Configuration::zeros(1);
        let g = 9.81;
        let gravity = Vector3::new(0.0, -g, 0.0);

        let m_l = d.link.mass(r);
        // COM levers measured from the joint axis: the actuator sits on the
        // axis (zero lever), the link midpoint at r/2.
        let expect_static = g * (m_l * (r / 2.0));
        let tau = rnea(&d, &q, &[0.0], &[0.0], &Wrench::ZERO, &gravity).unwrap();
        assert_relative_eq!(tau[0], expect_static, epsilon = 1e-9);

        // Payload W pulling along -y at the tip adds W·r.
        let w = 3.3;
        let load = Wrench::new(Vector3::new(0.0, -w, 0.0), Vector3::zeros());
        let tau = rnea(&d, &q, &[0.0], &[0.0], &load, &gravity).unwrap();
        assert_relative_eq!(tau[0], expect_static + w * r, epsilon = 1e-9);
    }

    #[test]
    fn rnea_vertical_axis_feels_no_gravity() {
        let d = design(vec![0.0], vec![0.5], 0.08);
        let tau = rnea(
            &d,
            &Configuration::zeros(1),
            &[0.0],
            &[0.0],
            &Wrench::ZERO,
            &GRAVITY,
        )
        .unwrap();
        assert_relative_eq!(tau[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rnea_linear_in_wrench() {
        let d = design(vec![1.3, 0.4], vec![0.25, 0.3], 0.06);
        let q = Configuration::new(vec![0.7, -0.3]);
        let qd = [0.4, -0.2];
        let qdd = [0.1, 0.5];
        let f1 = Wrench::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.1, 0.0, -0.3));
        let f2 = Wrench::new(Vector3::new(-0.4, 0.9, 2.0), Vector3::new(0.0, 0.2, 0.1));
        let fsum = Wrench::new(f1.force + f2.force, f1.moment + f2.moment);
        let t0 = rnea(&d, &q, &qd, &qdd, &Wrench::ZERO, &GRAVITY).unwrap();
        let t1 = rnea(&d, &q, &qd, &qdd, &f1, &GRAVITY).unwrap();
        let t2 = rnea(&d, &q, &qd, &qdd, &f2, &GRAVITY).unwrap();
        let ts = rnea(&d, &q, &qd, &qdd, &fsum, &GRAVITY).unwrap();
        for k in 0..2 {
            assert_relative_eq!(ts[k] - t0[k], (t1[k] - t0[k]) + (t2[k] - t0[k]), epsilon = 1e-9);
        }
    }

    #[test]
    fn torque_margin_examples() {
        assert_relative_eq!(torque_margin(&[2.0, -3.0], 8.0, 2.0).unwrap(), 2.0);
        assert_relative_eq!(torque_margin(&[0.0, 0.0], 8.0, 2.0).unwrap(), 8.0);
        assert_relative_eq!(torque_margin(&[4.1], 8.0, 2.0).unwrap(), -0.2, epsilon = 1e-12);
        assert!(torque_margin(&[1.0], 8.0, 0.5).is_err());
    }
}
