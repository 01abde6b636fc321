//! Local solver for constrained nonlinear programs with box bounds:
//! an augmented-Lagrangian outer loop (Powell-Hestenes-Rockafellar
//! multipliers for inequalities) around a projected quasi-Newton inner
//! minimizer with forward finite-difference gradients. Deterministic for
//! fixed inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Augmented-Lagrangian (multiplier update) rounds.
    pub max_outer: usize,
    /// Quasi-Newton iterations per round.
    pub max_inner: usize,
    /// Constraint-violation tolerance for a converged result.
    pub feas_tol: f64,
    /// Projected-gradient infinity-norm tolerance for inner stationarity.
    pub grad_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Hard cap on total problem evaluations.
    pub max_feval: usize,
    /// Forward finite-difference step.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer: 40,
            max_inner: 300,
            feas_tol: 1e-6,
            grad_tol: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 4.0,
            max_penalty: 1e7,
            max_feval: 400_000,
            fd_step: 1e-7,
        }
    }
}

/// One batched evaluation of the problem functions at a point.
#[derive(Debug, Clone, Default)]
pub struct ProblemEval {
    pub objective: f64,
    /// Equality residuals, want = 0.
    pub eq: Vec<f64>,
    /// Inequality values, want ≥ 0.
    pub ineq: Vec<f64>,
}

/// min f(x)  s.t.  c_eq(x) = 0,  c_ineq(x) ≥ 0,  lower ≤ x ≤ upper.
///
/// The objective and every constraint are produced by one batched call so
/// shared work (kinematics, dynamics) is done once per point.
pub struct NlpProblem {
    pub eval: Box<dyn Fn(&[f64]) -> ProblemEval>,
    pub objective_name: String,
    pub eq_names: Vec<String>,
    pub ineq_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl NlpProblem {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// max(|c_eq|, violation of c_ineq) at the final iterate.
    pub constraint_violation: f64,
    pub objective: f64,
}

struct Evaluator<'a> {
    p: &'a NlpProblem,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
    fevals: usize,
    nan_source: Option<String>,
}

impl<'a> Evaluator<'a> {
    fn raw(&mut self, x: &[f64]) -> ProblemEval {
        self.fevals += 1;
        let ev = (self.p.eval)(x);
        if self.nan_source.is_none() {
            if ev.objective.is_nan() {
                self.nan_source = Some(self.p.objective_name.clone());
            }
            for (j, c) in ev.eq.iter().enumerate() {
                if c.is_nan() {
                    self.nan_source = Some(self.p.eq_names[j].clone());
                    break;
                }
            }
            for (j, c) in ev.ineq.iter().enumerate() {
                if c.is_nan() {
                    self.nan_source = Some(self.p.ineq_names[j].clone());
                    break;
                }
            }
        }
        ev
    }

    /// Augmented Lagrangian value.
    fn merit(&mut self, x: &[f64]) -> f64 {
        let ev = self.raw(x);
        let mut l = ev.objective;
        for (j, c) in ev.eq.iter().enumerate() {
            l += -self.lambda[j] * c + 0.5 * self.rho * c * c;
        }
        for (j, c) in ev.ineq.iter().enumerate() {
            let t = (self.mu[j] - self.rho * c).max(0.0);
            l += (t * t - self.mu[j] * self.mu[j]) / (2.0 * self.rho);
        }
        l
    }
}

fn violation(ev: &ProblemEval) -> f64 {
    let e = ev.eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let i = ev.ineq.iter().fold(0.0f64, |m, c| m.max((-c).max(0.0)));
    e.max(i)
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Gradient components pointing out of the box at active bounds are zeroed.
fn projected_gradient(g: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            if x[i] <= lo[i] && gi > 0.0 {
                0.0
            } else if x[i] >= hi[i] && gi < 0.0 {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Solve the NLP from `x0` (projected into the box). Returns the best
/// iterate with convergence and violation diagnostics; `Err` only on NaN in
/// a user function, naming the offender.
pub fn solve_nlp(p: &NlpProblem, x0: &[f64], cfg: &SolverConfig) -> Result<OptResult> {
    let n = p.dim();
    if x0.len() != n || p.upper.len() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: x0 has {}, bounds have {}/{}",
            x0.len(),
            n,
            p.upper.len()
        )));
    }
    let mut x = x0.to_vec();
    project(&mut x, &p.lower, &p.upper);

    let probe = (p.eval)(&x);
    let mut ev = Evaluator {
        p,
        lambda: vec![0.0; probe.eq.len()],
        mu: vec![0.0; probe.ineq.len()],
        rho: cfg.initial_penalty,
        fevals: 0,
        nan_source: None,
    };

    let fd = cfg.fd_step;
    let mut iterations = 0usize;
    let mut prev_viol = f64::INFINITY;
    let mut stationary = false;
    let mut stagnant_rounds = 0usize;

    for _outer in 0..cfg.max_outer {
        // ----- inner projected-BFGS minimization of the merit function -----
        let mut l_cur = ev.merit(&x);
        if let Some(name) = ev.nan_source.take() {
            return Err(Error::NumericalFailure(name));
        }
        let mut g = fd_gradient(&mut ev, &x, l_cur, fd);
        if let Some(name) = ev.nan_source.take() {
            return Err(Error::NumericalFailure(name));
        }
        // Scale the initial inverse Hessian so the first trial step is O(1)
        // even when the penalty makes the gradient huge.
        let g0_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut h = DMatrix::<f64>::identity(n, n) / g0_norm.max(1.0);
        let mut first_update = true;
        let mut alpha_start = 1.0f64;

        stationary = false;
        for _inner in 0..cfg.max_inner {
            iterations += 1;
            let pg = projected_gradient(&g, &x, &p.lower, &p.upper);
            let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if pg_norm <= cfg.grad_tol * (1.0 + l_cur.abs()) {
                stationary = true;
                break;
            }
            if ev.fevals > cfg.max_feval {
                break;
            }

            let gv = DVector::from_column_slice(&g);
            let mut dir = -(&h * &gv);
            if dir.dot(&gv) >= 0.0 {
                h = DMatrix::identity(n, n) / gv.norm().max(1.0);
                first_update = true;
                dir = -(&h * &gv);
            }

            // backtracking line search with box projection and step memory;
            // on a stall, retry once along steepest descent before giving up
            let mut accepted = false;
            let mut x_new = x.clone();
            let mut l_new = l_cur;
            let mut alpha = alpha_start;
            for round in 0..2 {
                if round == 1 {
                    h = DMatrix::identity(n, n) / gv.norm().max(1.0);
                    first_update = true;
                    dir = -(&h * &gv);
                    alpha = 1.0;
                }
                while alpha > 1e-16 {
                    for i in 0..n {
                        x_new[i] = x[i] + alpha * dir[i];
                    }
                    project(&mut x_new, &p.lower, &p.upper);
                    let step_dot: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
                    l_new = ev.merit(&x_new);
                    if let Some(name) = ev.nan_source.take() {
                        return Err(Error::NumericalFailure(name));
                    }
                    if l_new <= l_cur + 1e-4 * step_dot.min(0.0) && l_new < l_cur {
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted {
                    break;
                }
            }
            if !accepted {
                stationary = true; // no descent along either direction
                break;
            }
            alpha_start = (alpha * 4.0).min(1.0);

            let g_new = fd_gradient(&mut ev, &x_new, l_new, fd);
            if let Some(name) = ev.nan_source.take() {
                return Err(Error::NumericalFailure(name));
            }
            let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
            let yv = DVector::from_iterator(n, (0..n).map(|i| g_new[i] - g[i]));
            let sy = s.dot(&yv);
            if sy > 1e-10 * s.norm() * yv.norm() {
                if first_update {
                    // Barzilai-Borwein seed before the first BFGS update
                    h = DMatrix::identity(n, n) * (sy / yv.norm_squared());
                    first_update = false;
                }
                // BFGS update of the inverse Hessian
                let r = 1.0 / sy;
                let hy = &h * &yv;
                let yhy = yv.dot(&hy);
                h = &h - (&hy * s.transpose() + &s * hy.transpose()) * r
                    + &s * s.transpose() * (r * r * yhy + r);
            }
            x = x_new.clone();
            l_cur = l_new;
            g = g_new;
        }

        // ----- multiplier and penalty updates -----
        let evx = ev.raw(&x);
        if let Some(name) = ev.nan_source.take() {
            return Err(Error::NumericalFailure(name));
        }
        let viol = violation(&evx);
        if viol <= cfg.feas_tol && stationary {
            return Ok(OptResult {
                x,
                converged: true,
                iterations,
                constraint_violation: viol,
                objective: evx.objective,
            });
        }
        for (j, c) in evx.eq.iter().enumerate() {
            ev.lambda[j] -= ev.rho * c;
        }
        for (j, c) in evx.ineq.iter().enumerate() {
            ev.mu[j] = (ev.mu[j] - ev.rho * c).max(0.0);
        }
        if viol > 0.25 * prev_viol {
            ev.rho = (ev.rho * cfg.penalty_growth).min(cfg.max_penalty);
        }
        // give up once the penalty is maxed and feasibility has stopped
        // improving: the iterate is stuck in an infeasible basin
        if viol > 0.95 * prev_viol && ev.rho >= cfg.max_penalty {
            stagnant_rounds += 1;
            if stagnant_rounds >= 4 {
                break;
            }
        } else {
            stagnant_rounds = 0;
        }
        prev_viol = viol;
        if ev.fevals > cfg.max_feval {
            break;
        }
    }

    let evx = ev.raw(&x);
    let viol = violation(&evx);
    Ok(OptResult {
        x,
        converged: viol <= cfg.feas_tol && stationary,
        iterations,
        constraint_violation: viol,
        objective: evx.objective,
    })
}

fn fd_gradient(ev: &mut Evaluator<'_>, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        g[i] = (ev.merit(&xp) - fx) / h;
        xp[i] = x[i];
    }
    g
}
