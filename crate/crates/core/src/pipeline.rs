//! End-to-end synthesis flow: RRT* path search, trajectory fit and
//! collision certification (rerunning RRT* on failure), kinematic
//! optimization, feasibility probe, full optimization when needed, and
//! trajectory-following verification — swept over ascending module counts
//! under seeded restart budgets, with a per-attempt ledger.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constraints::{evaluate_all, EvalConfig};
use crate::error::{Error, Result};
use crate::model::{
    forward_kinematics, validate_task, ActuatorSpec, Configuration, ControlSample, Design,
    LinkSpec, Task,
};
use crate::opt::{
    full_optimize, kinematic_optimize, random_initial_guess, DecisionLayout, DesignTemplate,
    OptConfig, SolverConfig,
};
use crate::plan::{
    assign_times_loads, check_trajectory_collision, fit_trajectory, rrt_star, PiecewiseTrajectory,
    PlannerConfig, Waypoint,
};
use crate::util::derive_seed;
use crate::verify::{verify_trajectory, IkConfig, VerifyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Smallest module count to try.
    pub dof_min: usize,
    /// Largest module count to try.
    pub dof_max: usize,
    /// Path rounds per module count (fresh RRT* runs, including reruns
    /// triggered by trajectory collisions).
    pub max_rrt_attempts: usize,
    /// Kinematic-optimization restarts per path round.
    pub max_kin_restarts: usize,
    /// Full-optimization invocations per path round.
    pub max_full_restarts: usize,
    /// Root seed; every stage derives its own stream from it.
    pub base_seed: u64,
    /// Minimum link length r_0, m.
    pub r_min: f64,
    /// Per-DOF maximum link length, m. Counts not in the map fall back to
    /// 1.2/n, preserving a 1.2 m maximum span.
    pub r_max_per_dof: BTreeMap<usize, f64>,
    /// Torque safety factor β (> 1).
    pub beta: f64,
    /// Reachability tolerance, m.
    pub tol_reach: f64,
    pub gravity: Vector3<f64>,
    pub planner: PlannerConfig,
    pub ik: IkConfig,
    pub solver: SolverConfig,
    /// Clamp for soft clearance terms in the kinematic objective, m.
    pub clearance_cap: f64,
    /// IK-repair fan size after the kinematic stage.
    pub repair_restarts: usize,
    /// Verification samples per waypoint: n† = max(factor · n*, floor).
    pub n_dagger_factor: usize,
    /// Lower bound on n†, so sparse-waypoint tasks still verify densely.
    pub n_dagger_min: usize,
    /// Sample count for the trajectory collision certificate.
    pub traj_check_samples: usize,
    /// Optional wall-clock budget per module count, seconds. Budgets cut
    /// attempts short, so runs racing this limit lose reproducibility.
    pub wall_clock_per_dof_s: Option<f64>,
    pub actuator: ActuatorSpec,
    pub link: LinkSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dof_min: 2,
            dof_max: 6,
            max_rrt_attempts: 5,
            max_kin_restarts: 6,
            max_full_restarts: 3,
            base_seed: 0,
            r_min: 0.08,
            r_max_per_dof: BTreeMap::from([(2, 0.6), (3, 0.4), (4, 0.3)]),
            beta: 2.0,
            tol_reach: 1e-4,
            gravity: crate::kinodyn::GRAVITY,
            planner: PlannerConfig::default(),
            ik: IkConfig::default(),
            solver: SolverConfig::default(),
            clearance_cap: 0.2,
            repair_restarts: 16,
            n_dagger_factor: 10,
            n_dagger_min: 80,
            traj_check_samples: 2000,
            wall_clock_per_dof_s: Some(600.0),
            actuator: ActuatorSpec {
                mass: 0.34,
                body_radius: 0.035,
                body_height: 0.055,
                d: 0.08,
                tau_max: 8.0,
                omega_max: None,
            },
            link: LinkSpec {
                density: 2700.0,
                rad_inner: 0.0143,
                rad_outer: 0.0159,
                delta: 0.032,
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dof_min == 0 || self.dof_min > self.dof_max {
            return Err(Error::InvalidConfig(format!(
                "dof range {}..{} is invalid",
                self.dof_min, self.dof_max
            )));
        }
        if !(self.beta > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "safety factor beta must exceed 1, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("max_rrt_attempts", self.max_rrt_attempts),
            ("max_kin_restarts", self.max_kin_restarts),
            ("n_dagger_factor", self.n_dagger_factor),
            ("traj_check_samples", self.traj_check_samples),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.r_min > 0.0) {
            return Err(Error::InvalidConfig("r_min must be positive".into()));
        }
        self.actuator.validate()?;
        self.link.validate()?;
        self.planner.validate()?;
        Ok(())
    }

    /// Maximum link length for a module count, m.
    pub fn r_max_for(&self, n_dof: usize) -> f64 {
        self.r_max_per_dof.get(&n_dof).copied().unwrap_or(1.2 / n_dof as f64)
    }

    fn eval_for(&self, n_dof: usize, check_torque: bool) -> EvalConfig {
        EvalConfig {
            delta: self.link.delta,
            beta: self.beta,
            tau_max: self.actuator.tau_max,
            tol_reach: self.tol_reach,
            check_torque,
            gravity: self.gravity,
            r_min: self.r_min,
            r_max: self.r_max_for(n_dof),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rrt,
    TrajectoryCheck,
    KinematicOpt,
    Probe,
    FullOpt,
    Verify,
    Budget,
}

/// One ledger line. `wall_ms` is informational and excluded from
/// reproducibility comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub dof: usize,
    pub round: usize,
    pub restart: usize,
    pub stage: Stage,
    pub seed: u64,
    pub result: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Solved,
    Exhausted,
}

/// Metadata of the attempt that produced the solution, for seeded replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolvedMeta {
    pub dof: usize,
    pub round: usize,
    pub restart: usize,
    pub rrt_seed: u64,
    pub verify_ik_seed: u64,
    pub n_dagger: usize,
    pub r_max: f64,
    pub kinematic_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub outcome: Outcome,
    pub seed: u64,
    /// The configuration that produced this report, echoed for replay.
    pub config: PipelineConfig,
    pub design: Option<Design>,
    /// Emitted separately as controls.csv; not serialized into report.json.
    #[serde(skip)]
    pub controls: Option<Vec<ControlSample>>,
    pub trajectory: Option<PiecewiseTrajectory>,
    pub waypoints: Option<Vec<Waypoint>>,
    pub solved: Option<SolvedMeta>,
    pub ledger: Vec<AttemptRecord>,
}

// seed-stream labels
const STREAM_RRT: u64 = 1;
const STREAM_KIN: u64 = 2;
const STREAM_VERIFY: u64 = 3;

/// Synthesize a design and controls for `task` under the full constraint
/// set.
pub fn synthesize(task: &Task, cfg: &PipelineConfig) -> Result<SynthesisReport> {
    synthesize_mode(task, cfg, false)
}

/// Ablation used for prior-work comparison: identical flow with every
/// torque requirement removed (probe, full stage, and verification torque
/// checks).
pub fn synthesize_kinematic_only(task: &Task, cfg: &PipelineConfig) -> Result<SynthesisReport> {
    synthesize_mode(task, cfg, true)
}

fn synthesize_mode(task: &Task, cfg: &PipelineConfig, kinematic_only: bool) -> Result<SynthesisReport> {
    let violations = validate_task(task);
    if !violations.is_empty() {
        return Err(Error::TaskValidation(violations));
    }
    cfg.validate()?;

    let mut ledger: Vec<AttemptRecord> = Vec::new();

    for n_dof in cfg.dof_min..=cfg.dof_max {
        let dof_started = Instant::now();
        let over_budget = |ledger: &mut Vec<AttemptRecord>, round: usize| -> bool {
            match cfg.wall_clock_per_dof_s {
                Some(limit) if dof_started.elapsed().as_secs_f64() > limit => {
                    ledger.push(AttemptRecord {
                        dof: n_dof,
                        round,
                        restart: 0,
                        stage: Stage::Budget,
                        seed: cfg.base_seed,
                        result: format!("wall clock budget of {limit} s exhausted"),
                        wall_ms: dof_started.elapsed().as_millis() as u64,
                    });
                    true
                }
                _ => false,
            }
        };

        let r_max = cfg.r_max_for(n_dof);
        let eval = cfg.eval_for(n_dof, !kinematic_only);
        let opt_cfg = OptConfig {
            solver: cfg.solver,
            clearance_cap: cfg.clearance_cap,
            eval: eval.clone(),
            ik: cfg.ik,
            repair_restarts: cfg.repair_restarts,
            actuator: cfg.actuator,
            link: cfg.link,
        };
        let tmpl = DesignTemplate { base_z: task.base.z, actuator: cfg.actuator, link: cfg.link };

        'rounds: for round in 0..cfg.max_rrt_attempts {
            if over_budget(&mut ledger, round) {
                break 'rounds;
            }

            // ---- plan a path and certify its trajectory ----
            let rrt_seed = derive_seed(cfg.base_seed, &[STREAM_RRT, n_dof as u64, round as u64]);
            let planner = PlannerConfig { rng_seed: rrt_seed, ..cfg.planner };
            let t0 = Instant::now();
            let path = match rrt_star(task, &planner) {
                Ok(p) => p,
                Err(Error::PlanningFailed { leg }) => {
                    ledger.push(AttemptRecord {
                        dof: n_dof,
                        round,
                        restart: 0,
                        stage: Stage::Rrt,
                        seed: rrt_seed,
                        result: format!("failed: sample budget exhausted on leg {leg}"),
                        wall_ms: t0.elapsed().as_millis() as u64,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            ledger.push(AttemptRecord {
                dof: n_dof,
                round,
                restart: 0,
                stage: Stage::Rrt,
                seed: rrt_seed,
                result: format!("ok: {} waypoints", path.len()),
                wall_ms: t0.elapsed().as_millis() as u64,
            });

            let waypoints = assign_times_loads(task, &path)?;
            let traj = fit_trajectory(&waypoints)?;
            let span = traj.t_end() - traj.t_start();
            let dt_check = span / cfg.traj_check_samples as f64;
            let t0 = Instant::now();
            if !check_trajectory_collision(&traj, task, dt_check, cfg.planner.ef_clearance) {
                ledger.push(AttemptRecord {
                    dof: n_dof,
                    round,
                    restart: 0,
                    stage: Stage::TrajectoryCheck,
                    seed: rrt_seed,
                    result: "collision: rerunning rrt".into(),
                    wall_ms: t0.elapsed().as_millis() as u64,
                });
                continue;
            }
            ledger.push(AttemptRecord {
                dof: n_dof,
                round,
                restart: 0,
                stage: Stage::TrajectoryCheck,
                seed: rrt_seed,
                result: "ok".into(),
                wall_ms: t0.elapsed().as_millis() as u64,
            });

            let layout = DecisionLayout { n_dof, n_waypoints: waypoints.len() };
            let mut full_budget = cfg.max_full_restarts;

            for restart in 0..cfg.max_kin_restarts {
                if over_budget(&mut ledger, round) {
                    break 'rounds;
                }
                let kin_seed = derive_seed(
                    cfg.base_seed,
                    &[STREAM_KIN, n_dof as u64, round as u64, restart as u64],
                );
                let x0 = random_initial_guess(&layout, task, cfg.r_min, r_max, kin_seed);
                let t0 = Instant::now();
                let kin = kinematic_optimize(task, &waypoints, n_dof, &x0, &opt_cfg)?;
                let (design, qs) = layout.decode(&kin.x, &tmpl);
                let max_reach = max_reach_residual(&design, &qs, &waypoints)?;
                let reach_ok = max_reach <= cfg.tol_reach;
                ledger.push(AttemptRecord {
                    dof: n_dof,
                    round,
                    restart,
                    stage: Stage::KinematicOpt,
                    seed: kin_seed,
                    result: format!(
                        "{}: max reach residual {max_reach:.3e}, violation {:.3e}",
                        if reach_ok { "feasible" } else { "infeasible" },
                        kin.constraint_violation
                    ),
                    wall_ms: t0.elapsed().as_millis() as u64,
                });
                if !reach_ok {
                    continue;
                }

                let t0 = Instant::now();
                let probe_pass =
                    crate::opt::feasibility_probe(&design, &qs, &waypoints, &traj, task, &eval)?;
                ledger.push(AttemptRecord {
                    dof: n_dof,
                    round,
                    restart,
                    stage: Stage::Probe,
                    seed: kin_seed,
                    result: if probe_pass { "pass".into() } else { "fail".into() },
                    wall_ms: t0.elapsed().as_millis() as u64,
                });

                let (cand_design, cand_qs) = if probe_pass {
                    (design, qs)
                } else if kinematic_only {
                    // no dynamic stage to fall back to in the ablation
                    continue;
                } else if full_budget == 0 {
                    continue;
                } else {
                    full_budget -= 1;
                    let t0 = Instant::now();
                    let full = full_optimize(task, &waypoints, &traj, n_dof, &kin.x, &opt_cfg)?;
                    let (d2, q2) = layout.decode(&full.x, &tmpl);
                    let controls = waypoint_controls(&q2, &waypoints);
                    let report = evaluate_all(&d2, &controls, &waypoints, &traj, task, &eval)?;
                    ledger.push(AttemptRecord {
                        dof: n_dof,
                        round,
                        restart,
                        stage: Stage::FullOpt,
                        seed: kin_seed,
                        result: format!(
                            "{}: violation {:.3e}",
                            if report.feasible { "feasible" } else { "infeasible" },
                            full.constraint_violation
                        ),
                        wall_ms: t0.elapsed().as_millis() as u64,
                    });
                    if !report.feasible {
                        continue;
                    }
                    (d2, q2)
                };

                // ---- trajectory-following verification ----
                let n_dagger = (cfg.n_dagger_factor * waypoints.len()).max(cfg.n_dagger_min);
                let verify_ik_seed = derive_seed(
                    cfg.base_seed,
                    &[STREAM_VERIFY, n_dof as u64, round as u64, restart as u64],
                );
                let vcfg = VerifyConfig {
                    ik: IkConfig { rng_seed: verify_ik_seed, ..cfg.ik },
                    eval: eval.clone(),
                };
                let t0 = Instant::now();
                let vres = verify_trajectory(
                    &cand_design,
                    &traj,
                    &waypoints,
                    task,
                    &cand_qs[0],
                    n_dagger,
                    &vcfg,
                )?;
                ledger.push(AttemptRecord {
                    dof: n_dof,
                    round,
                    restart,
                    stage: Stage::Verify,
                    seed: verify_ik_seed,
                    result: match &vres.first_failure {
                        None => "passed".into(),
                        Some((idx, reason)) => format!("failed at sample {idx}: {reason:?}"),
                    },
                    wall_ms: t0.elapsed().as_millis() as u64,
                });
                if vres.passed {
                    return Ok(SynthesisReport {
                        outcome: Outcome::Solved,
                        seed: cfg.base_seed,
                        config: cfg.clone(),
                        design: Some(cand_design),
                        controls: Some(vres.samples),
                        trajectory: Some(traj),
                        waypoints: Some(waypoints),
                        solved: Some(SolvedMeta {
                            dof: n_dof,
                            round,
                            restart,
                            rrt_seed,
                            verify_ik_seed,
                            n_dagger,
                            r_max,
                            kinematic_only,
                        }),
                        ledger,
                    });
                }
            }
        }
    }

    Ok(SynthesisReport {
        outcome: Outcome::Exhausted,
        seed: cfg.base_seed,
        config: cfg.clone(),
        design: None,
        controls: None,
        trajectory: None,
        waypoints: None,
        solved: None,
        ledger,
    })
}

fn max_reach_residual(
    design: &Design,
    qs: &[Configuration],
    waypoints: &[Waypoint],
) -> Result<f64> {
    let mut max = 0.0f64;
    for (q, w) in qs.iter().zip(waypoints) {
        max = max.max(forward_kinematics(design, q)?.ef().distance(&w.p));
    }
    Ok(max)
}

/// Per-waypoint control samples carrying only the configurations; dynamic
/// quantities are recomputed by the evaluation layer.
fn waypoint_controls(qs: &[Configuration], waypoints: &[Waypoint]) -> Vec<ControlSample> {
    qs.iter()
        .zip(waypoints)
        .map(|(q, w)| ControlSample {
            t: w.t,
            q: q.clone(),
            q_dot: vec![0.0; q.len()],
            tau: vec![0.0; q.len()],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::model::{BaseRegion, TaskPoint, Wrench};

    fn small_task() -> Task {
        Task {
            points: vec![
                TaskPoint { p: Point3::new(0.35, 0.05, 0.25), t: 0.0, f: Wrench::ZERO },
                TaskPoint { p: Point3::new(0.25, 0.25, 0.35), t: 2.0, f: Wrench::ZERO },
            ],
            spheres: vec![],
            walls: vec![],
            base: BaseRegion { x_min: -0.15, x_max: 0.15, y_min: -0.15, y_max: 0.15, z: 0.0 },
        }
    }

    fn fast_cfg() -> PipelineConfig {
        PipelineConfig {
            dof_min: 3,
            dof_max: 3,
            max_rrt_attempts: 2,
            max_kin_restarts: 6,
            ..Default::default()
        }
    }

    #[test]
    fn invalid_task_rejected_before_planning() {
        let mut task = small_task();
        task.points[0].t = 0.7;
        task.points[1].t = 2.0;
        match synthesize(&task, &fast_cfg()) {
            Err(Error::TaskValidation(v)) => {
                assert!(v.iter().any(|m| m.contains("first timestamp")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn obstacle_free_task_solves_and_verifies() {
        let task = small_task();
        let report = synthesize(&task, &fast_cfg()).unwrap();
        assert_eq!(report.outcome, Outcome::Solved, "ledger: {:#?}", report.ledger);
        let design = report.design.unwrap();
        assert!(design.n_dof <= 3);
        let controls = report.controls.unwrap();
        assert_eq!(controls.len(), report.solved.unwrap().n_dagger);
        // solved reports re-verify independently
        let eval = fast_cfg().eval_for(design.n_dof, true);
        let vcfg = VerifyConfig {
            ik: IkConfig {
                rng_seed: report.solved.unwrap().verify_ik_seed,
                ..fast_cfg().ik
            },
            eval,
        };
        let vres = verify_trajectory(
            &design,
            report.trajectory.as_ref().unwrap(),
            report.waypoints.as_ref().unwrap(),
            &task,
            &controls[0].q,
            report.solved.unwrap().n_dagger,
            &vcfg,
        )
        .unwrap();
        assert!(vres.passed);
    }

    #[test]
    fn unreachable_task_exhausts_with_reach_residuals() {
        let mut task = small_task();
        task.points[1].p = Point3::new(5.0, 0.0, 0.3);
        task.points[1].t = 2.0;
        let cfg = PipelineConfig {
            dof_min: 2,
            dof_max: 2,
            max_rrt_attempts: 1,
            max_kin_restarts: 2,
            ..Default::default()
        };
        let report = synthesize(&task, &cfg).unwrap();
        assert_eq!(report.outcome, Outcome::Exhausted);
        assert!(report
            .ledger
            .iter()
            .any(|r| r.stage == Stage::KinematicOpt && r.result.starts_with("infeasible")));
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let task = small_task();
        let cfg = fast_cfg();
        let a = synthesize(&task, &cfg).unwrap();
        let b = synthesize(&task, &cfg).unwrap();
        assert_eq!(a.design, b.design);
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.trajectory, b.trajectory);
        // ledgers match except for wall-clock timings
        assert_eq!(a.ledger.len(), b.ledger.len());
        for (ra, rb) in a.ledger.iter().zip(&b.ledger) {
            assert_eq!((ra.dof, ra.round, ra.restart, ra.stage, ra.seed), (rb.dof, rb.round, rb.restart, rb.stage, rb.seed));
            assert_eq!(ra.result, rb.result);
        }
    }
}
