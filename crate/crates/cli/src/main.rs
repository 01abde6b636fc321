//! Command-line front end: task/config ingestion, pipeline invocation,
//! artifact emission, verification replay, control replay, and plot-data
//! export.
//!
//! Exit codes are the machine contract: 0 success/pass, 1 input error,
//! 2 exhausted/failed. Stdout carries human-readable output (JSON for the
//! report commands); diagnostics go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use armsynth::constraints::{dynamics_from_q_dot, evaluate_all};
use armsynth::io;
use armsynth::model::{validate_task, Task};
use armsynth::pipeline::{synthesize, synthesize_kinematic_only, Outcome, PipelineConfig};
use armsynth::plan::{
    assign_times_loads, fit_trajectory, rrt_star, sample_trajectory, PlannerConfig, Waypoint,
};
use armsynth::verify::{verify_trajectory, IkConfig, VerifyConfig};

#[derive(Parser)]
#[command(name = "armsynth", version, about = "Synthesize modular manipulator designs and controls from task files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a design and controls for a task
    Synth {
        /// Task description (JSON)
        #[arg(long)]
        task: PathBuf,
        /// Pipeline configuration (JSON); defaults apply when omitted
        #[arg(long, env = "ARMSYNTH_CONFIG")]
        config: Option<PathBuf>,
        /// Output directory for report.json, design.json, controls.csv, traj.csv
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the configuration's base RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Drop every torque requirement (prior-work comparison mode)
        #[arg(long)]
        kinematic_only: bool,
    },
    /// Re-plan and re-verify an emitted design against a task
    Verify {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long, env = "ARMSYNTH_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Replay emitted controls through the inverse dynamics and check that
    /// the recorded torques are reproduced
    Simulate {
        /// Directory holding report.json, design.json, controls.csv
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Export torque_profile.csv and ef_path.csv for external plotting
    PlotData {
        #[arg(long)]
        artifacts: PathBuf,
        /// Destination directory (defaults to the artifact directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a task file against every task invariant
    Validate {
        #[arg(long)]
        task: PathBuf,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_FAIL: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.cmd {
        Cmd::Synth { task, config, out, seed, kinematic_only } => {
            run_synth(&task, config.as_deref(), &out, seed, kinematic_only)
        }
        Cmd::Verify { design, task, config } => run_verify(&design, &task, config.as_deref()),
        Cmd::Simulate { artifacts } => run_simulate(&artifacts),
        Cmd::PlotData { artifacts, out } => run_plot_data(&artifacts, out.as_deref()),
        Cmd::Validate { task } => run_validate(&task),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => io::read_config(p)?,
        None => PipelineConfig::default(),
    })
}

fn run_synth(
    task_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    kinematic_only: bool,
) -> anyhow::Result<u8> {
    let task = io::read_task(task_path)?;
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    let report = if kinematic_only {
        synthesize_kinematic_only(&task, &cfg)?
    } else {
        synthesize(&task, &cfg)?
    };
    io::write_artifacts(out, &report)?;
    match report.outcome {
        Outcome::Solved => {
            let d = report.design.as_ref().expect("solved report has a design");
            println!(
                "solved: {} modules, base ({}, {}, {}), artifacts in {}",
                d.n_dof,
                d.origin.x,
                d.origin.y,
                d.origin.z,
                out.display()
            );
            Ok(EXIT_OK)
        }
        Outcome::Exhausted => {
            println!(
                "exhausted: no verified design within budgets ({} ledger entries); see {}",
                report.ledger.len(),
                out.join("report.json").display()
            );
            Ok(EXIT_FAIL)
        }
    }
}

fn run_verify(design_path: &Path, task_path: &Path, config_path: Option<&Path>) -> anyhow::Result<u8> {
    let df = io::read_design(design_path)?;
    let task = io::read_task(task_path)?;
    let violations = validate_task(&task);
    if !violations.is_empty() {
        anyhow::bail!("invalid task: {}", violations.join("; "));
    }

    // Prefer replay metadata emitted next to the design.
    let artifact_dir = design_path.parent().unwrap_or(Path::new("."));
    let report = io::read_report(&artifact_dir.join("report.json")).ok();
    let mut cfg = match (&report, config_path) {
        (_, Some(p)) => io::read_config(p)?,
        (Some(r), None) => r.config.clone(),
        (None, None) => PipelineConfig::default(),
    };
    cfg.base_seed = df.seed;
    let meta = report.as_ref().and_then(|r| r.solved);
    let n_dof = df.design.n_dof;

    // Re-plan the trajectory with the recorded seed.
    let rrt_seed = meta.map_or(cfg.planner.rng_seed, |m| m.rrt_seed);
    let planner = PlannerConfig { rng_seed: rrt_seed, ..cfg.planner };
    let path = rrt_star(&task, &planner)?;
    let waypoints = assign_times_loads(&task, &path)?;
    let traj = fit_trajectory(&waypoints)?;

    // Seed verification with the first emitted control when available.
    let controls = io::read_controls(&artifact_dir.join("controls.csv")).ok();
    let q_init = match &controls {
        Some(cs) if !cs.is_empty() && cs[0].q.len() == n_dof => cs[0].q.clone(),
        _ => armsynth::model::Configuration::zeros(n_dof),
    };

    let r_max = meta.map_or(cfg.r_max_for(n_dof), |m| m.r_max);
    let check_torque = meta.map_or(true, |m| !m.kinematic_only);
    let eval = armsynth::constraints::EvalConfig {
        delta: cfg.link.delta,
        beta: cfg.beta,
        tau_max: cfg.actuator.tau_max,
        tol_reach: cfg.tol_reach,
        check_torque,
        gravity: cfg.gravity,
        r_min: cfg.r_min,
        r_max,
    };
    let n_dagger = meta.map_or(cfg.n_dagger_factor * waypoints.len(), |m| m.n_dagger);
    let vcfg = VerifyConfig {
        ik: IkConfig {
            rng_seed: meta.map_or(cfg.ik.rng_seed, |m| m.verify_ik_seed),
            ..cfg.ik
        },
        eval: eval.clone(),
    };
    let vres = verify_trajectory(&df.design, &traj, &waypoints, &task, &q_init, n_dagger, &vcfg)?;

    // Constraint report over the verification samples: each sample acts as a
    // waypoint with its trajectory position and inherited load.
    let sample_waypoints: Vec<Waypoint> = vres
        .samples
        .iter()
        .map(|s| {
            let (p, _, _) = sample_trajectory(&traj, s.t)?;
            Ok(Waypoint { p, t: s.t, f: load_at(&waypoints, s.t) })
        })
        .collect::<armsynth::Result<_>>()?;
    let creport = evaluate_all(&df.design, &vres.samples, &sample_waypoints, &traj, &task, &eval)?;

    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "constraint_report": creport,
            "verification": vres,
        }))?
    );
    Ok(if vres.passed && creport.feasible { EXIT_OK } else { EXIT_FAIL })
}

fn load_at(waypoints: &[Waypoint], t: f64) -> armsynth::model::Wrench {
    let idx = waypoints.partition_point(|w| w.t <= t).saturating_sub(1).min(waypoints.len() - 1);
    waypoints[idx].f
}

fn run_simulate(artifacts: &Path) -> anyhow::Result<u8> {
    let report = io::read_report(&artifacts.join("report.json"))?;
    let df = io::read_design(&artifacts.join("design.json"))?;
    let controls = io::read_controls(&artifacts.join("controls.csv"))?;
    if controls.is_empty() {
        anyhow::bail!("controls.csv holds no samples");
    }
    let traj = report
        .trajectory
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("report.json holds no trajectory to replay"))?;
    let waypoints = report
        .waypoints
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("report.json holds no waypoints to replay"))?;

    let mut max_dev = 0.0f64;
    for s in &controls {
        let load = load_at(waypoints, s.t);
        let (_, tau, _) =
            dynamics_from_q_dot(&df.design, &s.q, &s.q_dot, traj, s.t, &load, &report.config.gravity)?;
        for (a, b) in tau.iter().zip(&s.tau) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "samples": controls.len(),
            "max_abs_torque_deviation": max_dev,
            "reproduced": max_dev <= 1e-12,
        }))?
    );
    Ok(if max_dev <= 1e-12 { EXIT_OK } else { EXIT_FAIL })
}

fn run_plot_data(artifacts: &Path, out: Option<&Path>) -> anyhow::Result<u8> {
    let report = io::read_report(&artifacts.join("report.json"))?;
    let df = io::read_design(&artifacts.join("design.json"))?;
    let controls = io::read_controls(&artifacts.join("controls.csv"))?;
    if controls.is_empty() {
        anyhow::bail!("controls.csv holds no samples");
    }
    let out_dir = out.unwrap_or(artifacts);
    std::fs::create_dir_all(out_dir)?;
    let torque = io::torque_profile_csv(&controls, report.config.beta, report.config.actuator.tau_max)?;
    std::fs::write(out_dir.join("torque_profile.csv"), torque)?;
    let ef = io::ef_path_csv(&df.design, &controls)?;
    std::fs::write(out_dir.join("ef_path.csv"), ef)?;
    println!("wrote {} and {}", out_dir.join("torque_profile.csv").display(), out_dir.join("ef_path.csv").display());
    Ok(EXIT_OK)
}

fn run_validate(task_path: &Path) -> anyhow::Result<u8> {
    let task: Task = io::read_task(task_path)?;
    let violations = validate_task(&task);
    if violations.is_empty() {
        println!("task ok: {} points, {} spheres, {} walls", task.points.len(), task.spheres.len(), task.walls.len());
        Ok(EXIT_OK)
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Ok(EXIT_INPUT)
    }
}
