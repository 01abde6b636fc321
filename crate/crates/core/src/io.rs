//! Artifact files: task/config ingestion and emission of design.json,
//! controls.csv, traj.csv, path.csv, report.json, and the plot-data
//! exports. All values are SI (meters, seconds, radians, newtons); floats
//! are written with Rust's shortest round-trip formatting so emitted files
//! re-parse bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlSample, Configuration, Design, Task};
use crate::pipeline::{PipelineConfig, SynthesisReport};
use crate::plan::sample_trajectory;

/// design.json payload: the chosen structure plus the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub seed: u64,
    #[serde(flatten)]
    pub design: Design,
}

pub fn read_task(path: &Path) -> Result<Task> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read task file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("malformed task file {}: {e}", path.display())))
}

pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("malformed config file {}: {e}", path.display())))
}

pub fn read_design(path: &Path) -> Result<DesignFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read design file {}: {e}", path.display())))?;
    let df: DesignFile = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("malformed design file {}: {e}", path.display())))?;
    df.design.validate()?;
    Ok(df)
}

pub fn read_report(path: &Path) -> Result<SynthesisReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read report file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("malformed report file {}: {e}", path.display())))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// controls.csv: `t, θ_1..θ_n, θ̇_1..θ̇_n, τ_1..τ_n`, one row per sample,
/// preceded by a `# seed=` header comment.
pub fn controls_csv(samples: &[ControlSample], seed: u64) -> String {
    let n = samples.first().map_or(0, |s| s.q.len());
    let mut out = String::new();
    let _ = writeln!(out, "# seed={seed}");
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("theta_{k}")));
    header.extend((1..=n).map(|k| format!("theta_dot_{k}")));
    header.extend((1..=n).map(|k| format!("tau_{k}")));
    let _ = writeln!(out, "{}", header.join(","));
    for s in samples {
        let mut row = vec![format!("{}", s.t)];
        row.extend(s.q.theta.iter().map(|v| format!("{v}")));
        row.extend(s.q_dot.iter().map(|v| format!("{v}")));
        row.extend(s.tau.iter().map(|v| format!("{v}")));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn parse_controls_csv(text: &str) -> Result<Vec<ControlSample>> {
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("controls csv has no header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("theta_") && !c.starts_with("theta_dot_")).count();
    if cols.len() != 1 + 3 * n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "controls csv header must be t,theta_1..,theta_dot_1..,tau_1.. (got {} columns for {n} joints)",
            cols.len()
        )));
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("controls csv row {}: bad number {v:?}: {e}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 1 + 3 * n {
            return Err(Error::InvalidArgument(format!(
                "controls csv row {}: expected {} values, got {}",
                lineno + 1,
                1 + 3 * n,
                vals.len()
            )));
        }
        samples.push(ControlSample {
            t: vals[0],
            q: Configuration::new(vals[1..1 + n].to_vec()),
            q_dot: vals[1 + n..1 + 2 * n].to_vec(),
            tau: vals[1 + 2 * n..].to_vec(),
        });
    }
    Ok(samples)
}

pub fn read_controls(path: &Path) -> Result<Vec<ControlSample>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read controls file {}: {e}", path.display())))?;
    parse_controls_csv(&text)
}

/// Write report.json plus, for solved runs, design.json, controls.csv,
/// traj.csv, and path.csv into `dir`.
pub fn write_artifacts(dir: &Path, report: &SynthesisReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_string(&dir.join("report.json"), &json_pretty(report)?)?;

    let (Some(design), Some(controls), Some(traj), Some(waypoints)) =
        (&report.design, &report.controls, &report.trajectory, &report.waypoints)
    else {
        return Ok(());
    };

    let df = DesignFile { seed: report.seed, design: design.clone() };
    write_string(&dir.join("design.json"), &json_pretty(&df)?)?;
    write_string(&dir.join("controls.csv"), &controls_csv(controls, report.seed))?;

    let mut traj_csv = format!("# seed={}\n", report.seed);
    traj_csv.push_str("t,x,y,z,vx,vy,vz,ax,ay,az\n");
    for s in controls {
        let (p, v, a) = sample_trajectory(traj, s.t)?;
        let _ = writeln!(
            traj_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t, p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z
        );
    }
    write_string(&dir.join("traj.csv"), &traj_csv)?;

    let mut path_csv = format!("# seed={}\n", report.seed);
    path_csv.push_str("t,x,y,z\n");
    for w in waypoints {
        let _ = writeln!(path_csv, "{},{},{},{}", w.t, w.p.x, w.p.y, w.p.z);
    }
    write_string(&dir.join("path.csv"), &path_csv)?;
    Ok(())
}

/// torque_profile.csv: per joint the commanded |τ_k| and scaled |β·τ_k|,
/// with the torque limit in the last column for direct plotting.
pub fn torque_profile_csv(controls: &[ControlSample], beta: f64, tau_max: f64) -> Result<String> {
    let n = controls.first().map_or(0, |s| s.q.len());
    if n == 0 {
        return Err(Error::InvalidArgument("no control samples to plot".into()));
    }
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    for k in 1..=n {
        header.push(format!("abs_tau_{k}"));
        header.push(format!("abs_beta_tau_{k}"));
    }
    header.push("tau_max".to_string());
    let _ = writeln!(out, "{}", header.join(","));
    for s in controls {
        let mut row = vec![format!("{}", s.t)];
        for k in 0..n {
            row.push(format!("{}", s.tau[k].abs()));
            row.push(format!("{}", (beta * s.tau[k]).abs()));
        }
        row.push(format!("{tau_max}"));
        let _ = writeln!(out, "{}", row.join(","));
    }
    Ok(out)
}

/// ef_path.csv: the end-effector position at every emitted control sample.
pub fn ef_path_csv(design: &Design, controls: &[ControlSample]) -> Result<String> {
    let mut out = String::from("t,x,y,z\n");
    for s in controls {
        let ef = crate::model::forward_kinematics(design, &s.q)?.ef();
        let _ = writeln!(out, "{},{},{},{}", s.t, ef.x, ef.y, ef.z);
    }
    Ok(out)
}
