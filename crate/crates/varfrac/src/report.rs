//! CSV and manifest emission.
//!
//! Floats are written with Rust's shortest round-trip formatting so golden
//! files compare bit-exactly; all writing is single-threaded and appends rows
//! in a fixed order. Column layouts are documented in FORMAT.md.

use crate::cascade::CascadeReport;
use crate::checks::CheckReport;
use crate::field::Field;
use crate::solver::Trajectory;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Full round-trip text for one float; integral values keep a `.0` suffix so
/// columns stay recognizably numeric.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Record of one CLI run: what was configured, how long the stages took, how
/// hard the solver worked, and which files were written. Every file the run
/// leaves on disk is listed, including the manifest itself.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub timings: Vec<(String, f64)>,
    pub solver_iterations: usize,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(config_text: &str, seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        Self {
            config_hash: format!("{:x}", hasher.finalize()),
            seed,
            timings: Vec::new(),
            solver_iterations: 0,
            files: Vec::new(),
        }
    }

    pub fn add_timing(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.to_string(), seconds.max(0.0)));
    }

    pub fn add_file(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Writes `manifest.txt` into `dir` and returns its path.
    pub fn write(&mut self, dir: &Path) -> io::Result<PathBuf> {
        if !self.files.iter().any(|f| f == "manifest.txt") {
            self.files.push("manifest.txt".to_string());
        }
        let mut text = String::new();
        let _ = writeln!(text, "config_sha256 = {}", self.config_hash);
        let _ = writeln!(text, "seed = {}", self.seed);
        let _ = writeln!(text, "solver_iterations = {}", self.solver_iterations);
        for (stage, seconds) in &self.timings {
            let _ = writeln!(text, "seconds.{stage} = {}", fmt_f64(*seconds));
        }
        for file in &self.files {
            let _ = writeln!(text, "file = {file}");
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn write_csv(path: &Path, header: &str, rows: Vec<String>) -> io::Result<()> {
    let mut text = String::with_capacity(16 + rows.len() * 32);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)
}

/// `trajectory.csv`: one row per (time step, node) in node order, exterior
/// nodes included with their pinned zeros.
pub fn write_trajectory_csv(dir: &Path, traj: &Trajectory) -> io::Result<PathBuf> {
    let grid = traj.states[0].grid().clone();
    let mut rows = Vec::with_capacity(traj.states.len() * grid.node_count());
    for (step, state) in traj.states.iter().enumerate() {
        let t = step as f64 * traj.tau;
        for i in 0..grid.node_count() {
            rows.push(format!(
                "{step},{},{i},{},{},{},{}",
                fmt_f64(t),
                fmt_f64(grid.nodes[i][0]),
                fmt_f64(grid.nodes[i][1]),
                if grid.interior[i] { 1 } else { 0 },
                fmt_f64(state.get(i)),
            ));
        }
    }
    let path = dir.join("trajectory.csv");
    write_csv(&path, "step,time,node,x0,x1,interior,value", rows)?;
    Ok(path)
}

/// `cascade.csv`: typed rows for the three tables of a cascade report; fields
/// that do not apply to a row kind are left empty.
pub fn write_cascade_csv(dir: &Path, report: &CascadeReport) -> io::Result<PathBuf> {
    let mut rows = Vec::new();
    for d in &report.distances {
        rows.push(format!(
            "distance,{},{},,{},{},{}",
            fmt_f64(d.level_lo),
            fmt_f64(d.level_hi),
            fmt_f64(d.sup_l1),
            fmt_f64(d.bound),
            fmt_f64(d.slack),
        ));
    }
    for e in &report.energy_rows {
        rows.push(format!(
            "energy,{},,{},{},{},{}",
            fmt_f64(e.level),
            fmt_f64(e.k),
            fmt_f64(e.lhs),
            fmt_f64(e.rhs),
            fmt_f64(e.slack),
        ));
    }
    for s in &report.truncation_seminorms {
        rows.push(format!(
            "seminorm,{},,{},{},,",
            fmt_f64(s.level),
            fmt_f64(s.k),
            fmt_f64(s.seminorm),
        ));
    }
    let path = dir.join("cascade.csv");
    write_csv(&path, "kind,level_lo,level_hi,k,lhs,rhs,slack", rows)?;
    Ok(path)
}

/// `checks.csv`: one row per CheckReport, verdicts spelled pass/fail.
pub fn write_checks_csv(dir: &Path, reports: &[CheckReport]) -> io::Result<PathBuf> {
    let rows = reports
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.name,
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                fmt_f64(r.slack),
                if r.verdict { "pass" } else { "fail" },
                fmt_f64(r.tolerance),
            )
        })
        .collect();
    let path = dir.join("checks.csv");
    write_csv(&path, "name,lhs,rhs,slack,verdict,tolerance", rows)?;
    Ok(path)
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryReadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: trajectory does not live on the configured grid ({reason})")]
    GridMismatch { path: String, reason: String },
}

/// Reads a `trajectory.csv` back onto the given grid. Node count and
/// coordinates must match the grid; the time column must be uniform. The
/// reconstructed trajectory carries no solver diagnostics.
pub fn read_trajectory_csv(
    path: &Path,
    grid: &std::sync::Arc<crate::grid::Grid>,
) -> Result<Trajectory, TrajectoryReadError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| TrajectoryReadError::Io {
        path: name.clone(),
        source,
    })?;
    let malformed = |line: usize, reason: String| TrajectoryReadError::Malformed {
        path: name.clone(),
        line,
        reason,
    };
    let mismatch = |reason: String| TrajectoryReadError::GridMismatch {
        path: name.clone(),
        reason,
    };
    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(malformed(lineno + 1, format!("expected 7 columns, got {}", cols.len())));
        }
        let field = |idx: usize| -> Result<f64, TrajectoryReadError> {
            cols[idx]
                .parse()
                .map_err(|_| malformed(lineno + 1, format!("not a number: `{}`", cols[idx])))
        };
        let step = field(0)? as usize;
        let node = field(2)? as usize;
        if node >= grid.node_count() {
            return Err(mismatch(format!(
                "node {node} outside the {}-node grid",
                grid.node_count()
            )));
        }
        if (field(3)? - grid.nodes[node][0]).abs() > 1e-12
            || (field(4)? - grid.nodes[node][1]).abs() > 1e-12
        {
            return Err(mismatch(format!("node {node} coordinates disagree")));
        }
        if step == states.len() {
            states.push(vec![0.0; grid.node_count()]);
            times.push(field(1)?);
        } else if step > states.len() {
            return Err(malformed(lineno + 1, format!("step {step} out of order")));
        }
        states[step][node] = field(6)?;
    }
    if states.len() < 2 {
        return Err(mismatch("fewer than two time levels".to_string()));
    }
    let tau = times[1] - times[0];
    for (k, &t) in times.iter().enumerate() {
        if (t - k as f64 * tau).abs() > 1e-9 {
            return Err(mismatch("time column is not a uniform grid from 0".to_string()));
        }
    }
    let states = states
        .into_iter()
        .map(|v| Field::from_values(grid.clone(), v).expect("length checked"))
        .collect();
    Ok(Trajectory {
        states,
        tau,
        diagnostics: Vec::new(),
    })
}

/// One bench measurement at a given grid size.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub cells: usize,
    pub nodes: usize,
    pub pairs: usize,
    pub assembly_seconds: f64,
    pub apply_seconds: f64,
    pub pairs_per_second: f64,
    pub parallel_matches_serial: bool,
}

pub fn write_bench_csv(dir: &Path, rows: &[BenchRow]) -> io::Result<PathBuf> {
    let rows = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.cells,
                r.nodes,
                r.pairs,
                fmt_f64(r.assembly_seconds),
                fmt_f64(r.apply_seconds),
                fmt_f64(r.pairs_per_second),
                if r.parallel_matches_serial { "yes" } else { "no" },
            )
        })
        .collect();
    let path = dir.join("bench.csv");
    write_csv(
        &path,
        "cells,nodes,pairs,assembly_seconds,apply_seconds,pairs_per_second,parallel_matches_serial",
        rows,
    )?;
    Ok(path)
}

/// `kernel_stats.csv`: name-value rows describing one assembled kernel.
pub fn write_kernel_stats_csv(
    dir: &Path,
    stats: &[(String, String)],
) -> io::Result<PathBuf> {
    let rows = stats
        .iter()
        .map(|(name, value)| format!("{name},{value}"))
        .collect();
    let path = dir.join("kernel_stats.csv");
    write_csv(&path, "name,value", rows)?;
    Ok(path)
}
