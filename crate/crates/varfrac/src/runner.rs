//! Experiment orchestration behind the CLI subcommands.
//!
//! Each entry point takes a parsed configuration plus the raw config text
//! (hashed into the manifest), writes its CSV artifacts into the output
//! directory, and returns the manifest. Check runs additionally report
//! whether every verdict passed so the binary can set its exit status.

use crate::cascade::{truncation_cascade, CascadeError};
use crate::checks::{
    self, CheckError, CheckReport, TailSet, TestFunction,
};
use crate::config::{CheckKind, ExperimentConfig};
use crate::field::{Field, FieldError, PlateauFn, TruncationLevel};
use crate::grid::{build_grid, Grid, GridError};
use crate::kernel::{assemble_kernel, KernelError, KernelTable};
use crate::ops;
use crate::profiles::ProfileError;
use crate::report::{
    self, BenchRow, RunManifest,
};
use crate::solver::{
    solve_parabolic, ParabolicProblem, SolverError, SolverOptions, Source, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Ops(#[from] ops::OpsError),
    #[error(transparent)]
    TrajectoryRead(#[from] report::TrajectoryReadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cascade run needs a nonempty cascade.levels list")]
    MissingCascadeLevels,
    #[error("check run with an empty checks.select list")]
    EmptyCheckSelection,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

struct Setup {
    grid: Arc<Grid>,
    kernel: Arc<KernelTable>,
    initial: Field,
    source: Source,
    options: SolverOptions,
}

fn setup(config: &ExperimentConfig) -> Result<Setup, RunError> {
    let grid = Arc::new(build_grid(&config.grid)?);
    let kernel = Arc::new(assemble_kernel(
        grid.clone(),
        &config.order.order_field(),
        config.p,
    )?);
    let initial = config.initial.field(&grid, config.seed)?;
    let source_field = config.source.field(&grid, config.seed.wrapping_add(1))?;
    let source = if source_field.sup_norm() == 0.0 {
        Source::Zero
    } else {
        Source::Steady(source_field)
    };
    Ok(Setup {
        grid,
        kernel,
        initial,
        source,
        options: SolverOptions {
            tolerance: config.solver_tolerance,
            max_iters: config.solver_max_iters,
        },
    })
}

fn problem(s: &Setup, steps: usize) -> ParabolicProblem {
    ParabolicProblem {
        kernel: s.kernel.clone(),
        initial: s.initial.clone(),
        source: s.source.clone(),
        steps,
        options: s.options,
    }
}

/// Solves the configured problem and writes `trajectory.csv`. A solver abort
/// still writes the partial trajectory before the error propagates.
pub fn run_solve(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
) -> Result<RunManifest, RunError> {
    let mut manifest = RunManifest::new(config_text, config.seed);
    let s = setup(config)?;
    let (result, seconds) = timed(|| solve_parabolic(&problem(&s, config.steps)));
    manifest.add_timing("solve", seconds);
    let traj = match result {
        Ok(traj) => traj,
        Err(SolverError::Aborted {
            step,
            partial,
            cause,
        }) => {
            manifest.solver_iterations = partial.total_iterations();
            report::write_trajectory_csv(out, &partial)?;
            manifest.add_file("trajectory.csv");
            manifest.write(out)?;
            return Err(SolverError::Aborted {
                step,
                partial,
                cause,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    manifest.solver_iterations = traj.total_iterations();
    report::write_trajectory_csv(out, &traj)?;
    manifest.add_file("trajectory.csv");
    manifest.write(out)?;
    Ok(manifest)
}

/// Runs the truncation cascade over the configured levels and writes
/// `cascade.csv`.
pub fn run_cascade(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
) -> Result<RunManifest, RunError> {
    if config.cascade_levels.is_empty() {
        return Err(RunError::MissingCascadeLevels);
    }
    let mut manifest = RunManifest::new(config_text, config.seed);
    let s = setup(config)?;
    let (result, seconds) = timed(|| {
        truncation_cascade(
            &problem(&s, config.steps),
            &config.cascade_levels,
            &config.cascade_energy_k,
        )
    });
    manifest.add_timing("cascade", seconds);
    let cascade = result?;
    manifest.solver_iterations = cascade
        .trajectories
        .iter()
        .map(|t| t.total_iterations())
        .sum();
    report::write_cascade_csv(out, &cascade)?;
    manifest.add_file("cascade.csv");
    manifest.write(out)?;
    Ok(manifest)
}

/// Builds the ordered companion problem for the two-run checks: the same
/// data plus a nonnegative bump of the configured size on both the initial
/// state and the source.
fn enlarged(s: &Setup, config: &ExperimentConfig) -> Result<(Field, Source), RunError> {
    let grid = &s.grid;
    let dim = grid.dimension();
    let mid = [
        0.5 * (grid.spec.box_lo[0] + grid.spec.box_hi[0]),
        0.5 * (grid.spec.box_lo[1] + grid.spec.box_hi[1]),
    ];
    let width = 0.25 * (grid.spec.box_hi[0] - grid.spec.box_lo[0]);
    let eps = config.perturbation;
    let bump = Field::from_fn(grid.clone(), |x| {
        let r2: f64 = (0..dim).map(|d| (x[d] - mid[d]).powi(2)).sum();
        eps * (-r2 / (width * width)).exp()
    });
    let initial = s.initial.zip(&bump, |a, b| a + b)?;
    let base = s.source.at(grid, grid.spec.time_horizon);
    let source = Source::Steady(base.zip(&bump, |a, b| a + b)?);
    Ok((initial, source))
}

fn trajectory_sup(traj: &Trajectory) -> f64 {
    traj.states.iter().fold(0.0f64, |m, s| m.max(s.sup_norm()))
}

/// Runs the selected property checks and writes `checks.csv`. The boolean is
/// true iff every verdict passed.
pub fn run_checks(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
) -> Result<(RunManifest, bool), RunError> {
    if config.checks.is_empty() {
        return Err(RunError::EmptyCheckSelection);
    }
    let mut manifest = RunManifest::new(config_text, config.seed);
    let s = setup(config)?;
    let grid = &s.grid;

    let traj = match &config.traj_u {
        Some(path) => report::read_trajectory_csv(Path::new(path), grid)?,
        None => {
            let (traj, seconds) = timed(|| solve_parabolic(&problem(&s, config.steps)));
            manifest.add_timing("solve", seconds);
            traj?
        }
    };

    let needs_pair = config
        .checks
        .iter()
        .any(|c| matches!(c, CheckKind::Contraction | CheckKind::Comparison));
    let pair = if needs_pair {
        let (initial_v, source_v) = enlarged(&s, config)?;
        let traj_v = match &config.traj_v {
            Some(path) => report::read_trajectory_csv(Path::new(path), grid)?,
            None => {
                let prob_v = ParabolicProblem {
                    kernel: s.kernel.clone(),
                    initial: initial_v.clone(),
                    source: source_v.clone(),
                    steps: config.steps,
                    options: s.options,
                };
                let (traj_v, seconds) = timed(|| solve_parabolic(&prob_v));
                manifest.add_timing("solve_companion", seconds);
                traj_v?
            }
        };
        Some((traj_v, initial_v, source_v))
    } else {
        None
    };

    let mid = [
        0.5 * (grid.spec.box_lo[0] + grid.spec.box_hi[0]),
        0.5 * (grid.spec.box_lo[1] + grid.spec.box_hi[1]),
    ];
    let radius = 0.3 * (grid.spec.box_hi[0] - grid.spec.box_lo[0]);
    let phi = TestFunction::bump(grid, mid, radius, config.phi_amplitude)?;

    let mut reports: Vec<CheckReport> = Vec::new();
    let (check_results, seconds) = timed(|| -> Result<Vec<CheckReport>, RunError> {
        let mut reports = Vec::new();
        for kind in &config.checks {
            match kind {
                CheckKind::Contraction => {
                    let (traj_v, initial_v, source_v) = pair.as_ref().expect("pair solved");
                    reports.push(checks::check_l1_contraction(
                        &traj, traj_v, &s.initial, &s.source, initial_v, source_v,
                    )?);
                }
                CheckKind::Comparison => {
                    let (traj_v, _, _) = pair.as_ref().expect("pair solved");
                    reports.push(checks::check_comparison(&traj, traj_v)?);
                }
                CheckKind::Energy => {
                    for &k in &config.cascade_energy_k {
                        let k = TruncationLevel::new(k)
                            .map_err(CheckError::from)?;
                        let mut rep = checks::check_energy_estimate(
                            &s.kernel, &traj, &s.initial, &s.source, k,
                        )?;
                        rep.name = format!("energy_k{}", k.level());
                        reports.push(rep);
                    }
                }
                CheckKind::Tail => {
                    let levels = [1.0, 2.0, 4.0, 8.0];
                    let mut prev: Option<f64> = None;
                    for &h in &levels {
                        let tail = checks::renormalization_tail(
                            &s.kernel,
                            &traj,
                            TailSet::new(h).map_err(CheckError::from)?,
                        )?;
                        // Row verifies the nonincreasing table; the first
                        // level is compared against itself.
                        let against = prev.unwrap_or(tail);
                        reports.push(CheckReport::new(
                            &format!("tail_h{h}"),
                            tail,
                            against,
                            1e-12,
                        ));
                        prev = Some(tail);
                    }
                }
                CheckKind::Renormalized => {
                    let h = PlateauFn::new(trajectory_sup(&traj) + 1.0)
                        .map_err(CheckError::from)?;
                    let coarse = checks::renormalized_residual(
                        &s.kernel, &traj, &s.source, h, &phi,
                    )?;
                    let fine_traj = solve_parabolic(&problem(&s, 2 * config.steps))?;
                    let fine = checks::renormalized_residual(
                        &s.kernel, &fine_traj, &s.source, h, &phi,
                    )?;
                    let tol = 1e-8 + 10.0 * fine_traj.accumulated_residual();
                    reports.push(CheckReport::new("renormalized_refines", fine, coarse, tol));
                }
                CheckKind::Entropy => {
                    for &k in &config.entropy_k {
                        let k = TruncationLevel::new(k).map_err(CheckError::from)?;
                        let mut rep = checks::entropy_residual(
                            &s.kernel, &traj, &s.source, &phi, k,
                        )?;
                        rep.name = format!("entropy_k{}", k.level());
                        reports.push(rep);
                    }
                }
                CheckKind::Poincare => {
                    let bound = checks::poincare_bound(&s.kernel);
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    let mut worst = 0.0f64;
                    for _ in 0..50 {
                        let u = Field::from_fn(grid.clone(), |_| rng.gen_range(-1.0..1.0));
                        worst = worst.max(checks::poincare_ratio(&s.kernel, &u)?);
                    }
                    reports.push(CheckReport::new("poincare", worst, bound, 1e-12));
                }
            }
        }
        Ok(reports)
    });
    manifest.add_timing("checks", seconds);
    reports.extend(check_results?);

    manifest.solver_iterations = traj.total_iterations()
        + pair
            .as_ref()
            .map(|(t, _, _)| t.total_iterations())
            .unwrap_or(0);
    report::write_checks_csv(out, &reports)?;
    manifest.add_file("checks.csv");
    manifest.write(out)?;
    let all_pass = reports.iter().all(|r| r.verdict);
    Ok((manifest, all_pass))
}

/// Assembles the configured kernel and writes `kernel_stats.csv`.
pub fn run_kernel_stats(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
) -> Result<RunManifest, RunError> {
    let mut manifest = RunManifest::new(config_text, config.seed);
    let grid = Arc::new(build_grid(&config.grid)?);
    let (kernel, seconds) = timed(|| {
        assemble_kernel(grid.clone(), &config.order.order_field(), config.p)
    });
    manifest.add_timing("assembly", seconds);
    let kernel = kernel?;

    let masses: Vec<f64> = grid
        .interior_nodes
        .iter()
        .map(|&i| kernel.exterior_mass(i).expect("interior node"))
        .collect();
    let min_mass = masses.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_mass = masses.iter().sum::<f64>() / masses.len().max(1) as f64;
    let min_w = kernel.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max_w = kernel.weights.iter().copied().fold(0.0f64, f64::max);
    let f = report::fmt_f64;
    let mut stats = vec![
        ("nodes".to_string(), grid.node_count().to_string()),
        ("interior_nodes".to_string(), grid.interior_nodes.len().to_string()),
        ("pairs".to_string(), grid.pairs.len().to_string()),
        ("p".to_string(), f(kernel.p)),
        ("order_min".to_string(), f(kernel.s_minus)),
        ("order_max".to_string(), f(kernel.s_plus)),
        ("weight_min".to_string(), f(min_w)),
        ("weight_max".to_string(), f(max_w)),
        ("exterior_mass_min".to_string(), f(min_mass)),
        ("exterior_mass_mean".to_string(), f(mean_mass)),
        ("exterior_mass_lower_bound".to_string(), f(kernel.exterior_mass_lower_bound())),
    ];
    for warning in &kernel.warnings {
        stats.push(("warning".to_string(), warning.replace(',', ";")));
    }
    report::write_kernel_stats_csv(out, &stats)?;
    manifest.add_file("kernel_stats.csv");
    manifest.write(out)?;
    Ok(manifest)
}

/// Times kernel assembly and 100 operator applications at each configured
/// grid size, and cross-checks the parallel apply against the serial one.
pub fn run_bench(
    config: &ExperimentConfig,
    config_text: &str,
    out: &Path,
) -> Result<RunManifest, RunError> {
    let mut manifest = RunManifest::new(config_text, config.seed);
    let mut rows = Vec::new();
    for &cells in &config.bench_sizes {
        let mut spec = config.grid.clone();
        spec.cells_per_axis = cells;
        let grid = Arc::new(build_grid(&spec)?);
        let order = config.order.order_field();
        let (kernel, assembly_seconds) = timed(|| assemble_kernel(grid.clone(), &order, config.p));
        let kernel = kernel?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let u = Field::from_fn(grid.clone(), |_| rng.gen_range(-1.0..1.0));
        let (last, apply_seconds) = timed(|| {
            let mut out = None;
            for _ in 0..100 {
                out = Some(ops::apply_operator(&kernel, &u));
            }
            out.expect("100 applications")
        });
        let parallel = last?;
        let serial = ops::apply_operator_serial(&kernel, &u)?;
        let matches = (0..grid.node_count())
            .all(|i| parallel.get(i).to_bits() == serial.get(i).to_bits());
        let per_apply = apply_seconds / 100.0;
        rows.push(BenchRow {
            cells,
            nodes: grid.node_count(),
            pairs: grid.pairs.len(),
            assembly_seconds,
            apply_seconds: per_apply,
            pairs_per_second: grid.pairs.len() as f64 / per_apply.max(1e-12),
            parallel_matches_serial: matches,
        });
        manifest.add_timing(&format!("assembly_m{cells}"), assembly_seconds);
        manifest.add_timing(&format!("apply_m{cells}"), per_apply);
    }
    report::write_bench_csv(out, &rows)?;
    manifest.add_file("bench.csv");
    manifest.write(out)?;
    Ok(manifest)
}
