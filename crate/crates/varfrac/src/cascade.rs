//! Truncated-data approximation cascade for integrable data.
//!
//! For each level n the data are replaced by their truncations T_n(f), T_n(u0)
//! and the problem is re-solved. The report records the contraction bound
//! between consecutive levels, the truncation-energy bound per level, and the
//! seminorm distance of truncated final states to the finest level.

use crate::field::TruncationLevel;
use crate::ops;
use crate::solver::{solve_parabolic, ParabolicProblem, Source, SolverError, Trajectory};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("cascade requires nonnegative data; {what} has minimum {min}")]
    NegativeData { what: &'static str, min: f64 },
    #[error("cascade levels must be positive and strictly increasing")]
    BadLevels,
    #[error("truncation levels for the energy bound must be nonnegative")]
    BadEnergyLevels,
    #[error("level {level} failed: {source}")]
    Level {
        level: f64,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Ops(#[from] ops::OpsError),
}

/// Sup-over-time L1 distance between two consecutive levels against the
/// data-contraction bound `||T_n(u0)-T_m(u0)||_1 + integral ||T_n(f)-T_m(f)||_1`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceRow {
    pub level_lo: f64,
    pub level_hi: f64,
    pub sup_l1: f64,
    pub bound: f64,
    /// `bound - sup_l1` plus the solver-residual allowance already applied.
    pub slack: f64,
}

/// Truncation-energy bound at one (level, k):
/// `1/2 sum_steps tau * gagliardo_p(T_k(u)) <= k (||f||_L1 + ||u0||_L1)`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRow {
    pub level: f64,
    pub k: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Seminorm distance of the truncated final state to the finest level.
#[derive(Debug, Clone, Copy)]
pub struct SeminormRow {
    pub level: f64,
    pub k: f64,
    pub seminorm: f64,
}

#[derive(Debug)]
pub struct CascadeReport {
    pub levels: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub distances: Vec<DistanceRow>,
    pub energy_rows: Vec<EnergyRow>,
    pub truncation_seminorms: Vec<SeminormRow>,
}

fn truncated_source(source: &Source, n: TruncationLevel) -> Source {
    match source {
        Source::Zero => Source::Zero,
        Source::Steady(f) => Source::Steady(f.truncated(n)),
        Source::Varying(f) => {
            let f = f.clone();
            Source::Varying(Arc::new(move |t| f(t).truncated(n)))
        }
    }
}

/// Time integral of the L1 norm of the source, sampled at the same right
/// endpoints the implicit scheme uses.
fn source_l1(source: &Source, grid: &Arc<crate::grid::Grid>, steps: usize, tau: f64) -> f64 {
    (1..=steps)
        .map(|k| tau * source.at(grid, k as f64 * tau).l1_norm())
        .sum()
}

pub fn truncation_cascade(
    prob: &ParabolicProblem,
    levels: &[f64],
    energy_ks: &[f64],
) -> Result<CascadeReport, CascadeError> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] <= 0.0 {
        return Err(CascadeError::BadLevels);
    }
    if energy_ks.iter().any(|&k| k < 0.0) {
        return Err(CascadeError::BadEnergyLevels);
    }
    let grid = prob.kernel.grid.clone();
    let tau = grid.spec.time_horizon / prob.steps as f64;

    let min0 = prob.initial.min_value();
    if min0 < 0.0 {
        return Err(CascadeError::NegativeData {
            what: "initial state",
            min: min0,
        });
    }
    for k in 1..=prob.steps {
        let slice = prob.source.at(&grid, k as f64 * tau);
        let m = slice.min_value();
        if m < 0.0 {
            return Err(CascadeError::NegativeData {
                what: "source",
                min: m,
            });
        }
    }

    let truncations: Vec<TruncationLevel> = levels
        .iter()
        .map(|&n| TruncationLevel::new(n).expect("levels checked positive"))
        .collect();

    let results: Vec<Result<Trajectory, CascadeError>> = truncations
        .par_iter()
        .map(|&n| {
            let sub = ParabolicProblem {
                kernel: prob.kernel.clone(),
                initial: prob.initial.truncated(n),
                source: truncated_source(&prob.source, n),
                steps: prob.steps,
                options: prob.options,
            };
            solve_parabolic(&sub).map_err(|e| CascadeError::Level {
                level: n.level(),
                source: e,
            })
        })
        .collect();
    let mut trajectories = Vec::with_capacity(results.len());
    for r in results {
        trajectories.push(r?);
    }

    let mut distances = Vec::new();
    for w in 0..levels.len().saturating_sub(1) {
        let (na, nb) = (truncations[w], truncations[w + 1]);
        let (ta, tb) = (&trajectories[w], &trajectories[w + 1]);
        let sup_l1 = ta.sup_l1_distance(tb)?;
        let d0 = prob
            .initial
            .truncated(na)
            .zip(&prob.initial.truncated(nb), |a, b| a - b)
            .expect("same grid")
            .l1_norm();
        let df: f64 = (1..=prob.steps)
            .map(|k| {
                let f = prob.source.at(&grid, k as f64 * tau);
                tau * f
                    .truncated(na)
                    .zip(&f.truncated(nb), |a, b| a - b)
                    .expect("same grid")
                    .l1_norm()
            })
            .sum();
        let allowance =
            1e-8 + 10.0 * (ta.accumulated_residual() + tb.accumulated_residual());
        let bound = d0 + df + allowance;
        distances.push(DistanceRow {
            level_lo: levels[w],
            level_hi: levels[w + 1],
            sup_l1,
            bound,
            slack: bound - sup_l1,
        });
    }

    let mut energy_rows = Vec::new();
    for (idx, &n) in truncations.iter().enumerate() {
        let traj = &trajectories[idx];
        let sub_source = truncated_source(&prob.source, n);
        let data_mass =
            source_l1(&sub_source, &grid, prob.steps, tau) + prob.initial.truncated(n).l1_norm();
        for &k in energy_ks {
            let kk = TruncationLevel::new(k).expect("checked nonnegative");
            let lhs: f64 = traj.states[1..]
                .iter()
                .map(|s| {
                    0.5 * tau
                        * ops::gagliardo_p(&prob.kernel, &s.truncated(kk)).expect("same grid")
                })
                .sum();
            let allowance = 1e-8 + 10.0 * traj.accumulated_residual();
            let rhs = k * data_mass + allowance;
            energy_rows.push(EnergyRow {
                level: n.level(),
                k,
                lhs,
                rhs,
                slack: rhs - lhs,
            });
        }
    }

    let finest = trajectories
        .last()
        .expect("at least one level")
        .states
        .last()
        .expect("at least one state")
        .clone();
    let mut truncation_seminorms = Vec::new();
    for (idx, &n) in truncations.iter().enumerate() {
        let own = trajectories[idx].states.last().expect("at least one state");
        for &k in energy_ks {
            let kk = TruncationLevel::new(k).expect("checked nonnegative");
            let diff = own
                .truncated(kk)
                .zip(&finest.truncated(kk), |a, b| a - b)
                .expect("same grid");
            truncation_seminorms.push(SeminormRow {
                level: n.level(),
                k,
                seminorm: ops::gagliardo_p(&prob.kernel, &diff)?,
            });
        }
    }

    Ok(CascadeReport {
        levels: levels.to_vec(),
        trajectories,
        distances,
        energy_rows,
        truncation_seminorms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::grid::{build_grid, GridSpec};
    use crate::kernel::{assemble_kernel, KernelTable, VarOrderField};
    use crate::solver::SolverOptions;

    fn setup(p: f64) -> (Arc<crate::grid::Grid>, Arc<KernelTable>) {
        let spec = GridSpec {
            dimension: 1,
            box_lo: [0.0, 0.0],
            box_hi: [1.0, 0.0],
            cells_per_axis: 10,
            collar_radius: 0.3,
            time_horizon: 0.4,
        };
        let grid = Arc::new(build_grid(&spec).unwrap());
        let kernel =
            Arc::new(assemble_kernel(grid.clone(), &VarOrderField::constant(0.4), p).unwrap());
        (grid, kernel)
    }

    /// Integrable but unbounded datum, the regime the cascade exists for.
    fn singular_field(grid: &Arc<crate::grid::Grid>) -> Field {
        let x0 = 0.55;
        let w = grid.cell_width[0];
        Field::from_fn(grid.clone(), |x| {
            (x[0] - x0).abs().max(0.5 * w).powf(-0.5)
        })
    }

    #[test]
    fn truncation_below_levels_is_identity() {
        let (grid, kernel) = setup(2.0);
        let prob = ParabolicProblem {
            kernel,
            initial: Field::from_fn(grid.clone(), |x| x[0]),
            source: Source::Steady(Field::from_fn(grid.clone(), |_| 0.5)),
            steps: 3,
            options: SolverOptions::default(),
        };
        // All data bounded by 1 < every level: trajectories bit-identical.
        let report = truncation_cascade(&prob, &[2.0, 4.0, 8.0], &[1.0]).unwrap();
        for traj in &report.trajectories[1..] {
            for (a, b) in traj.states.iter().zip(&report.trajectories[0].states) {
                assert_eq!(a.values(), b.values());
            }
        }
        for row in &report.distances {
            assert!(row.sup_l1 == 0.0);
        }
    }

    #[test]
    fn singular_datum_distances_obey_contraction_bound() {
        for p in [1.5, 2.0, 3.0] {
            let (grid, kernel) = setup(p);
            let prob = ParabolicProblem {
                kernel,
                initial: singular_field(&grid),
                source: Source::Steady(singular_field(&grid)),
                steps: 4,
                options: SolverOptions::default(),
            };
            let report = truncation_cascade(&prob, &[1.0, 2.0, 4.0, 8.0], &[1.0, 2.0]).unwrap();
            for row in &report.distances {
                assert!(
                    row.slack >= 0.0,
                    "p = {p}, levels ({}, {}): sup {} vs bound {}",
                    row.level_lo,
                    row.level_hi,
                    row.sup_l1,
                    row.bound
                );
                assert!(row.sup_l1 > 0.0, "truncation should bite at p = {p}");
            }
        }
    }

    #[test]
    fn truncation_energy_bound_holds() {
        for p in [1.5, 2.0, 3.0] {
            let (grid, kernel) = setup(p);
            let prob = ParabolicProblem {
                kernel,
                initial: singular_field(&grid),
                source: Source::Steady(singular_field(&grid)),
                steps: 4,
                options: SolverOptions::default(),
            };
            let report = truncation_cascade(&prob, &[2.0, 6.0], &[1.0, 2.0, 4.0]).unwrap();
            for row in &report.energy_rows {
                assert!(
                    row.slack >= 0.0,
                    "p = {p}, level {}, k {}: lhs {} vs rhs {}",
                    row.level,
                    row.k,
                    row.lhs,
                    row.rhs
                );
            }
        }
    }

    #[test]
    fn seminorm_table_shrinks_toward_finest_level() {
        let (grid, kernel) = setup(2.0);
        let prob = ParabolicProblem {
            kernel,
            initial: singular_field(&grid),
            source: Source::Steady(singular_field(&grid)),
            steps: 4,
            options: SolverOptions::default(),
        };
        let report = truncation_cascade(&prob, &[1.0, 2.0, 4.0, 8.0], &[1.0]).unwrap();
        let col: Vec<f64> = report
            .truncation_seminorms
            .iter()
            .filter(|r| r.k == 1.0)
            .map(|r| r.seminorm)
            .collect();
        assert_eq!(col.len(), 4);
        for w in col.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "table not decreasing: {col:?}");
        }
        assert_eq!(*col.last().unwrap(), 0.0);
    }

    #[test]
    fn rejects_negative_data_and_bad_levels() {
        let (grid, kernel) = setup(2.0);
        let neg = ParabolicProblem {
            kernel: kernel.clone(),
            initial: Field::from_fn(grid.clone(), |x| x[0] - 0.5),
            source: Source::Zero,
            steps: 2,
            options: SolverOptions::default(),
        };
        assert!(matches!(
            truncation_cascade(&neg, &[1.0, 2.0], &[1.0]),
            Err(CascadeError::NegativeData { .. })
        ));
        let ok = ParabolicProblem {
            kernel,
            initial: Field::zeros(grid.clone()),
            source: Source::Zero,
            steps: 2,
            options: SolverOptions::default(),
        };
        assert!(matches!(
            truncation_cascade(&ok, &[2.0, 1.0], &[1.0]),
            Err(CascadeError::BadLevels)
        ));
        assert!(matches!(
            truncation_cascade(&ok, &[], &[1.0]),
            Err(CascadeError::BadLevels)
        ));
    }
}
