//! Executable verdicts for the structural inequalities of the model:
//! L1 contraction, comparison, truncation energy estimates, the vanishing
//! renormalization tail, renormalized and entropy residuals, and the
//! fractional Poincare bound.
//!
//! Time integrals use right-endpoint rectangles on the implicit-Euler grid,
//! matching the points where the scheme itself enforces the equation, so the
//! reported slacks isolate model error from quadrature mismatch. Inequality
//! verdicts allow an absolute slack of 1e-8 plus ten times the accumulated
//! solver residuals of the trajectories involved.

use crate::field::{plateau, theta, truncate, Field, PlateauFn, TruncationLevel};
use crate::grid::Grid;
use crate::kernel::KernelTable;
use crate::ops::{self, OpsError};
use crate::solver::{Source, Trajectory};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error("trajectories disagree in step count or time step")]
    ShapeMismatch,
    #[error("test function ball (center {center:?}, radius {radius}) is not strictly inside the domain")]
    Support { center: [f64; 2], radius: f64 },
    #[error("test function radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("tail level must be nonnegative, got {0}")]
    BadTailLevel(f64),
    #[error("field is identically zero")]
    ZeroField,
}

/// One evaluated inequality `lhs <= rhs`, passing when the slack `rhs - lhs`
/// is no worse than `-tolerance`.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub verdict: bool,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            verdict: slack >= -tolerance,
            tolerance,
        }
    }
}

/// Slack budget for inequality checks over the given trajectories.
fn tolerance_for(trajs: &[&Trajectory]) -> f64 {
    1e-8 + 10.0 * trajs.iter().map(|t| t.accumulated_residual()).sum::<f64>()
}

/// The pair region `D_h` where at least one value has escaped past `h + 1`
/// while the other is still below `h`, or the two values straddle zero.
#[derive(Debug, Clone, Copy)]
pub struct TailSet {
    h: f64,
}

impl TailSet {
    pub fn new(h: f64) -> Result<Self, CheckError> {
        if h >= 0.0 {
            Ok(Self { h })
        } else {
            Err(CheckError::BadTailLevel(h))
        }
    }

    pub fn level(&self) -> f64 {
        self.h
    }

    /// `(a, b) in D_h` iff `min(|a|,|b|) <= h` and `max(|a|,|b|) >= h+1`,
    /// or `ab < 0`.
    pub fn contains(&self, a: f64, b: f64) -> bool {
        let (lo, hi) = if a.abs() <= b.abs() {
            (a.abs(), b.abs())
        } else {
            (b.abs(), a.abs())
        };
        (lo <= self.h && hi >= self.h + 1.0) || a * b < 0.0
    }
}

/// Space-time test function: polynomial bump `amplitude * (1 - rho^2)_+^2`
/// around `center` with the given radius, times the linear-in-time factor
/// `1 - t/T`. Vanishes outside the bump ball and at the final time; the ball
/// must sit strictly inside the domain box.
#[derive(Debug, Clone)]
pub struct TestFunction {
    center: [f64; 2],
    radius: f64,
    amplitude: f64,
}

impl TestFunction {
    pub fn bump(
        grid: &Grid,
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
    ) -> Result<Self, CheckError> {
        if !(radius > 0.0) {
            return Err(CheckError::BadRadius(radius));
        }
        for axis in 0..grid.dimension() {
            let inside = center[axis] - radius > grid.spec.box_lo[axis]
                && center[axis] + radius < grid.spec.box_hi[axis];
            if !inside {
                return Err(CheckError::Support { center, radius });
            }
        }
        Ok(Self {
            center,
            radius,
            amplitude,
        })
    }

    fn spatial(&self, x: &[f64; 2], dimension: usize) -> f64 {
        let mut rho2 = 0.0;
        for axis in 0..dimension {
            let d = (x[axis] - self.center[axis]) / self.radius;
            rho2 += d * d;
        }
        let cut = (1.0 - rho2).max(0.0);
        self.amplitude * cut * cut
    }

    /// Node values at time `t`, on the grid's time horizon.
    pub fn at_time(&self, grid: &Arc<Grid>, t: f64) -> Field {
        let horizon = grid.spec.time_horizon;
        let dim = grid.dimension();
        Field::from_fn(grid.clone(), |x| self.spatial(x, dim) * (1.0 - t / horizon))
    }

    /// Node values of the (time-constant) time derivative `-spatial/T`.
    pub fn time_derivative(&self, grid: &Arc<Grid>) -> Field {
        let horizon = grid.spec.time_horizon;
        let dim = grid.dimension();
        Field::from_fn(grid.clone(), |x| -self.spatial(x, dim) / horizon)
    }
}

fn require_same_shape(a: &Trajectory, b: &Trajectory) -> Result<(), CheckError> {
    if a.states.len() == b.states.len() && a.tau == b.tau {
        Ok(())
    } else {
        Err(CheckError::ShapeMismatch)
    }
}

/// `sup_k ||u^k - v^k||_L1 <= ||u0 - v0||_L1 + sum_k tau ||f^k - g^k||_L1`.
pub fn check_l1_contraction(
    traj_u: &Trajectory,
    traj_v: &Trajectory,
    initial_u: &Field,
    source_u: &Source,
    initial_v: &Field,
    source_v: &Source,
) -> Result<CheckReport, CheckError> {
    require_same_shape(traj_u, traj_v)?;
    let lhs = traj_u.sup_l1_distance(traj_v)?;
    let grid = traj_u.states[0].grid().clone();
    let mut rhs = initial_u.zip(initial_v, |a, b| a - b)?.l1_norm();
    for k in 1..=traj_u.steps() {
        let t = k as f64 * traj_u.tau;
        let df = source_u.at(&grid, t).zip(&source_v.at(&grid, t), |a, b| a - b)?;
        rhs += traj_u.tau * df.l1_norm();
    }
    let tol = tolerance_for(&[traj_u, traj_v]);
    Ok(CheckReport::new("l1_contraction", lhs, rhs, tol))
}

/// Ordered data give ordered solutions: `max_{k,i} (u^k_i - v^k_i) <= 0`.
/// The caller asserts the data ordering `u0 <= v0`, `f <= g`.
pub fn check_comparison(traj_u: &Trajectory, traj_v: &Trajectory) -> Result<CheckReport, CheckError> {
    require_same_shape(traj_u, traj_v)?;
    let mut worst = f64::NEG_INFINITY;
    let interior = &traj_u.states[0].grid().interior_nodes;
    for (a, b) in traj_u.states.iter().zip(&traj_v.states) {
        let diff = a.zip(b, |x, y| x - y)?;
        for &i in interior {
            worst = worst.max(diff.get(i));
        }
    }
    let tol = tolerance_for(&[traj_u, traj_v]);
    Ok(CheckReport::new("comparison", worst, 0.0, tol))
}

/// Truncation energy estimate: half the time-summed seminorm power of the
/// truncated states is controlled by `k` times the L1 mass of the data.
pub fn check_energy_estimate(
    kernel: &KernelTable,
    traj: &Trajectory,
    initial: &Field,
    source: &Source,
    k: TruncationLevel,
) -> Result<CheckReport, CheckError> {
    let grid = kernel.grid.clone();
    let mut lhs = 0.0;
    for state in traj.states.iter().skip(1) {
        lhs += 0.5 * traj.tau * ops::gagliardo_p(kernel, &state.truncated(k))?;
    }
    let mut mass = initial.l1_norm();
    for step in 1..=traj.steps() {
        let t = step as f64 * traj.tau;
        mass += traj.tau * source.at(&grid, t).l1_norm();
    }
    let rhs = k.level() * mass;
    let tol = tolerance_for(&[traj]);
    Ok(CheckReport::new("energy_estimate", lhs, rhs, tol))
}

/// Time-summed kernel mass of the jumps landing in `D_h`, the quantity whose
/// vanishing as `h` grows characterizes renormalized solutions:
/// `sum_k tau [ sum_{pairs in D_h} 2 sigma |u_i - u_j|^(p-1)
///            + sum_{|u_i| >= h+1} 2 w tail_i |u_i|^(p-1) ]`.
/// The far-field term is the pair rule applied against the zero extension.
pub fn renormalization_tail(
    kernel: &KernelTable,
    traj: &Trajectory,
    set: TailSet,
) -> Result<f64, CheckError> {
    let grid = &kernel.grid;
    let q = kernel.p - 1.0;
    let w = grid.cell_volume;
    let mut total = 0.0;
    for state in traj.states.iter().skip(1) {
        if !grid.same_layout(state.grid()) {
            return Err(CheckError::Ops(OpsError::GridMismatch));
        }
        let v = state.values();
        let mut slab = 0.0;
        for (idx, &(i, j)) in grid.pairs.iter().enumerate() {
            let (a, b) = (v[i as usize], v[j as usize]);
            if set.contains(a, b) {
                slab += 2.0 * kernel.weights[idx] * (a - b).abs().powf(q);
            }
        }
        for &i in &grid.interior_nodes {
            if set.contains(v[i], 0.0) {
                slab += 2.0 * w * kernel.tail[i] * v[i].abs().powf(q);
            }
        }
        total += traj.tau * slab;
    }
    Ok(total)
}

/// Signed defect of the identity tested through a bounded reshaping `H`
/// (given as `r -> (H(r), H'(r))`):
/// `-sum_k tau <H(u^k), phi_t> - <H(u0), phi(0)>
///  + sum_k tau pairing(u^k, H'(u^k) phi^k) - sum_k tau <f^k, H'(u^k) phi^k>`.
pub fn renormalized_gap_with<H: Fn(f64) -> (f64, f64)>(
    kernel: &KernelTable,
    traj: &Trajectory,
    source: &Source,
    reshape: H,
    phi: &TestFunction,
) -> Result<f64, CheckError> {
    let grid = kernel.grid.clone();
    let phi_t = phi.time_derivative(&grid);
    let mut gap = -ops::dot_w(&traj.states[0].map(|r| reshape(r).0), &phi.at_time(&grid, 0.0));
    for k in 1..=traj.steps() {
        let t = k as f64 * traj.tau;
        let u = &traj.states[k];
        let phi_k = phi.at_time(&grid, t);
        let test = u.zip(&phi_k, |ui, pi| reshape(ui).1 * pi)?;
        gap -= traj.tau * ops::dot_w(&u.map(|r| reshape(r).0), &phi_t);
        gap += traj.tau * ops::pairing(kernel, u, &test)?;
        gap -= traj.tau * ops::dot_w(&source.at(&grid, t), &test);
    }
    Ok(gap)
}

/// Defect of the identity under the plateau reshaping `H_h`; tends to zero
/// with the time step since the scheme satisfies the identity up to
/// time-discretization error.
pub fn renormalized_residual(
    kernel: &KernelTable,
    traj: &Trajectory,
    source: &Source,
    h: PlateauFn,
    phi: &TestFunction,
) -> Result<f64, CheckError> {
    Ok(renormalized_gap_with(kernel, traj, source, |r| plateau(h, r), phi)?.abs())
}

/// The kernel pairing term of the truncation-tested inequality,
/// `sum_k tau pairing(u^k, T_k(u^k) - phi^k)`, exposed for the structural
/// coincidence with the plateau-tested identity when the truncation is
/// inactive on the solution range.
pub fn entropy_pair_term(
    kernel: &KernelTable,
    traj: &Trajectory,
    phi: &TestFunction,
    k: TruncationLevel,
) -> Result<f64, CheckError> {
    let grid = kernel.grid.clone();
    let mut acc = 0.0;
    for step in 1..=traj.steps() {
        let t = step as f64 * traj.tau;
        let u = &traj.states[step];
        let test = u.truncated(k).zip(&phi.at_time(&grid, t), |a, b| a - b)?;
        acc += traj.tau * ops::pairing(kernel, u, &test)?;
    }
    Ok(acc)
}

/// Truncation-tested inequality: primitive terms of `T_k` at the endpoints,
/// the time-derivative pairing, and the kernel term against `T_k(u) - phi`
/// must stay below the source tested with `T_k(u - phi)`.
pub fn entropy_residual(
    kernel: &KernelTable,
    traj: &Trajectory,
    source: &Source,
    phi: &TestFunction,
    k: TruncationLevel,
) -> Result<CheckReport, CheckError> {
    let grid = kernel.grid.clone();
    let horizon = grid.spec.time_horizon;
    let phi_t = phi.time_derivative(&grid);
    let w = grid.cell_volume;

    let theta_mass = |state: &Field, t: f64| -> Result<f64, CheckError> {
        let diff = state.zip(&phi.at_time(&grid, t), |a, b| a - b)?;
        Ok(w * diff.values().iter().map(|&r| theta(k, r)).sum::<f64>())
    };
    let last = traj.steps();
    let mut lhs = theta_mass(&traj.states[last], horizon)? - theta_mass(&traj.states[0], 0.0)?;
    lhs += entropy_pair_term(kernel, traj, phi, k)?;
    let mut rhs = 0.0;
    for step in 1..=last {
        let t = step as f64 * traj.tau;
        let u = &traj.states[step];
        let tkd = u.zip(&phi.at_time(&grid, t), |a, b| truncate(k, a - b))?;
        lhs += traj.tau * ops::dot_w(&phi_t, &tkd);
        rhs += traj.tau * ops::dot_w(&source.at(&grid, t), &tkd);
    }
    let tol = tolerance_for(&[traj]);
    Ok(CheckReport::new("entropy", lhs, rhs, tol))
}

/// `(w sum |u_i|^p) / gagliardo_p(u)`; bounded by `poincare_bound(kernel)`.
pub fn poincare_ratio(kernel: &KernelTable, u: &Field) -> Result<f64, CheckError> {
    let g = ops::gagliardo_p(kernel, u)?;
    if g == 0.0 {
        return Err(CheckError::ZeroField);
    }
    let w = kernel.grid.cell_volume;
    let p = kernel.p;
    let mass: f64 = w * u.values().iter().map(|v| v.abs().powf(p)).sum::<f64>();
    Ok(mass / g)
}

/// `1 / (2 c m(Omega)^(-p s_plus / N))` with the exterior-mass constant `c`:
/// every interior node couples to the exterior with at least that density, and
/// those couplings alone contribute `2 w exterior_mass |u_i|^p` to the
/// seminorm power.
pub fn poincare_bound(kernel: &KernelTable) -> f64 {
    1.0 / (2.0 * kernel.exterior_mass_lower_bound())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::kernel::{assemble_kernel, VarOrderField};
    use crate::solver::{solve_parabolic, ParabolicProblem, SolverOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_1d(m: usize, hi: f64) -> GridSpec {
        GridSpec {
            dimension: 1,
            box_lo: [0.0, 0.0],
            box_hi: [hi, 0.0],
            cells_per_axis: m,
            collar_radius: hi / m as f64,
            time_horizon: 1.0,
        }
    }

    fn setup(m: usize, p: f64) -> (Arc<Grid>, Arc<KernelTable>) {
        let grid = Arc::new(build_grid(&spec_1d(m, 1.0)).unwrap());
        let kernel = Arc::new(assemble_kernel(grid.clone(), &VarOrderField::constant(0.4), p).unwrap());
        (grid, kernel)
    }

    fn solve(
        kernel: &Arc<KernelTable>,
        initial: Field,
        source: Source,
        steps: usize,
    ) -> Trajectory {
        solve_parabolic(&ParabolicProblem {
            kernel: kernel.clone(),
            initial,
            source,
            steps,
            options: SolverOptions::default(),
        })
        .unwrap()
    }

    fn bump_initial(grid: &Arc<Grid>, scale: f64) -> Field {
        Field::from_fn(grid.clone(), |x| {
            scale * (1.0 - (2.0 * x[0] - 1.0).powi(2)).max(0.0)
        })
    }

    #[test]
    fn report_verdict_follows_slack() {
        let pass = CheckReport::new("demo", 1.0, 2.0, 1e-8);
        assert!(pass.verdict);
        assert_eq!(pass.slack, 1.0);
        let edge = CheckReport::new("demo", 1.0, 1.0 - 5e-9, 1e-8);
        assert!(edge.verdict);
        let fail = CheckReport::new("demo", 1.0, 0.5, 1e-8);
        assert!(!fail.verdict);
        assert_eq!(fail.slack, -0.5);
    }

    #[test]
    fn tail_set_membership_rule() {
        let d2 = TailSet::new(2.0).unwrap();
        assert!(d2.contains(1.0, 3.5)); // min below h, max past h+1
        assert!(!d2.contains(1.0, 2.5)); // max inside the (h, h+1) band
        assert!(!d2.contains(2.5, 3.5)); // min above h
        assert!(d2.contains(-0.1, 0.1)); // straddles zero
        assert!(d2.contains(0.0, 3.0));
        assert!(!d2.contains(0.0, 0.0));
        assert!(TailSet::new(-1.0).is_err());
        // Symmetry in the two slots.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = rng.gen_range(-5.0..5.0);
            let b = rng.gen_range(-5.0..5.0);
            assert_eq!(d2.contains(a, b), d2.contains(b, a));
        }
    }

    #[test]
    fn test_function_support_and_derivative() {
        let (grid, _) = setup(8, 2.0);
        assert!(TestFunction::bump(&grid, [0.5, 0.0], 0.6, 1.0).is_err());
        assert!(TestFunction::bump(&grid, [0.2, 0.0], 0.3, 1.0).is_err()); // touches 0 minus nothing? 0.2-0.3 < 0
        assert!(TestFunction::bump(&grid, [0.5, 0.0], -0.1, 1.0).is_err());
        let phi = TestFunction::bump(&grid, [0.5, 0.0], 0.3, 2.0).unwrap();
        // Vanishes at the final time and outside the ball.
        let horizon = grid.spec.time_horizon;
        assert_eq!(phi.at_time(&grid, horizon).sup_norm(), 0.0);
        for (i, &v) in phi.at_time(&grid, 0.3).values().iter().enumerate() {
            if (grid.nodes[i][0] - 0.5).abs() >= 0.3 {
                assert_eq!(v, 0.0);
            }
        }
        // Time derivative matches a centred difference of the profile.
        let eps = 1e-6;
        let up = phi.at_time(&grid, 0.4 + eps);
        let dn = phi.at_time(&grid, 0.4 - eps);
        let fd = up.zip(&dn, |a, b| (a - b) / (2.0 * eps)).unwrap();
        let dt = phi.time_derivative(&grid);
        for i in 0..grid.node_count() {
            assert!((fd.get(i) - dt.get(i)).abs() <= 1e-8);
        }
    }

    #[test]
    fn contraction_bound_holds_and_is_symmetric() {
        let (grid, kernel) = setup(8, 1.5);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |x| x[0]));
        let bump = Field::from_fn(grid.clone(), |x| {
            0.05 * (1.0 - (4.0 * (x[0] - 0.3)).powi(2)).max(0.0)
        });
        let g = Source::Steady(f.at(&grid, 0.0).zip(&bump, |a, b| a + b).unwrap());
        let v0 = Field::zeros(grid.clone());
        let tu = solve(&kernel, u0.clone(), f.clone(), 6);
        let tv = solve(&kernel, v0.clone(), g.clone(), 6);

        // Identical problems: distance exactly zero.
        let same = check_l1_contraction(&tu, &tu, &u0, &f, &u0, &f).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert!(same.verdict);

        // Distinct data including a zero-initial run with perturbed source.
        let rep = check_l1_contraction(&tu, &tv, &u0, &f, &v0, &g).unwrap();
        assert!(rep.verdict, "slack {}", rep.slack);
        assert!(rep.slack >= -1e-8);

        // Swapping the arguments leaves the distance unchanged.
        let swapped = check_l1_contraction(&tv, &tu, &v0, &g, &u0, &f).unwrap();
        assert_eq!(swapped.lhs, rep.lhs);
        assert_eq!(swapped.rhs, rep.rhs);
    }

    #[test]
    fn comparison_orders_solutions() {
        let (grid, kernel) = setup(8, 2.0);
        let u0 = bump_initial(&grid, 0.5);
        let f = Source::Steady(Field::from_fn(grid.clone(), |_| 0.2));
        let g = Source::Steady(Field::from_fn(grid.clone(), |x| {
            0.2 + (1.0 - (4.0 * (x[0] - 0.5)).powi(2)).max(0.0)
        }));
        let tu = solve(&kernel, u0.clone(), f, 5);
        let tv = solve(&kernel, u0.clone(), g, 5);

        let same = check_comparison(&tu, &tu).unwrap();
        assert!(same.verdict);
        assert_eq!(same.lhs, 0.0);

        let ordered = check_comparison(&tu, &tv).unwrap();
        assert!(ordered.verdict, "max overshoot {}", ordered.lhs);

        // The larger-data solution is strictly above somewhere, so swapping
        // the arguments must fail.
        let swapped = check_comparison(&tv, &tu).unwrap();
        assert!(!swapped.verdict);
        assert!(swapped.lhs > 0.0);
    }

    #[test]
    fn energy_estimate_saturates_and_slack_tracks_k() {
        let (grid, kernel) = setup(8, 1.5);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |_| 0.5));
        let traj = solve(&kernel, u0.clone(), f.clone(), 6);

        // Zero data: both sides vanish.
        let zero = Field::zeros(grid.clone());
        let ztraj = solve(&kernel, zero.clone(), Source::Zero, 4);
        let zrep = check_energy_estimate(&kernel, &ztraj, &zero, &Source::Zero, TruncationLevel::new(1.0).unwrap()).unwrap();
        assert_eq!(zrep.lhs, 0.0);
        assert!(zrep.verdict);

        let sup: f64 = traj
            .states
            .iter()
            .fold(0.0f64, |m, s| m.max(s.sup_norm()));
        let k = TruncationLevel::new(sup + 1.0).unwrap();
        let k2 = TruncationLevel::new(2.0 * (sup + 1.0)).unwrap();
        let r1 = check_energy_estimate(&kernel, &traj, &u0, &f, k).unwrap();
        let r2 = check_energy_estimate(&kernel, &traj, &u0, &f, k2).unwrap();
        assert!(r1.verdict && r2.verdict);
        // Above the solution range the lhs saturates, so doubling k adds
        // exactly one more multiple of the data mass to the slack.
        assert_eq!(r1.lhs, r2.lhs);
        let mass = r1.rhs / k.level();
        assert!((r2.slack - r1.slack - k.level() * mass).abs() <= 1e-10 * r1.rhs.max(1.0));
    }

    /// Independent oracle for the tail: ordered double loop over all node
    /// pairs, recomputing the membership rule from its verbal statement.
    fn tail_oracle(kernel: &KernelTable, traj: &Trajectory, h: f64) -> f64 {
        let grid = &kernel.grid;
        let w = grid.cell_volume;
        let q = kernel.p - 1.0;
        let member = |a: f64, b: f64| -> bool {
            let mixed = (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0);
            (a.abs().min(b.abs()) <= h && a.abs().max(b.abs()) >= h + 1.0) || mixed
        };
        let mut total = 0.0;
        for state in traj.states.iter().skip(1) {
            let mut slab = 0.0;
            for i in 0..grid.node_count() {
                for j in 0..grid.node_count() {
                    if i == j || (!grid.interior[i] && !grid.interior[j]) {
                        continue;
                    }
                    if member(state.get(i), state.get(j)) {
                        let sigma = kernel
                            .neighbors(i)
                            .iter()
                            .find(|&&(jj, _)| jj as usize == j)
                            .unwrap()
                            .1;
                        slab += sigma * (state.get(i) - state.get(j)).abs().powf(q);
                    }
                }
            }
            for &i in &grid.interior_nodes {
                if member(state.get(i), 0.0) {
                    slab += 2.0 * w * kernel.tail[i] * state.get(i).abs().powf(q);
                }
            }
            total += traj.tau * slab;
        }
        total
    }

    #[test]
    fn tail_matches_brute_force_and_vanishes_when_bounded() {
        let (grid, kernel) = setup(6, 1.5);
        // Sign-changing initial datum so the mixed-sign clause is exercised.
        let u0 = Field::from_fn(grid.clone(), |x| 3.0 * (x[0] - 0.5));
        let traj = solve(&kernel, u0, Source::Zero, 4);

        let at_zero = renormalization_tail(&kernel, &traj, TailSet::new(0.0).unwrap()).unwrap();
        assert!(at_zero > 0.0);
        assert!((at_zero - tail_oracle(&kernel, &traj, 0.0)).abs() <= 1e-12 * at_zero);

        let h1 = renormalization_tail(&kernel, &traj, TailSet::new(1.0).unwrap()).unwrap();
        assert!((h1 - tail_oracle(&kernel, &traj, 1.0)).abs() <= 1e-12 * at_zero);

        // The mixed-sign clause keeps pairs in D_h at every level for this
        // sign-changing solution, so the tail stays positive no matter h.
        let sup: f64 = traj.states.iter().fold(0.0f64, |m, s| m.max(s.sup_norm()));
        let big = renormalization_tail(&kernel, &traj, TailSet::new(sup).unwrap()).unwrap();
        assert!(big > 0.0);

        // For a one-signed solution the set empties beyond the range.
        let pos = solve(&kernel, bump_initial(&grid, 8.0), Source::Zero, 4);
        let psup: f64 = pos.states.iter().fold(0.0f64, |m, s| m.max(s.sup_norm()));
        let small = renormalization_tail(&kernel, &pos, TailSet::new(0.1).unwrap()).unwrap();
        assert!(small > 0.0);
        let gone = renormalization_tail(&kernel, &pos, TailSet::new(psup).unwrap()).unwrap();
        assert_eq!(gone, 0.0);
    }

    #[test]
    fn tail_decreases_over_doubling_levels_for_singular_datum() {
        let (grid, kernel) = setup(10, 1.5);
        // Integrable blow-up near an off-node point, clipped only by the
        // cell-width floor, so every level h in the table is exceeded.
        let u0 = Field::from_fn(grid.clone(), |x| {
            (x[0] - 0.55).abs().max(grid.cell_width[0] / 2.0).powf(-0.9)
        });
        let traj = solve(&kernel, u0, Source::Zero, 4);
        let table: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&h| renormalization_tail(&kernel, &traj, TailSet::new(h).unwrap()).unwrap())
            .collect();
        assert!(table[0] > 0.0);
        for pair in table.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{table:?}");
        }
    }

    #[test]
    fn renormalized_residual_zero_trajectory() {
        let (grid, kernel) = setup(6, 2.0);
        let traj = solve(&kernel, Field::zeros(grid.clone()), Source::Zero, 3);
        let phi = TestFunction::bump(&grid, [0.5, 0.0], 0.3, 1.0).unwrap();
        let h = PlateauFn::new(2.0).unwrap();
        let res = renormalized_residual(&kernel, &traj, &Source::Zero, h, &phi).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn renormalized_residual_halves_with_the_time_step() {
        let (grid, kernel) = setup(8, 2.0);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |_| 0.3));
        let phi = TestFunction::bump(&grid, [0.5, 0.0], 0.35, 1.0).unwrap();
        // Plateau beyond the solution range: the reshaping is the identity.
        let h = PlateauFn::new(10.0).unwrap();
        let coarse = solve(&kernel, u0.clone(), f.clone(), 8);
        let fine = solve(&kernel, u0, f.clone(), 16);
        let rc = renormalized_residual(&kernel, &coarse, &f, h, &phi).unwrap();
        let rf = renormalized_residual(&kernel, &fine, &f, h, &phi).unwrap();
        assert!(rc > 0.0);
        assert!(rf <= rc / 1.5, "coarse {rc}, fine {rf}");
    }

    #[test]
    fn constant_shift_of_the_reshaping_cancels_exactly() {
        // Adding a constant to H changes only the two H-terms, whose
        // difference is constant * (sum tau * integral phi_t + integral
        // phi(0)) = 0 for the linear-in-time profile.
        let (grid, kernel) = setup(8, 1.5);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |x| x[0]));
        let traj = solve(&kernel, u0, f.clone(), 7);
        let phi = TestFunction::bump(&grid, [0.4, 0.0], 0.25, 1.3).unwrap();
        let h = PlateauFn::new(0.7).unwrap();
        let base = renormalized_gap_with(&kernel, &traj, &f, |r| plateau(h, r), &phi).unwrap();
        let shifted =
            renormalized_gap_with(&kernel, &traj, &f, |r| {
                let (v, d) = plateau(h, r);
                (v + 4.2, d)
            }, &phi)
            .unwrap();
        assert!((base - shifted).abs() <= 1e-10, "{base} vs {shifted}");
    }

    #[test]
    fn entropy_inequality_holds() {
        let (grid, kernel) = setup(8, 1.5);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |_| 0.4));
        let traj = solve(&kernel, u0.clone(), f.clone(), 6);

        // Zero data with a zero test function: both sides vanish.
        let ztraj = solve(&kernel, Field::zeros(grid.clone()), Source::Zero, 3);
        let zphi = TestFunction::bump(&grid, [0.5, 0.0], 0.3, 0.0).unwrap();
        let zrep = entropy_residual(&kernel, &ztraj, &Source::Zero, &zphi, TruncationLevel::new(1.0).unwrap()).unwrap();
        assert_eq!(zrep.lhs, 0.0);
        assert_eq!(zrep.rhs, 0.0);
        assert!(zrep.verdict);

        // Zero test function on real data reduces to an energy inequality.
        let rep0 = entropy_residual(&kernel, &traj, &f, &zphi, TruncationLevel::new(0.5).unwrap()).unwrap();
        assert!(rep0.verdict, "slack {}", rep0.slack);

        // Bump test functions at two truncation levels and two resolutions.
        let phi = TestFunction::bump(&grid, [0.5, 0.0], 0.3, 0.2).unwrap();
        let fine = solve(&kernel, u0, f.clone(), 12);
        for k in [0.8, 2.5] {
            let k = TruncationLevel::new(k).unwrap();
            let rc = entropy_residual(&kernel, &traj, &f, &phi, k).unwrap();
            let rf = entropy_residual(&kernel, &fine, &f, &phi, k).unwrap();
            assert!(rc.verdict, "k = {}: slack {}", k.level(), rc.slack);
            assert!(rf.verdict, "k = {}: slack {}", k.level(), rf.slack);
        }
    }

    #[test]
    fn entropy_pair_term_meets_plateau_identity_on_the_solution_range() {
        // With the truncation level above the solution range and a plateau
        // that is the identity there, T_k(u) - phi = H(u) - H'(u) phi
        // nodewise, so the truncation-tested and plateau-tested kernel terms
        // agree through the linearity of the pairing in its test slot.
        let (grid, kernel) = setup(8, 1.5);
        let u0 = bump_initial(&grid, 1.0);
        let f = Source::Steady(Field::from_fn(grid.clone(), |_| 0.4));
        let traj = solve(&kernel, u0, f.clone(), 6);
        let phi = TestFunction::bump(&grid, [0.5, 0.0], 0.3, 0.4).unwrap();
        let sup: f64 = traj.states.iter().fold(0.0f64, |m, s| m.max(s.sup_norm()));
        let k = TruncationLevel::new(sup + 1.0).unwrap();
        let h = PlateauFn::new(sup + 1.0).unwrap();

        let entropy = entropy_pair_term(&kernel, &traj, &phi, k).unwrap();
        let mut identity = 0.0;
        for step in 1..=traj.steps() {
            let t = step as f64 * traj.tau;
            let u = &traj.states[step];
            let hu = u.map(|r| plateau(h, r).0);
            let test = u.zip(&phi.at_time(&grid, t), |ui, pi| plateau(h, ui).1 * pi).unwrap();
            identity += traj.tau
                * (ops::pairing(&kernel, u, &hu).unwrap()
                    - ops::pairing(&kernel, u, &test).unwrap());
        }
        assert!((entropy - identity).abs() <= 1e-10, "{entropy} vs {identity}");
    }

    #[test]
    fn poincare_ratio_below_bound() {
        // Wide box: the measure-dependent bound is far from tight, keeping
        // the verdict robust to quadrature of the exterior mass.
        let grid = Arc::new(build_grid(&spec_1d(16, 4.0)).unwrap());
        // Declared upper order strictly above the realized one adds slack in
        // the bound constant as well.
        let order = VarOrderField::custom(|_, _| 0.4, 0.3, 0.45);
        for p in [1.5, 2.0, 3.0] {
            let kernel = assemble_kernel(grid.clone(), &order, p).unwrap();
            let bound = poincare_bound(&kernel);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let mut worst = 0.0f64;
            for _ in 0..50 {
                let u = Field::from_fn(grid.clone(), |_| rng.gen_range(-1.0..1.0));
                worst = worst.max(poincare_ratio(&kernel, &u).unwrap());
            }
            assert!(worst <= bound, "p = {p}: ratio {worst} > bound {bound}");

            // Flat field: only the exterior couplings carry the seminorm, so
            // the ratio is the reciprocal of twice their mean density.
            let flat = Field::from_fn(grid.clone(), |_| 1.0);
            let ratio = poincare_ratio(&kernel, &flat).unwrap();
            let mean: f64 = grid
                .interior_nodes
                .iter()
                .map(|&i| kernel.exterior_mass(i).unwrap())
                .sum::<f64>()
                / grid.interior_nodes.len() as f64;
            assert!((ratio - 1.0 / (2.0 * mean)).abs() <= 1e-12 * ratio);
            assert!(ratio <= bound);

            // Homogeneity: scaling the field leaves the ratio unchanged.
            let u = Field::from_fn(grid.clone(), |x| (x[0] - 1.0) * (3.0 - x[0]));
            let r1 = poincare_ratio(&kernel, &u).unwrap();
            let r2 = poincare_ratio(&kernel, &u.map(|v| -7.5 * v)).unwrap();
            assert!((r1 - r2).abs() <= 1e-12 * r1);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let (grid, kernel) = setup(6, 2.0);
        assert!(matches!(
            poincare_ratio(&kernel, &Field::zeros(grid.clone())),
            Err(CheckError::ZeroField)
        ));
        let t1 = solve(&kernel, Field::zeros(grid.clone()), Source::Zero, 3);
        let t2 = solve(&kernel, Field::zeros(grid.clone()), Source::Zero, 4);
        assert!(matches!(
            check_comparison(&t1, &t2),
            Err(CheckError::ShapeMismatch)
        ));
    }
}
