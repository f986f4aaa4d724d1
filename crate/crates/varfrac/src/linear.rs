//! Dense linear-algebra route for the quadratic case `p = 2`.
//!
//! When p = 2 the operator is linear, so one resolvent solve is a symmetric
//! positive-definite linear system over the interior nodes. This route shares
//! no code with the descent solver and serves as its independent reference.

use crate::field::Field;
use crate::kernel::KernelTable;
use nalgebra::{DMatrix, DVector};

/// Dense interior-node matrix of the linear operator at p = 2: row i holds
/// `sum_j sigma_ij/w + tail_i` on the diagonal and `-sigma_ij/w` for interior
/// partners j; couplings to exterior nodes only contribute to the diagonal.
pub fn operator_matrix_p2(kernel: &KernelTable) -> DMatrix<f64> {
    assert_eq!(kernel.p, 2.0, "dense route is specific to p = 2");
    let grid = &kernel.grid;
    let w = grid.cell_volume;
    let n = grid.interior_nodes.len();
    let mut slot = vec![usize::MAX; grid.node_count()];
    for (row, &i) in grid.interior_nodes.iter().enumerate() {
        slot[i] = row;
    }
    let mut a = DMatrix::zeros(n, n);
    for (row, &i) in grid.interior_nodes.iter().enumerate() {
        let mut diag = kernel.tail[i];
        for &(j, sigma) in kernel.neighbors(i) {
            diag += sigma / w;
            let col = slot[j as usize];
            if col != usize::MAX {
                a[(row, col)] -= sigma / w;
            }
        }
        a[(row, row)] += diag;
    }
    a
}

/// Solves `u + lambda * L u = d` over the interior by Cholesky factorization.
pub fn resolvent_p2_dense(kernel: &KernelTable, datum: &Field, lambda: f64) -> Field {
    let grid = &kernel.grid;
    let n = grid.interior_nodes.len();
    let mut system = operator_matrix_p2(kernel) * lambda;
    for row in 0..n {
        system[(row, row)] += 1.0;
    }
    let rhs = DVector::from_iterator(n, grid.interior_nodes.iter().map(|&i| datum.get(i)));
    let sol = system
        .cholesky()
        .expect("I + lambda*L is positive definite")
        .solve(&rhs);
    let mut values = vec![0.0; grid.node_count()];
    for (row, &i) in grid.interior_nodes.iter().enumerate() {
        values[i] = sol[row];
    }
    Field::from_values(grid.clone(), values).expect("grid-sized output")
}

/// Implicit Euler trajectory through repeated dense resolvent solves.
pub fn solve_parabolic_p2_dense(
    kernel: &KernelTable,
    initial: &Field,
    source: &crate::solver::Source,
    steps: usize,
) -> Vec<Field> {
    let grid = kernel.grid.clone();
    let tau = grid.spec.time_horizon / steps as f64;
    let mut states = vec![initial.clone()];
    for k in 0..steps {
        let slice = source.at(&grid, (k + 1) as f64 * tau);
        let datum = states[k].zip(&slice, |u, f| u + tau * f).expect("same grid");
        states.push(resolvent_p2_dense(kernel, &datum, tau));
    }
    states
}
