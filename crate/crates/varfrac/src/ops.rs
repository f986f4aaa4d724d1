//! Discrete nonlocal energy, its gradient and the duality pairing.
//!
//! Sums run over unordered pairs with a factor 2 standing in for the two
//! ordered appearances of each pair in the integration domain. Interior nodes
//! additionally couple to the unrepresented exterior through the kernel tail,
//! against the zero extension. The tail terms are carried consistently through
//! seminorm, energy, operator and pairing, so the operator is the exact
//! gradient of the energy in the volume-weighted inner product.

use crate::field::Field;
use crate::kernel::KernelTable;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("field and kernel live on different grids")]
    GridMismatch,
}

/// `|t|^(p-2) t`, with the removable singularity at t = 0 fixed to 0.
pub fn signed_power(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 2.0) * t
    }
}

fn check(kernel: &KernelTable, u: &Field) -> Result<(), OpsError> {
    if kernel.grid.same_layout(u.grid()) {
        Ok(())
    } else {
        Err(OpsError::GridMismatch)
    }
}

/// Discrete p-th power of the Gagliardo seminorm:
/// `sum_pairs 2 sigma |u_i - u_j|^p + 2 sum_i w tail_i |u_i|^p`.
pub fn gagliardo_p(kernel: &KernelTable, u: &Field) -> Result<f64, OpsError> {
    check(kernel, u)?;
    let v = u.values();
    let p = kernel.p;
    let mut acc = 0.0;
    for (idx, &(i, j)) in kernel.grid.pairs.iter().enumerate() {
        let du = v[i as usize] - v[j as usize];
        if du != 0.0 {
            acc += 2.0 * kernel.weights[idx] * du.abs().powf(p);
        }
    }
    let w = kernel.grid.cell_volume;
    for &i in &kernel.grid.interior_nodes {
        let ui = v[i];
        if ui != 0.0 {
            acc += 2.0 * w * kernel.tail[i] * ui.abs().powf(p);
        }
    }
    Ok(acc)
}

/// Nonlocal energy `gagliardo_p(u) / (2p)`.
pub fn energy(kernel: &KernelTable, u: &Field) -> Result<f64, OpsError> {
    Ok(gagliardo_p(kernel, u)? / (2.0 * kernel.p))
}

/// Discrete operator apply: node i receives
/// `sum_j sigma_ij/w |u_i-u_j|^(p-2)(u_i-u_j) + tail_i |u_i|^(p-2) u_i`,
/// zero on exterior nodes. Gradient of `energy` divided by the cell volume.
pub fn apply_operator(kernel: &KernelTable, u: &Field) -> Result<Field, OpsError> {
    check(kernel, u)?;
    let grid = &kernel.grid;
    let v = u.values();
    let p = kernel.p;
    let w = grid.cell_volume;
    let out: Vec<f64> = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            if !grid.interior[i] {
                return 0.0;
            }
            let ui = v[i];
            let mut acc = 0.0;
            for &(j, sigma) in kernel.neighbors(i) {
                acc += sigma / w * signed_power(ui - v[j as usize], p);
            }
            acc + kernel.tail[i] * signed_power(ui, p)
        })
        .collect();
    Ok(Field::from_values(grid.clone(), out).expect("grid-sized output"))
}

/// Sequential variant with identical arithmetic, for thread-count checks.
pub fn apply_operator_serial(kernel: &KernelTable, u: &Field) -> Result<Field, OpsError> {
    check(kernel, u)?;
    let grid = &kernel.grid;
    let v = u.values();
    let p = kernel.p;
    let w = grid.cell_volume;
    let out: Vec<f64> = (0..grid.node_count())
        .map(|i| {
            if !grid.interior[i] {
                return 0.0;
            }
            let ui = v[i];
            let mut acc = 0.0;
            for &(j, sigma) in kernel.neighbors(i) {
                acc += sigma / w * signed_power(ui - v[j as usize], p);
            }
            acc + kernel.tail[i] * signed_power(ui, p)
        })
        .collect();
    Ok(Field::from_values(grid.clone(), out).expect("grid-sized output"))
}

/// Duality pairing
/// `sum_pairs sigma |u_i-u_j|^(p-2)(u_i-u_j)(v_i-v_j) + sum_i w tail_i |u_i|^(p-2) u_i v_i`.
pub fn pairing(kernel: &KernelTable, u: &Field, v: &Field) -> Result<f64, OpsError> {
    check(kernel, u)?;
    check(kernel, v)?;
    let uu = u.values();
    let vv = v.values();
    let p = kernel.p;
    let mut acc = 0.0;
    for (idx, &(i, j)) in kernel.grid.pairs.iter().enumerate() {
        let du = uu[i as usize] - uu[j as usize];
        let dv = vv[i as usize] - vv[j as usize];
        acc += kernel.weights[idx] * signed_power(du, p) * dv;
    }
    let w = kernel.grid.cell_volume;
    for &i in &kernel.grid.interior_nodes {
        acc += w * kernel.tail[i] * signed_power(uu[i], p) * vv[i];
    }
    Ok(acc)
}

/// Volume-weighted inner product of two fields.
pub fn dot_w(u: &Field, v: &Field) -> f64 {
    u.grid().cell_volume
        * u.values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
}
