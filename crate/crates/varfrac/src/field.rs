//! Fields on the grid, truncations and plateau functions.

use crate::grid::Grid;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("value vector has {got} entries, grid has {want} nodes")]
    LengthMismatch { got: usize, want: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("truncation level must be nonnegative, got {0}")]
    BadLevel(f64),
    #[error("plateau width must be positive, got {0}")]
    BadPlateau(f64),
}

/// Node values of the state at one time instant. Exterior nodes are pinned to
/// zero on construction and every producing operation keeps them there.
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.node_count()];
        Self { grid, values }
    }

    /// Builds a field from raw values, zeroing the exterior entries.
    pub fn from_values(grid: Arc<Grid>, mut values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.node_count() {
            return Err(FieldError::LengthMismatch {
                got: values.len(),
                want: grid.node_count(),
            });
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !grid.interior[i] {
                *v = 0.0;
            }
        }
        Ok(Self { grid, values })
    }

    /// Samples a function of the node coordinate on interior nodes.
    pub fn from_fn<F: FnMut(&[f64; 2]) -> f64>(grid: Arc<Grid>, mut f: F) -> Self {
        let values = grid
            .nodes
            .iter()
            .enumerate()
            .map(|(i, x)| if grid.interior[i] { f(x) } else { 0.0 })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Applies a pointwise map fixing 0, so exterior zeros survive.
    pub fn map<F: FnMut(f64) -> f64>(&self, mut f: F) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.grid.interior[i] { f(v) } else { 0.0 })
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn zip<F: FnMut(f64, f64) -> f64>(&self, other: &Field, mut f: F) -> Result<Self, FieldError> {
        if !self.grid.same_layout(&other.grid) {
            return Err(FieldError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (&a, &b))| if self.grid.interior[i] { f(a, b) } else { 0.0 })
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn truncated(&self, k: TruncationLevel) -> Self {
        self.map(|v| truncate(k, v))
    }

    /// Weighted L1 norm over the interior: `w * sum |u_i|`.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Weighted L2 norm over the interior.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Clamp level `k >= 0` of the truncation `T_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(k: f64) -> Result<Self, FieldError> {
        if k >= 0.0 {
            Ok(Self(k))
        } else {
            Err(FieldError::BadLevel(k))
        }
    }

    pub fn level(&self) -> f64 {
        self.0
    }
}

/// `T_k(r) = min(k, max(r, -k))`.
pub fn truncate(k: TruncationLevel, r: f64) -> f64 {
    r.clamp(-k.0, k.0)
}

/// Primitive of the truncation: `r^2/2` below the level, `k|r| - k^2/2` above.
pub fn theta(k: TruncationLevel, r: f64) -> f64 {
    let k = k.0;
    if r.abs() <= k {
        0.5 * r * r
    } else {
        k * r.abs() - 0.5 * k * k
    }
}

/// Plateau height `h` of the capped identity `H_h`: identity below `h`, a
/// quadratic blend on `[h, h+1]`, constant beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauFn(f64);

impl PlateauFn {
    pub fn new(h: f64) -> Result<Self, FieldError> {
        if h > 0.0 {
            Ok(Self(h))
        } else {
            Err(FieldError::BadPlateau(h))
        }
    }

    pub fn height(&self) -> f64 {
        self.0
    }
}

/// Returns `(H_h(r), H_h'(r))`.
pub fn plateau(h: PlateauFn, r: f64) -> (f64, f64) {
    let h = h.0;
    let a = r.abs();
    let sign = if r < 0.0 { -1.0 } else { 1.0 };
    if a < h {
        (r, 1.0)
    } else if a <= h + 1.0 {
        let value = (h + 0.5) - 0.5 * (a - (h + 1.0)).powi(2);
        (sign * value, h + 1.0 - a)
    } else {
        (sign * (h + 0.5), 0.0)
    }
}
