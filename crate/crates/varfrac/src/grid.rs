//! Discrete bounded domain with an explicit exterior collar.
//!
//! The domain is a uniform cell-centered lattice over a box, extended by a
//! collar of exterior nodes on which every field is pinned to zero. Pair
//! enumeration covers exactly the discrete analog of the integration domain
//! for zero-extended functions: all unordered node pairs with at least one
//! interior member, self-pairs excluded.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("cells_per_axis must be at least 2, got {0}")]
    TooFewCells(usize),
    #[error("collar_radius must be positive, got {0}")]
    BadCollar(f64),
    #[error("box_lo must be strictly below box_hi on axis {0}")]
    EmptyBox(usize),
    #[error("time_horizon must be positive, got {0}")]
    BadHorizon(f64),
}

/// Parameters of the discrete domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dimension: usize,
    pub box_lo: [f64; 2],
    pub box_hi: [f64; 2],
    pub cells_per_axis: usize,
    pub collar_radius: f64,
    pub time_horizon: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(GridError::BadDimension(self.dimension));
        }
        if self.cells_per_axis < 2 {
            return Err(GridError::TooFewCells(self.cells_per_axis));
        }
        if !(self.collar_radius > 0.0) {
            return Err(GridError::BadCollar(self.collar_radius));
        }
        for axis in 0..self.dimension {
            if !(self.box_lo[axis] < self.box_hi[axis]) {
                return Err(GridError::EmptyBox(axis));
            }
        }
        if !(self.time_horizon > 0.0) {
            return Err(GridError::BadHorizon(self.time_horizon));
        }
        Ok(())
    }

    /// Measure of the box domain.
    pub fn domain_measure(&self) -> f64 {
        (0..self.dimension)
            .map(|a| self.box_hi[a] - self.box_lo[a])
            .product()
    }
}

/// Cell-centered lattice with interior/exterior partition and pair index.
#[derive(Debug)]
pub struct Grid {
    pub spec: GridSpec,
    pub nodes: Vec<[f64; 2]>,
    pub interior: Vec<bool>,
    /// Indices of interior nodes, ascending.
    pub interior_nodes: Vec<usize>,
    pub cell_width: [f64; 2],
    pub cell_volume: f64,
    /// Collar depth in cells per axis.
    pub collar_cells: [usize; 2],
    /// Unordered pairs (i < j) with at least one interior node.
    pub pairs: Vec<(u32, u32)>,
}

impl Grid {
    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.nodes[i];
        let b = self.nodes[j];
        match self.spec.dimension {
            1 => (a[0] - b[0]).abs(),
            _ => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
        }
    }

    /// Extent of the represented region (box plus collar) on one axis.
    pub fn represented_extent(&self, axis: usize) -> (f64, f64) {
        let w = self.collar_cells[axis] as f64 * self.cell_width[axis];
        (self.spec.box_lo[axis] - w, self.spec.box_hi[axis] + w)
    }

    /// Two grids are compatible when they describe the same lattice.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.spec == other.spec
    }
}

/// Builds the lattice: `(M + 2*ceil(collar_radius/cell_width))^N` nodes,
/// interior exactly those whose cell center lies inside the box.
pub fn build_grid(spec: &GridSpec) -> Result<Grid, GridError> {
    spec.validate()?;
    let n = spec.dimension;
    let m = spec.cells_per_axis;

    let mut cell_width = [0.0; 2];
    let mut collar_cells = [0usize; 2];
    let mut per_axis = [1usize; 2];
    for axis in 0..n {
        cell_width[axis] = (spec.box_hi[axis] - spec.box_lo[axis]) / m as f64;
        collar_cells[axis] = (spec.collar_radius / cell_width[axis]).ceil() as usize;
        per_axis[axis] = m + 2 * collar_cells[axis];
    }
    let cell_volume: f64 = cell_width[..n].iter().product();

    let total = per_axis[..n].iter().product::<usize>();
    let mut nodes = Vec::with_capacity(total);
    let mut interior = Vec::with_capacity(total);

    let coord = |axis: usize, idx: usize| -> f64 {
        let cell = idx as i64 - collar_cells[axis] as i64;
        spec.box_lo[axis] + (cell as f64 + 0.5) * cell_width[axis]
    };
    let is_core = |axis: usize, idx: usize| -> bool {
        let cell = idx as i64 - collar_cells[axis] as i64;
        cell >= 0 && (cell as usize) < m
    };

    match n {
        1 => {
            for i in 0..per_axis[0] {
                nodes.push([coord(0, i), 0.0]);
                interior.push(is_core(0, i));
            }
        }
        _ => {
            for i in 0..per_axis[0] {
                for j in 0..per_axis[1] {
                    nodes.push([coord(0, i), coord(1, j)]);
                    interior.push(is_core(0, i) && is_core(1, j));
                }
            }
        }
    }

    let mut pairs = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            if interior[i] || interior[j] {
                pairs.push((i as u32, j as u32));
            }
        }
    }

    let interior_nodes = (0..total).filter(|&i| interior[i]).collect();

    Ok(Grid {
        spec: spec.clone(),
        nodes,
        interior,
        interior_nodes,
        cell_width,
        cell_volume,
        collar_cells,
        pairs,
    })
}
