//! Built-in data profiles for initial values and sources.
//!
//! The inverse-power profile is the unbounded-but-integrable exemplar for the
//! L1 regime: `|x - x0|^(-alpha)` is in L1 near the singularity exactly when
//! `alpha < N`, and that guard is enforced at construction.

use crate::field::Field;
use crate::grid::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("inverse-power exponent {alpha} is not integrable in dimension {dimension} (needs alpha < N)")]
    NotIntegrable { alpha: f64, dimension: usize },
    #[error("profile width must be positive, got {0}")]
    BadWidth(f64),
}

/// A spatial datum selector; time-independent.
#[derive(Debug, Clone, PartialEq)]
pub enum DataProfile {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * exp(-|x-center|^2 / width^2)`.
    Gaussian {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
    },
    /// `amplitude * |x-center|^(-alpha)`, the distance floored at half a cell
    /// so on-node singularities stay finite while the L1 mass is preserved
    /// at quadrature resolution.
    InversePower {
        center: [f64; 2],
        alpha: f64,
        amplitude: f64,
    },
    /// Seeded uniform values in `[0, amplitude)`; the only profile that
    /// consumes the run seed.
    Random {
        amplitude: f64,
    },
}

impl DataProfile {
    /// Validates profile parameters against the grid's dimension.
    pub fn validate(&self, dimension: usize) -> Result<(), ProfileError> {
        match *self {
            DataProfile::Gaussian { width, .. } if !(width > 0.0) => {
                Err(ProfileError::BadWidth(width))
            }
            DataProfile::InversePower { alpha, .. } if !(alpha < dimension as f64) => {
                Err(ProfileError::NotIntegrable { alpha, dimension })
            }
            _ => Ok(()),
        }
    }

    pub fn field(&self, grid: &Arc<Grid>, seed: u64) -> Result<Field, ProfileError> {
        self.validate(grid.dimension())?;
        let dim = grid.dimension();
        Ok(match *self {
            DataProfile::Zero => Field::zeros(grid.clone()),
            DataProfile::Constant { value } => Field::from_fn(grid.clone(), |_| value),
            DataProfile::Gaussian {
                center,
                width,
                amplitude,
            } => Field::from_fn(grid.clone(), |x| {
                let r2: f64 = (0..dim).map(|d| (x[d] - center[d]).powi(2)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }),
            DataProfile::InversePower {
                center,
                alpha,
                amplitude,
            } => {
                let floor = grid.cell_width[0] / 2.0;
                Field::from_fn(grid.clone(), |x| {
                    let r2: f64 = (0..dim).map(|d| (x[d] - center[d]).powi(2)).sum();
                    amplitude * r2.sqrt().max(floor).powf(-alpha)
                })
            }
            DataProfile::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Field::from_fn(grid.clone(), |_| rng.gen_range(0.0..amplitude.max(f64::MIN_POSITIVE)))
            }
        })
    }
}
