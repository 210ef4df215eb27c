//! The semigroup `exp(-tP)` through its splitting into a Fourier multiplier
//! and the drift flow, on exact Gaussian states and on periodic grids.

pub mod gaussian;
pub mod grid;
pub mod norms;

pub use gaussian::{evolve, fourier_gaussian, transport_apply, EvolvedFourierState, GaussianState};
pub use grid::{grid_evolve, transport_grid, GridEvolution, GridState, GridWarning};
pub use norms::{
    apply_p, apply_p_fourier, fourier_l2_norm, integrate_frequency, multiplier_norm, operator_norm, seminorm, Envelope,
    OperatorNorm,
};
