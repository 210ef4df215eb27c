//! Fourier-side evaluation of fractional Ornstein-Uhlenbeck semigroups
//! `exp(-t P)` with `P = 1/2 (-Q nabla . nabla)^s + <Bx, nabla>`, together with
//! the linear-algebra structure that governs their partial smoothing and a set
//! of numerical experiments checking the resulting short-time estimates.

pub mod error;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod semigroup;
pub mod sphere;
pub mod structure;
pub mod symbol;
pub mod verifier;

pub use error::{Error, Result};
pub use structure::{compute_structure, compute_structure_with_tol, OUOperator, StructureReport};
pub use symbol::SymbolContext;
