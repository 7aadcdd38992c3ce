//! Decoherence as randomly perturbed unitary evolution.
//!
//! The crate samples stochastic evolution operators built from spectral
//! decompositions, averages them into density-operator dynamics, and checks
//! the averages against closed-form decoherence factors, master-equation
//! propagators and Choi-matrix complete-positivity audits.
//!
//! Conventions used throughout:
//! - ℏ = 1, energies and rates are dimensionless.
//! - Superoperators act on column-stacked operators:
//!   `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.
//! - Qubit basis: `σ_z = diag(1, −1)`, `σ_± = (σ_x ± iσ_y)/2`.
//! - Tensor products order the first factor as the most significant index.

pub mod cp;
pub mod dephasing;
pub mod error;
pub mod generators;
pub mod harness;
pub mod montecarlo;
pub mod noise;
pub mod operator;
pub mod scenario;

pub use error::{Error, Result};
pub use operator::{
    choi_matrix, commutator_superop, matrix_exponential, partial_trace, sandwich_superop,
    spectral_decompose, CMatrix, DensityOperator, HermitianOperator, SpectralDecomposition,
    Superoperator,
};
