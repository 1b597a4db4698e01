//! Dissipaton-space density-tensor dynamics for fermionic impurity models.
//!
//! A quantum impurity coupled to fermionic reservoirs is simulated by embedding
//! the reservoir memory into a finite set of damped "dissipaton" modes, one per
//! exponential term of the reservoir correlation functions. The full state is a
//! reduced density tensor (RDT) over binary configurations: system ket/bra
//! occupations plus dissipaton occupations on the ket and bra sides. Two solvers
//! operate on the same generator:
//!
//! * a dense, numerically exact solver ([`dense`]) that propagates every
//!   configuration amplitude, and
//! * a variational solver ([`rbm`] + [`tdvp`] + [`sampler`]) that compresses the
//!   RDT into a restricted Boltzmann machine and evolves its parameters by the
//!   time-dependent variational principle.
//!
//! [`bath`] builds the exponential reservoir decomposition, [`space`] indexes the
//! configuration space, [`models`] constructs impurity Hamiltonians and coupling
//! operators, [`liouvillian`] assembles the equation-of-motion generator, and
//! [`observables`] extracts currents, occupations, correlations, and entropies.

pub mod bath;
pub mod dense;
pub mod liouvillian;
pub mod models;
pub mod observables;
pub mod quad;
pub mod rbm;
pub mod sampler;
pub mod space;
pub mod tdvp;

// Keep the BLAS/LAPACK backend's native link flags alive even though no Rust
// item of the backend crate is referenced directly.
use openblas_src as _;

pub use num_complex::Complex64 as C64;

/// Errors produced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    /// A reservoir decomposition request was malformed or failed validation.
    #[error("invalid reservoir decomposition: {0}")]
    Bath(String),
    /// A configuration-space request exceeded supported sizes or was inconsistent.
    #[error("configuration space error: {0}")]
    Space(String),
    /// Model construction failed (dimension mismatch, bad parameters).
    #[error("model error: {0}")]
    Model(String),
    /// Generator assembly or application failed.
    #[error("generator error: {0}")]
    Generator(String),
    /// Dense propagation diverged or a dense solve failed.
    #[error("dense solver error: {0}")]
    Dense(String),
    /// Ansatz evaluation or gradient failed (non-finite values, bad shapes).
    #[error("ansatz error: {0}")]
    Ansatz(String),
    /// TDVP linear solve or integration failed.
    #[error("variational evolution error: {0}")]
    Tdvp(String),
    /// Monte Carlo sampling failed (zero acceptance, bad chain setup).
    #[error("sampler error: {0}")]
    Sampler(String),
    /// Observable extraction failed (normalization, positivity).
    #[error("observable error: {0}")]
    Observable(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
