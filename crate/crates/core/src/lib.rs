//! Hamiltonian-graph autoencoders, neural ansatz-parameter predictors and
//! sample-based Krylov diagonalization on a dense statevector simulator.
//!
//! Numeric building blocks are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix them to `f64`, which is what the experiment drivers use.

pub mod linalg;
pub mod bpdiag;
pub mod diffnet;
pub mod egate;
pub mod hgraph;
pub mod nnvqe;
pub mod pauli;
pub mod qsim;
pub mod scalar;
pub mod seed;
pub mod skqd;

pub use scalar::{Complex, Real};

pub type Hamiltonian = pauli::Hamiltonian<f64>;
pub type Spectrum = pauli::Spectrum<f64>;
pub type Statevector = qsim::Statevector<f64>;
pub type Circuit = qsim::Circuit<f64>;
pub type CMatrix = linalg::CMatrix<f64>;
