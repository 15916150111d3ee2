//! Operator-valued kernels on finite site sets: block Gram matrices, the
//! finite-span RKHS of the induced scalar kernel with its feature and
//! covariance operators, and Gaussian processes with operator covariance.

pub mod error;
pub mod export;
pub mod gp;
pub mod gram;
pub mod kernels;
pub mod linalg;
pub mod rkhs;

pub use error::{Error, Result};
pub use gp::{sample_paths, CovErrorReport, SampleBatch};
pub use gram::{assemble_gram, spectral_decay_profile, BlockGram, SpectrumReport};
pub use kernels::{grid, HVec, KernelSpec, OpMatrix, OperatorKernel, Site};
pub use rkhs::{verify_identities, ExpansionReport, IdentityReport, RkhsContext, RkhsElement, TransformFamily};
