//! Bayesian optimization over combinatorial structures through a learned
//! latent space, with a Gaussian-process surrogate whose structure-coupled
//! kernel extends the latent-space kernel on evaluated points to the rest of
//! the space using a kernel over the decoded structures themselves.
//!
//! The crate provides:
//!
//! - dense symmetric linear algebra with jittered factorizations ([`linalg`]),
//! - base kernels: Matérn-5/2 ARD, subsequence string kernel, binary
//!   fingerprint dot product ([`kernels`]),
//! - the structure-coupled kernel built by extrapolating the eigenbasis of
//!   the latent Gram matrix through the structural kernel ([`coupled`]),
//! - GP regression in latent-only and structure-coupled modes ([`gp`]),
//! - expected improvement and a CMA-ES acquisition optimizer
//!   ([`acquisition`], [`cmaes`]),
//! - a deterministic codebook latent model standing in for a trained
//!   encoder/decoder, plus a loader for externally exported embeddings
//!   ([`latent`]),
//! - the arithmetic-expression benchmark ([`expr`]),
//! - the optimization loop itself ([`bo`]) and the experiment drivers backing
//!   the command-line interface ([`experiments`]).

pub mod acquisition;
pub mod bo;
pub mod cmaes;
pub mod coupled;
pub mod experiments;
pub mod expr;
pub mod gp;
pub mod kernels;
pub mod latent;
pub mod linalg;
pub mod seed;

pub use acquisition::{expected_improvement, AcqConfig, AcqError, SelectedCandidate};
pub use bo::{BoConfig, BoError, BoMethod, BoRunRecord, RecordEntry};
pub use cmaes::CmaConfig;
pub use coupled::{CoupledKernelState, EvaluatedTriple, StructuredKernel, StructuredKernelSpec};
pub use experiments::{ExperimentConfig, ExperimentError, LatentSource};
pub use gp::{GpError, GpFitConfig, GpModel, KernelMode, Posterior};
pub use kernels::{Fingerprint, KernelError, MaternParams, StringKernelParams};
pub use latent::{CodebookModel, LatentError, LatentModel, Structure};
pub use linalg::{CholeskyFactor, EigenDecomp, LinalgError, Mat, SymMatrix};
