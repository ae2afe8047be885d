//! The structure-coupled kernel.
//!
//! Given evaluated triples `(z_i, x_i = Φ(z_i), y_i)`, the latent-space Gram
//! matrix `L` (Matérn) and the structural Gram matrix `K` (string or
//! fingerprint kernel over the decoded structures), a point `z` with decoded
//! structure `x` receives the feature vector
//!
//! ```text
//! ξ(z) = V^T K^{-1} k_z,   V = U Σ^{1/2},   k_z = [k(x, x_1), …, k(x, x_m)]
//! ```
//!
//! where `U, Σ` eigendecompose `L`. The coupled kernel is the dot product
//! `c(z, z') = ξ(z)^T ξ(z') = k_z^T K^{-1} L K^{-1} k_{z'}`. On the training
//! set this collapses back to `L`; away from it, the structural kernel
//! extrapolates the latent kernel's eigenbasis through the decoded outputs.
//! The feature map depends on `z` only through its decoded structure.
//!
//! `K` receives the stabilizing jitter rather than `L`, so the training-set
//! identity holds as tightly as the factorization allows.

use thiserror::Error;

use crate::kernels::{
    self, expr_fingerprint, fingerprint_dot, string_kernel, Fingerprint, KernelError,
    MaternParams, StringKernelParams, DEFAULT_FINGERPRINT_WIDTH,
};
use crate::latent::Structure;
use crate::linalg::{self, cholesky_psd, sym_eigendecomp, CholeskyFactor, LinalgError, Mat, SymMatrix};

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("coupled kernel state needs at least 2 triples, got {got}")]
    TooFewTriples { got: usize },
}

/// One evaluated point of the optimization dataset: the latent point, its
/// decoded structure, and the observed objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedTriple {
    pub z: Vec<f64>,
    pub x: Structure,
    pub y: f64,
}

impl EvaluatedTriple {
    pub fn new(z: Vec<f64>, x: Structure, y: f64) -> Self {
        Self { z, x, y }
    }
}

// ---------------------------------------------------------------------------
// Structured kernel dispatch
// ---------------------------------------------------------------------------

/// Which kernel runs over decoded structures.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredKernelSpec {
    /// Subsequence string kernel over token sequences; cosine-normalized by
    /// default so the Gram diagonal is 1 regardless of sequence length.
    String {
        params: StringKernelParams,
        normalize: bool,
    },
    /// Fingerprint dot product. Token sequences are hashed to n-gram
    /// fingerprints first; fingerprint structures are used as they are.
    Fingerprint { width: usize, max_ngram: usize },
}

impl Default for StructuredKernelSpec {
    fn default() -> Self {
        StructuredKernelSpec::String {
            params: StringKernelParams::default(),
            normalize: true,
        }
    }
}

impl StructuredKernelSpec {
    pub fn default_fingerprint() -> Self {
        StructuredKernelSpec::Fingerprint {
            width: DEFAULT_FINGERPRINT_WIDTH,
            max_ngram: 3,
        }
    }
}

/// A structured kernel with per-structure precomputation.
#[derive(Debug, Clone)]
pub struct StructuredKernel {
    spec: StructuredKernelSpec,
}

/// A structure with whatever the kernel wants cached: its raw self-kernel
/// (string mode) or its fingerprint (fingerprint mode).
#[derive(Debug, Clone)]
pub enum PreparedStructure {
    Tokens { tokens: Vec<String>, self_kernel: f64 },
    Bits(Fingerprint),
}

impl StructuredKernel {
    pub fn new(spec: StructuredKernelSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &StructuredKernelSpec {
        &self.spec
    }

    pub fn prepare(&self, x: &Structure) -> Result<PreparedStructure, KernelError> {
        match (&self.spec, x) {
            (StructuredKernelSpec::String { params, normalize }, Structure::Tokens(tokens)) => {
                let self_kernel = string_kernel(tokens, tokens, params);
                if *normalize && self_kernel <= 0.0 {
                    return Err(KernelError::DegenerateSelfSimilarity);
                }
                Ok(PreparedStructure::Tokens {
                    tokens: tokens.clone(),
                    self_kernel,
                })
            }
            (StructuredKernelSpec::String { .. }, Structure::Bits(_)) => {
                Err(KernelError::InvalidParameter {
                    name: "structure",
                    reason: "string kernel requires token structures".into(),
                })
            }
            (StructuredKernelSpec::Fingerprint { width, max_ngram }, Structure::Tokens(tokens)) => {
                Ok(PreparedStructure::Bits(expr_fingerprint(
                    tokens, *width, *max_ngram,
                )))
            }
            (StructuredKernelSpec::Fingerprint { width, .. }, Structure::Bits(fp)) => {
                if fp.width() != *width {
                    return Err(KernelError::WidthMismatch {
                        left: fp.width(),
                        right: *width,
                    });
                }
                Ok(PreparedStructure::Bits(fp.clone()))
            }
        }
    }

    pub fn eval(&self, a: &PreparedStructure, b: &PreparedStructure) -> f64 {
        match (&self.spec, a, b) {
            (
                StructuredKernelSpec::String { params, normalize },
                PreparedStructure::Tokens { tokens: ta, self_kernel: ka },
                PreparedStructure::Tokens { tokens: tb, self_kernel: kb },
            ) => {
                let k = string_kernel(ta, tb, params);
                if *normalize {
                    k / (ka * kb).sqrt()
                } else {
                    k
                }
            }
            (
                StructuredKernelSpec::Fingerprint { .. },
                PreparedStructure::Bits(fa),
                PreparedStructure::Bits(fb),
            ) => fingerprint_dot(fa, fb).expect("prepared fingerprints share a width"),
            _ => unreachable!("prepared structures always match their kernel"),
        }
    }
}

// ---------------------------------------------------------------------------
// Coupled kernel state
// ---------------------------------------------------------------------------

/// Frozen per-fit state of the coupled kernel: both Gram matrices, the
/// eigen-scaled basis of `L`, the jittered factorization of `K`, and the
/// feature vectors of the training points.
#[derive(Debug)]
pub struct CoupledKernelState {
    latent_params: MaternParams,
    kernel: StructuredKernel,
    train_z: Vec<Vec<f64>>,
    prepared: Vec<PreparedStructure>,
    latent_gram: SymMatrix,
    struct_gram: SymMatrix,
    k_factor: CholeskyFactor,
    jitter_used: f64,
    /// `A = (K + jitter I)^{-1} V`, so `ξ(z) = A^T k_z`.
    basis: Mat,
    train_features: Vec<Vec<f64>>,
    eigvals: Vec<f64>,
}

impl CoupledKernelState {
    /// Assembles the per-fit state from evaluated triples. `L` is built from
    /// the Matérn parameters over the latent points, `K` from the structured
    /// kernel over the decoded structures; `K` is factored with the default
    /// escalating jitter and `L` is eigendecomposed.
    pub fn fit(
        triples: &[EvaluatedTriple],
        latent_params: MaternParams,
        spec: StructuredKernelSpec,
    ) -> Result<Self, CoupledError> {
        if triples.len() < 2 {
            return Err(CoupledError::TooFewTriples { got: triples.len() });
        }
        let m = triples.len();
        for t in triples {
            if t.z.len() != latent_params.dim() {
                return Err(CoupledError::Kernel(KernelError::DimensionMismatch {
                    expected: latent_params.dim(),
                    got: t.z.len(),
                }));
            }
        }

        let train_z: Vec<Vec<f64>> = triples.iter().map(|t| t.z.clone()).collect();
        let kernel = StructuredKernel::new(spec);
        let prepared = triples
            .iter()
            .map(|t| kernel.prepare(&t.x))
            .collect::<Result<Vec<_>, _>>()?;

        let latent_gram = SymMatrix::from_fn(m, |i, j| {
            kernels::matern52_raw(&train_z[i], &train_z[j], &latent_params)
        });
        let struct_gram = SymMatrix::from_fn(m, |i, j| kernel.eval(&prepared[i], &prepared[j]));

        let eig = sym_eigendecomp(&latent_gram)?;
        // V = U Σ^{1/2}; clamped eigenvalues make the square root real.
        let v = Mat::from_fn(m, m, |i, k| eig.eigvecs.get(i, k) * eig.eigvals[k].sqrt());

        let base_jitter = 1e-8 * struct_gram.mean_diag().abs();
        let (k_factor, jitter_used) = cholesky_psd(&struct_gram, base_jitter)?;
        let basis = k_factor.solve_mat(&v)?;

        let train_features = (0..m)
            .map(|i| basis.t_matvec(struct_gram.row(i)))
            .collect();

        Ok(Self {
            latent_params,
            kernel,
            train_z,
            prepared,
            latent_gram,
            struct_gram,
            k_factor,
            jitter_used,
            basis,
            train_features,
            eigvals: eig.eigvals,
        })
    }

    pub fn m(&self) -> usize {
        self.train_z.len()
    }

    pub fn latent_params(&self) -> &MaternParams {
        &self.latent_params
    }

    pub fn kernel_spec(&self) -> &StructuredKernelSpec {
        self.kernel.spec()
    }

    pub fn latent_gram(&self) -> &SymMatrix {
        &self.latent_gram
    }

    pub fn struct_gram(&self) -> &SymMatrix {
        &self.struct_gram
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Jittered Cholesky factor of the structural Gram matrix.
    pub fn k_factor(&self) -> &CholeskyFactor {
        &self.k_factor
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// Feature vector of training point `i` (its `ξ`, numerically the `i`-th
    /// row of `V` up to jitter).
    pub fn train_feature(&self, i: usize) -> &[f64] {
        &self.train_features[i]
    }

    /// Structural kernel vector `k_z = [k(x, x_1), …, k(x, x_m)]`.
    pub fn kernel_vector(&self, x: &Structure) -> Result<Vec<f64>, KernelError> {
        let p = self.kernel.prepare(x)?;
        Ok(self
            .prepared
            .iter()
            .map(|q| self.kernel.eval(&p, q))
            .collect())
    }

    /// The m-dimensional feature vector `ξ(z) = V^T K^{-1} k_z`.
    ///
    /// `x` must be the decoded structure of `z`; the value depends on `z`
    /// only through `x`.
    pub fn feature_map(&self, z: &[f64], x: &Structure) -> Result<Vec<f64>, KernelError> {
        assert_eq!(
            z.len(),
            self.latent_params.dim(),
            "latent vector dimension mismatch"
        );
        let k_z = self.kernel_vector(x)?;
        Ok(self.basis.t_matvec(&k_z))
    }

    /// `c(z, z') = ξ(z)^T ξ(z')`.
    pub fn coupled_kernel(
        &self,
        za: &[f64],
        xa: &Structure,
        zb: &[f64],
        xb: &Structure,
    ) -> Result<f64, KernelError> {
        let fa = self.feature_map(za, xa)?;
        let fb = self.feature_map(zb, xb)?;
        Ok(linalg::dot(&fa, &fb))
    }

    /// Gram matrix of the coupled kernel over a candidate set; positive
    /// semidefinite by construction (it is a Gram matrix of feature vectors).
    pub fn coupled_gram(
        &self,
        candidates: &[(Vec<f64>, Structure)],
    ) -> Result<SymMatrix, KernelError> {
        let features = candidates
            .iter()
            .map(|(z, x)| self.feature_map(z, x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SymMatrix::from_fn(candidates.len(), |i, j| {
            linalg::dot(&features[i], &features[j])
        }))
    }
}
