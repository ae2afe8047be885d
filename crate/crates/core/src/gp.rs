//! Gaussian-process regression over evaluated triples, in two kernel modes:
//! latent-only (Matérn over latent points) and structure-coupled. Because the
//! coupled kernel collapses to the latent Gram `L` on the training set, the
//! training covariance is `L` in both modes and so is the marginal
//! likelihood; the modes differ only at prediction time, where the coupled
//! mode scores candidates through their decoded structures.
//!
//! Hyperparameters (log-lengthscales, log-outputscale, log-noise, constant
//! mean) are fitted by maximizing the log marginal likelihood with a
//! multi-start Nelder–Mead search. The structured-kernel hyperparameters are
//! not identifiable from the training likelihood — the training Gram does not
//! depend on them — so they stay at their defaults unless the optional
//! leave-one-out grid search is enabled, which does exercise the coupling.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::coupled::{CoupledError, CoupledKernelState, EvaluatedTriple, StructuredKernelSpec};
use crate::kernels::{self, KernelError, MaternParams, StringKernelParams};
use crate::latent::Structure;
use crate::linalg::{cholesky_psd, dot, CholeskyFactor, LinalgError, SymMatrix};

#[derive(Debug, Error)]
pub enum GpError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Coupled(#[from] CoupledError),
    #[error("hyperparameter optimization failed: every restart failed factorization")]
    OptimizationFailed,
    #[error("need at least {need} training points, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

/// Which kernel the GP predicts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    LatentOnly,
    StructureCoupled,
}

/// GP predictive distribution at one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    /// Clamped at zero.
    pub variance: f64,
}

/// Noise variance floor; the benchmark objective is deterministic but the
/// floor keeps the training solves well conditioned.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Configuration of the hyperparameter fit.
#[derive(Debug, Clone)]
pub struct GpFitConfig {
    /// Multi-start restarts of the simplex search.
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub evals_per_restart: usize,
    pub noise_floor: f64,
    /// Previous optimum in internal parameter form; replaces one restart.
    pub warm_start: Option<Vec<f64>>,
    /// Leave-one-out grid search over the string kernel's decays.
    pub loo_struct_grid: bool,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            evals_per_restart: 200,
            noise_floor: NOISE_FLOOR,
            warm_start: None,
            loo_struct_grid: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A fitted (or directly constructed) GP model; immutable after creation.
#[derive(Debug)]
pub struct GpModel {
    pub kernel_mode: KernelMode,
    pub matern: MaternParams,
    pub noise_variance: f64,
    pub mean_const: f64,
    /// Log marginal likelihood at the model's hyperparameters.
    pub log_marginal: f64,
    train_z: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    alpha: Vec<f64>,
    factor: CholeskyFactor,
    factor_jitter: f64,
    coupled: Option<CoupledKernelState>,
    /// Internal optimizer coordinates of the fit, for warm starts.
    theta: Vec<f64>,
}

impl GpModel {
    /// Builds a model at fixed hyperparameters (no optimization). The
    /// structured-kernel spec is only consulted in coupled mode.
    pub fn with_params(
        triples: &[EvaluatedTriple],
        mode: KernelMode,
        matern: MaternParams,
        noise_variance: f64,
        mean_const: f64,
        spec: StructuredKernelSpec,
    ) -> Result<Self, GpError> {
        if triples.is_empty() {
            return Err(GpError::TooFewPoints { need: 1, got: 0 });
        }
        let noise = noise_variance.max(NOISE_FLOOR);
        let (factor, jitter, gram) = train_factor(triples, &matern, noise)?;
        let train_y: Vec<f64> = triples.iter().map(|t| t.y).collect();
        let centered: Vec<f64> = train_y.iter().map(|y| y - mean_const).collect();
        let alpha = factor.solve(&centered)?;
        let log_marginal = mll_from_factor(&factor, &centered, &alpha);
        drop(gram);

        let coupled = match mode {
            KernelMode::LatentOnly => None,
            KernelMode::StructureCoupled => {
                Some(CoupledKernelState::fit(triples, matern.clone(), spec)?)
            }
        };
        let theta = pack_theta(&matern, noise, mean_const, NOISE_FLOOR);
        Ok(Self {
            kernel_mode: mode,
            matern,
            noise_variance: noise,
            mean_const,
            log_marginal,
            train_z: triples.iter().map(|t| t.z.clone()).collect(),
            train_y,
            alpha,
            factor,
            factor_jitter: jitter,
            coupled,
            theta,
        })
    }

    pub fn len(&self) -> usize {
        self.train_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_y.is_empty()
    }

    pub fn coupled_state(&self) -> Option<&CoupledKernelState> {
        self.coupled.as_ref()
    }

    pub fn factor_jitter(&self) -> f64 {
        self.factor_jitter
    }

    /// Optimizer coordinates of this model's hyperparameters, usable as a
    /// warm start for the next fit.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// GP posterior at a candidate. `x` must be the decoded structure of `z`
    /// (only consulted in coupled mode).
    pub fn posterior_predict(&self, z: &[f64], x: &Structure) -> Result<Posterior, GpError> {
        let (c_star, c_self) = match (&self.kernel_mode, &self.coupled) {
            (KernelMode::LatentOnly, _) => {
                let c: Vec<f64> = self
                    .train_z
                    .iter()
                    .map(|zi| kernels::matern52_raw(z, zi, &self.matern))
                    .collect();
                (c, self.matern.outputscale)
            }
            (KernelMode::StructureCoupled, Some(state)) => {
                let xi = state.feature_map(z, x)?;
                let c: Vec<f64> = (0..state.m())
                    .map(|i| dot(&xi, state.train_feature(i)))
                    .collect();
                let self_k = dot(&xi, &xi);
                (c, self_k)
            }
            (KernelMode::StructureCoupled, None) => unreachable!("coupled mode keeps its state"),
        };
        let mean = self.mean_const + dot(&c_star, &self.alpha);
        let w = self.factor.forward_solve(&c_star)?;
        let variance = (c_self - dot(&w, &w)).max(0.0);
        Ok(Posterior { mean, variance })
    }

    /// Mean absolute error of the posterior mean over a test set.
    pub fn surrogate_mae(&self, test: &[EvaluatedTriple]) -> Result<f64, GpError> {
        assert!(!test.is_empty(), "test set must be nonempty");
        let mut sum = 0.0;
        for t in test {
            let p = self.posterior_predict(&t.z, &t.x)?;
            sum += (p.mean - t.y).abs();
        }
        Ok(sum / test.len() as f64)
    }
}

/// Builds the training covariance factor: `chol(L + noise I)` with the
/// escalating jitter on top if the factorization needs it. The coupled mode
/// uses the same `L` — on the training set the coupled Gram collapses to it.
fn train_factor(
    triples: &[EvaluatedTriple],
    matern: &MaternParams,
    noise: f64,
) -> Result<(CholeskyFactor, f64, SymMatrix), GpError> {
    for t in triples {
        if t.z.len() != matern.dim() {
            return Err(GpError::Kernel(KernelError::DimensionMismatch {
                expected: matern.dim(),
                got: t.z.len(),
            }));
        }
    }
    let m = triples.len();
    let gram = SymMatrix::from_fn(m, |i, j| {
        let k = kernels::matern52_raw(&triples[i].z, &triples[j].z, matern);
        if i == j {
            k + noise
        } else {
            k
        }
    });
    let (factor, jitter) = cholesky_psd(&gram, 0.0)?;
    Ok((factor, jitter, gram))
}

fn mll_from_factor(factor: &CholeskyFactor, centered: &[f64], alpha: &[f64]) -> f64 {
    let m = centered.len() as f64;
    -0.5 * dot(centered, alpha) - 0.5 * factor.log_det() - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood of the centered targets under the Matérn training
/// covariance plus noise. Identical across kernel modes for the same
/// hyperparameters, because the coupled training Gram reduces to `L`.
pub fn log_marginal_likelihood(
    triples: &[EvaluatedTriple],
    matern: &MaternParams,
    noise_variance: f64,
    mean_const: f64,
) -> Result<f64, GpError> {
    if triples.is_empty() {
        return Err(GpError::TooFewPoints { need: 1, got: 0 });
    }
    let (factor, _, _) = train_factor(triples, matern, noise_variance)?;
    let centered: Vec<f64> = triples.iter().map(|t| t.y - mean_const).collect();
    let alpha = factor.solve(&centered)?;
    Ok(mll_from_factor(&factor, &centered, &alpha))
}

// ---------------------------------------------------------------------------
// Hyperparameter fitting
// ---------------------------------------------------------------------------

// Internal parameter vector: [log ℓ_1 … log ℓ_d, log outputscale,
// log (noise - floor), mean].
fn pack_theta(matern: &MaternParams, noise: f64, mean: f64, floor: f64) -> Vec<f64> {
    let mut theta: Vec<f64> = matern.lengthscales.iter().map(|l| l.ln()).collect();
    theta.push(matern.outputscale.ln());
    theta.push((noise - floor).max(1e-300).ln());
    theta.push(mean);
    theta
}

fn unpack_theta(theta: &[f64], dim: usize, floor: f64) -> Option<(MaternParams, f64, f64)> {
    if theta.iter().take(dim + 2).any(|t| t.abs() > 20.0) {
        return None; // absurd scales; reject before exp overflows or collapses
    }
    let lengthscales: Vec<f64> = theta[..dim].iter().map(|t| t.exp()).collect();
    let outputscale = theta[dim].exp();
    let noise = floor + theta[dim + 1].exp();
    let mean = theta[dim + 2];
    if !mean.is_finite() {
        return None;
    }
    Some((
        MaternParams {
            lengthscales,
            outputscale,
        },
        noise,
        mean,
    ))
}

/// Fits hyperparameters by marginal-likelihood maximization (multi-start
/// Nelder–Mead over the log-parameter vector) and returns the fitted model.
///
/// The search runs on standardized targets (zero mean, unit variance), which
/// keeps the optimizer's coordinates well scaled no matter what units the
/// objective uses; the fitted parameters are mapped back to raw units before
/// the model is assembled. The warm-start vector lives in the standardized
/// coordinates, so it stays meaningful as the dataset grows.
pub fn fit_hyperparams(
    triples: &[EvaluatedTriple],
    mode: KernelMode,
    spec: StructuredKernelSpec,
    cfg: &GpFitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GpModel, GpError> {
    if triples.len() < 2 {
        return Err(GpError::TooFewPoints {
            need: 2,
            got: triples.len(),
        });
    }
    let dim = triples[0].z.len();
    let m = triples.len() as f64;
    let y_mean = triples.iter().map(|t| t.y).sum::<f64>() / m;
    let y_var = triples.iter().map(|t| (t.y - y_mean).powi(2)).sum::<f64>() / m;
    let y_sd = y_var.sqrt().max(1e-8);

    let standardized: Vec<EvaluatedTriple> = triples
        .iter()
        .map(|t| EvaluatedTriple::new(t.z.clone(), t.x.clone(), (t.y - y_mean) / y_sd))
        .collect();
    // The noise floor shrinks with the target scale so that de-standardizing
    // cannot land below the raw floor.
    let std_floor = cfg.noise_floor / (y_sd * y_sd);

    let base = MaternParams {
        lengthscales: vec![1.0; dim],
        outputscale: 1.0,
    };
    let theta0 = pack_theta(&base, 1e-2 + std_floor, 0.0, std_floor);

    let objective = |theta: &[f64]| -> f64 {
        let Some((matern, noise, mean)) = unpack_theta(theta, dim, std_floor) else {
            return f64::INFINITY;
        };
        match log_marginal_likelihood(&standardized, &matern, noise, mean) {
            Ok(mll) if mll.is_finite() => -mll,
            _ => f64::INFINITY,
        }
    };

    let mut steps = vec![0.5; dim + 2];
    steps.push(0.25);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let start = if restart == 0 {
            theta0.clone()
        } else if restart == 1 && cfg.warm_start.is_some() {
            cfg.warm_start.clone().unwrap()
        } else {
            let mut s = theta0.clone();
            for v in s.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v += 0.75 * n;
            }
            s
        };
        let (x, fx) = nelder_mead(&objective, &start, &steps, cfg.evals_per_restart);
        if fx.is_finite() && best.as_ref().is_none_or(|(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let Some((theta_opt, _)) = best else {
        return Err(GpError::OptimizationFailed);
    };
    let (matern_std, noise_std, mean_std) =
        unpack_theta(&theta_opt, dim, std_floor).ok_or(GpError::OptimizationFailed)?;

    // Back to raw target units.
    let matern = MaternParams {
        lengthscales: matern_std.lengthscales,
        outputscale: matern_std.outputscale * y_sd * y_sd,
    };
    let noise = (noise_std * y_sd * y_sd).max(cfg.noise_floor);
    let mean = y_mean + mean_std * y_sd;

    let spec = if cfg.loo_struct_grid {
        loo_grid_search(triples, &matern, noise, mean, spec)?
    } else {
        spec
    };

    let mut model = GpModel::with_params(triples, mode, matern, noise, mean, spec)?;
    model.theta = theta_opt;
    Ok(model)
}

/// Picks the string kernel's decay pair from a small grid by leave-one-out
/// absolute error under the coupled kernel. The training likelihood cannot
/// identify these parameters (the training Gram reduces to `L`), but
/// held-out predictions route through the coupling and can.
///
/// Each grid cell refits the coupled state once per held-out point: 9·m state
/// fits. Affordable at benchmark sizes, but opt-in.
fn loo_grid_search(
    triples: &[EvaluatedTriple],
    matern: &MaternParams,
    noise: f64,
    mean: f64,
    spec: StructuredKernelSpec,
) -> Result<StructuredKernelSpec, GpError> {
    let StructuredKernelSpec::String { params, normalize } = &spec else {
        return Ok(spec); // the fingerprint kernel has no hyperparameters
    };
    if triples.len() < 3 {
        return Ok(spec);
    }
    let gaps = [0.25, 0.5, 0.75];
    let matches = [0.5, 0.8, 1.0];

    let mut best_spec = spec.clone();
    let mut best_err = f64::INFINITY;
    for &gap in &gaps {
        for &mat in &matches {
            let candidate = StructuredKernelSpec::String {
                params: StringKernelParams {
                    gap_decay: gap,
                    match_decay: mat,
                    ..params.clone()
                },
                normalize: *normalize,
            };
            let mut err_sum = 0.0;
            for held_out in 0..triples.len() {
                let rest: Vec<EvaluatedTriple> = triples
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != held_out)
                    .map(|(_, t)| t.clone())
                    .collect();
                let model = GpModel::with_params(
                    &rest,
                    KernelMode::StructureCoupled,
                    matern.clone(),
                    noise,
                    mean,
                    candidate.clone(),
                )?;
                let p = model.posterior_predict(&triples[held_out].z, &triples[held_out].x)?;
                err_sum += (p.mean - triples[held_out].y).abs();
            }
            let err = err_sum / triples.len() as f64;
            if err < best_err {
                best_err = err;
                best_spec = candidate;
            }
        }
    }
    Ok(best_spec)
}

// ---------------------------------------------------------------------------
// Nelder–Mead
// ---------------------------------------------------------------------------

/// Plain Nelder–Mead simplex descent with a fixed evaluation budget.
/// Deterministic given the start point. Returns the best point evaluated.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    steps: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let n = start.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(start, &mut evals);
    simplex.push((start.to_vec(), f0));
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += steps[i];
        let fp = eval(&p, &mut evals);
        simplex.push((p, fp));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let worst = simplex.len() - 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..worst].iter().map(|(p, _)| p[j]).sum::<f64>() / worst as f64)
            .collect();

        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + ALPHA * (centroid[j] - simplex[worst].0[j]))
            .collect();
        let f_r = eval(&reflect, &mut evals);

        if f_r < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + GAMMA * (reflect[j] - centroid[j]))
                .collect();
            let f_e = eval(&expand, &mut evals);
            simplex[worst] = if f_e < f_r { (expand, f_e) } else { (reflect, f_r) };
        } else if f_r < simplex[worst - 1].1 {
            simplex[worst] = (reflect, f_r);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + RHO * (simplex[worst].0[j] - centroid[j]))
                .collect();
            let f_c = eval(&contract, &mut evals);
            if f_c < simplex[worst].1 {
                simplex[worst] = (contract, f_c);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = (0..n)
                        .map(|j| best[j] + SIGMA * (entry.0[j] - best[j]))
                        .collect();
                    let f_s = eval(&shrunk, &mut evals);
                    *entry = (shrunk, f_s);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex.swap_remove(0)
}
