//! Expected improvement and its optimizer over the latent space.
//!
//! The optimizer runs CMA-ES from several starting points sampled uniformly
//! inside the (slightly expanded) bounding box of the database embeddings and
//! keeps the best point evaluated anywhere. Every candidate is decoded before
//! scoring; in structure-coupled mode the posterior depends on the latent
//! point only through its decoded structure, so posteriors are cached per
//! database index. Candidates whose decoded structure was already evaluated
//! can be penalized to minus-infinite acquisition value, forcing the search
//! toward new structures.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cmaes::{cmaes_minimize, CmaConfig};
use crate::gp::{GpError, GpModel, KernelMode, Posterior};
use crate::latent::LatentModel;

/// A candidate selected by the acquisition optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCandidate {
    pub z: Vec<f64>,
    /// Expected improvement at `z` (unpenalized).
    pub ei: f64,
    /// Database index of the decoded structure.
    pub db_index: usize,
}

#[derive(Debug, Error)]
pub enum AcqError {
    /// The duplicate penalty excluded every evaluated candidate; the caller
    /// may fall back to accepting the best duplicate.
    #[error("every candidate decoded to an already-evaluated structure")]
    AllCandidatesDuplicate { fallback: SelectedCandidate },
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Acquisition-optimizer configuration.
#[derive(Debug, Clone)]
pub struct AcqConfig {
    pub cma: CmaConfig,
    /// Penalize candidates whose decoded structure is already in the dataset.
    pub duplicate_penalty: bool,
    /// Fractional expansion of the embedding bounding box per side when
    /// sampling restart starting points.
    pub bounds_expansion: f64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        Self {
            cma: CmaConfig::default(),
            duplicate_penalty: true,
            bounds_expansion: 0.1,
        }
    }
}

// ---------------------------------------------------------------------------
// Expected improvement
// ---------------------------------------------------------------------------

fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, Abramowitz–Stegun 26.2.17 rational approximation
/// (|error| < 7.5e-8).
fn norm_cdf(x: f64) -> f64 {
    if x < -8.0 {
        return 0.0;
    }
    if x > 8.0 {
        return 1.0;
    }
    let t = 1.0 / (1.0 + 0.231_641_9 * x.abs());
    let poly = t
        * (0.319_381_530
            + t * (-0.356_563_782 + t * (1.781_477_937 + t * (-1.821_255_978 + t * 1.330_274_429))));
    let upper = 1.0 - norm_pdf(x.abs()) * poly;
    if x >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// Expected improvement of a posterior over the incumbent (minimization):
/// with `Δ = incumbent − μ` and `σ = √variance`,
/// `EI = Δ Φ(Δ/σ) + σ φ(Δ/σ)`, degenerating to `max(Δ, 0)` as `σ → 0`.
/// Always nonnegative.
pub fn expected_improvement(p: &Posterior, incumbent: f64) -> f64 {
    let delta = incumbent - p.mean;
    let sigma = p.variance.max(0.0).sqrt();
    if sigma <= 1e-12 {
        return delta.max(0.0);
    }
    let u = delta / sigma;
    (delta * norm_cdf(u) + sigma * norm_pdf(u)).max(0.0)
}

// ---------------------------------------------------------------------------
// Acquisition optimization
// ---------------------------------------------------------------------------

struct Tracker {
    feasible: Option<SelectedCandidate>,
    duplicate: Option<SelectedCandidate>,
}

impl Tracker {
    fn offer(slot: &mut Option<SelectedCandidate>, cand: SelectedCandidate) {
        // Strict improvement keeps the earliest candidate on ties, which
        // makes the selection deterministic under a fixed evaluation order.
        if slot.as_ref().is_none_or(|b| cand.ei > b.ei) {
            *slot = Some(cand);
        }
    }
}

/// Maximizes expected improvement over the latent space with multi-start
/// CMA-ES and returns the best candidate found. Each restart starts from a
/// uniform sample of the expanded embedding bounding box; the start point
/// itself is also evaluated. With the duplicate penalty on, candidates
/// decoding to already-evaluated structures score −∞ and the best
/// non-duplicate wins; if none exists the error carries the best duplicate
/// as a fallback.
pub fn optimize_acquisition(
    gp: &GpModel,
    latent: &dyn LatentModel,
    incumbent: f64,
    evaluated: &HashSet<usize>,
    cfg: &AcqConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SelectedCandidate, AcqError> {
    let bounds = latent.latent_bounds();
    let expanded: Vec<(f64, f64)> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let pad = cfg.bounds_expansion * (hi - lo);
            (lo - pad, hi + pad)
        })
        .collect();

    let tracker = RefCell::new(Tracker {
        feasible: None,
        duplicate: None,
    });
    // In coupled mode the posterior factors through the decoded structure;
    // cache it per database index. CMA-ES revisits the same cells constantly.
    let posterior_cache: RefCell<HashMap<usize, Posterior>> = RefCell::new(HashMap::new());
    let first_error: RefCell<Option<GpError>> = RefCell::new(None);

    let mut objective = |z: &[f64]| -> f64 {
        if first_error.borrow().is_some() {
            return f64::INFINITY;
        }
        let idx = latent.decode_index(z);
        let coupled = gp.kernel_mode == KernelMode::StructureCoupled;
        let cached = if coupled {
            posterior_cache.borrow().get(&idx).copied()
        } else {
            None
        };
        let posterior = match cached {
            Some(p) => p,
            None => match gp.posterior_predict(z, &latent.database()[idx]) {
                Ok(p) => {
                    if coupled {
                        posterior_cache.borrow_mut().insert(idx, p);
                    }
                    p
                }
                Err(e) => {
                    *first_error.borrow_mut() = Some(e);
                    return f64::INFINITY;
                }
            },
        };
        let ei = expected_improvement(&posterior, incumbent);
        let cand = SelectedCandidate {
            z: z.to_vec(),
            ei,
            db_index: idx,
        };
        let mut tr = tracker.borrow_mut();
        if cfg.duplicate_penalty && evaluated.contains(&idx) {
            Tracker::offer(&mut tr.duplicate, cand);
            f64::INFINITY
        } else {
            Tracker::offer(&mut tr.feasible, cand);
            -ei
        }
    };

    for _ in 0..cfg.cma.restarts.max(1) {
        let start: Vec<f64> = expanded
            .iter()
            .map(|&(lo, hi)| {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        objective(&start);
        cmaes_minimize(&mut objective, &start, &cfg.cma, rng);
    }

    if let Some(e) = first_error.into_inner() {
        return Err(AcqError::Gp(e));
    }
    let tracker = tracker.into_inner();
    match (tracker.feasible, tracker.duplicate) {
        (Some(best), _) => Ok(best),
        (None, Some(dup)) => Err(AcqError::AllCandidatesDuplicate { fallback: dup }),
        (None, None) => unreachable!("every restart evaluates at least its start point"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::{EvaluatedTriple, StructuredKernelSpec};
    use crate::expr;
    use crate::kernels::MaternParams;
    use crate::latent::{build_codebook, Structure};
    use rand::SeedableRng;

    #[test]
    fn ei_zero_variance_cases() {
        let worse = Posterior {
            mean: 1.0,
            variance: 0.0,
        };
        assert_eq!(expected_improvement(&worse, 0.0), 0.0);
        let better = Posterior {
            mean: -2.0,
            variance: 0.0,
        };
        assert_eq!(expected_improvement(&better, 0.0), 2.0);
    }

    #[test]
    fn ei_at_incumbent_mean_unit_sigma() {
        let p = Posterior {
            mean: 0.0,
            variance: 1.0,
        };
        let ei = expected_improvement(&p, 0.0);
        assert!((ei - 0.3989422804014327).abs() < 1e-7, "ei = {ei}");
    }

    /// Closed-form standard error of the n-sample Monte-Carlo EI estimator,
    /// from the exact second moment of `max(incumbent - Y, 0)`.
    pub(super) fn mc_standard_error(mean: f64, sigma: f64, incumbent: f64, n: usize) -> f64 {
        let delta = incumbent - mean;
        let u = delta / sigma;
        let second = (delta * delta + sigma * sigma) * norm_cdf(u)
            + delta * sigma * norm_pdf(u);
        let ei = expected_improvement(
            &Posterior {
                mean,
                variance: sigma * sigma,
            },
            incumbent,
        );
        ((second - ei * ei).max(0.0) / n as f64).sqrt()
    }

    #[test]
    fn ei_matches_monte_carlo_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let mean: f64 = rng.random_range(-2.0..2.0);
            let sigma: f64 = rng.random_range(0.1..2.0);
            let incumbent: f64 = rng.random_range(-2.0..2.0);
            let p = Posterior {
                mean,
                variance: sigma * sigma,
            };
            let closed = expected_improvement(&p, incumbent);

            let n = 200_000usize;
            let mut sum = 0.0;
            for _ in 0..n {
                let draw: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                let y = mean + sigma * draw;
                sum += (incumbent - y).max(0.0);
            }
            let mc = sum / n as f64;
            let se = mc_standard_error(mean, sigma, incumbent, n);
            assert!(
                (closed - mc).abs() <= 3.0 * se + 1e-12,
                "trial {trial}: closed {closed}, mc {mc}, se {se}"
            );
        }
    }

    #[test]
    fn ei_nondecreasing_in_sigma_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let mean: f64 = rng.random_range(-3.0..3.0);
            let incumbent: f64 = rng.random_range(-3.0..3.0);
            let s1: f64 = rng.random_range(0.0..2.0);
            let s2: f64 = s1 + rng.random_range(0.0..1.0);
            let e1 = expected_improvement(
                &Posterior {
                    mean,
                    variance: s1 * s1,
                },
                incumbent,
            );
            let e2 = expected_improvement(
                &Posterior {
                    mean,
                    variance: s2 * s2,
                },
                incumbent,
            );
            assert!(e2 >= e1 - 1e-12, "EI not nondecreasing in sigma");
            assert!(e1 >= 0.0);

            // σ → 0 limit.
            let e_tiny = expected_improvement(
                &Posterior {
                    mean,
                    variance: 1e-18,
                },
                incumbent,
            );
            assert!((e_tiny - (incumbent - mean).max(0.0)).abs() <= 1e-6);
        }
    }

    fn toy_setup(
        db_size: usize,
        train: usize,
        dim: usize,
        seed: u64,
    ) -> (crate::latent::CodebookModel, Vec<EvaluatedTriple>) {
        let db = expr::expression_database(db_size, 4, seed);
        let model = build_codebook(&db, dim, seed).unwrap();
        let triples: Vec<EvaluatedTriple> = (0..train)
            .map(|i| {
                let x = model.database()[i].clone();
                let z = model.encode(&x);
                let y = expr::structure_objective(&x);
                EvaluatedTriple::new(z, x, y)
            })
            .collect();
        (model, triples)
    }

    #[test]
    fn selected_ei_close_to_grid_maximum_on_2d_toy() {
        let (model, triples) = toy_setup(60, 6, 2, 3);
        let gp = GpModel::with_params(
            &triples,
            KernelMode::LatentOnly,
            MaternParams::unit(2),
            1e-4,
            0.0,
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let incumbent = triples.iter().map(|t| t.y).fold(f64::INFINITY, f64::min);
        let cfg = AcqConfig {
            duplicate_penalty: false,
            ..AcqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sel = optimize_acquisition(&gp, &model, incumbent, &HashSet::new(), &cfg, &mut rng)
            .unwrap();

        // Dense grid oracle over the same expanded box.
        let bounds = model.latent_bounds();
        let expanded: Vec<(f64, f64)> = bounds
            .iter()
            .map(|&(lo, hi)| (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)))
            .collect();
        let mut grid_max = 0.0f64;
        for i in 0..100 {
            for j in 0..100 {
                let z = vec![
                    expanded[0].0 + (expanded[0].1 - expanded[0].0) * i as f64 / 99.0,
                    expanded[1].0 + (expanded[1].1 - expanded[1].0) * j as f64 / 99.0,
                ];
                let x = model.decode(&z);
                let p = gp.posterior_predict(&z, x).unwrap();
                grid_max = grid_max.max(expected_improvement(&p, incumbent));
            }
        }
        assert!(
            sel.ei >= 0.95 * grid_max,
            "selected EI {} below 95% of grid max {grid_max}",
            sel.ei
        );
    }

    #[test]
    fn single_point_gp_selection_is_valid() {
        let (model, triples) = toy_setup(40, 1, 2, 11);
        let gp = GpModel::with_params(
            &triples,
            KernelMode::LatentOnly,
            MaternParams::unit(2),
            1e-4,
            0.0,
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let cfg = AcqConfig {
            duplicate_penalty: false,
            ..AcqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sel =
            optimize_acquisition(&gp, &model, triples[0].y, &HashSet::new(), &cfg, &mut rng)
                .unwrap();
        assert!(sel.ei >= 0.0);
        assert!(sel.db_index < model.len());
        // The optimizer's pick can be no worse than the incumbent location.
        let p_inc = gp.posterior_predict(&triples[0].z, &triples[0].x).unwrap();
        assert!(sel.ei >= expected_improvement(&p_inc, triples[0].y) - 1e-12);
    }

    #[test]
    fn exhausted_codebook_reports_duplicates_with_fallback() {
        let db = vec![Structure::from_tokens(["v"])];
        let model = build_codebook(&db, 2, 1).unwrap();
        let x = model.database()[0].clone();
        let z = model.encode(&x);
        let triples = vec![EvaluatedTriple::new(z, x, 1.0)];
        let gp = GpModel::with_params(
            &triples,
            KernelMode::LatentOnly,
            MaternParams::unit(2),
            1e-4,
            0.0,
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let evaluated: HashSet<usize> = [0].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        match optimize_acquisition(&gp, &model, 1.0, &evaluated, &AcqConfig::default(), &mut rng)
        {
            Err(AcqError::AllCandidatesDuplicate { fallback }) => {
                assert_eq!(fallback.db_index, 0);
            }
            other => panic!("expected AllCandidatesDuplicate, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_penalty_skips_evaluated_structures() {
        let (model, triples) = toy_setup(30, 5, 2, 19);
        let gp = GpModel::with_params(
            &triples,
            KernelMode::StructureCoupled,
            MaternParams::unit(2),
            1e-4,
            0.0,
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let evaluated: HashSet<usize> = (0..5).collect();
        let incumbent = triples.iter().map(|t| t.y).fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sel = optimize_acquisition(
            &gp,
            &model,
            incumbent,
            &evaluated,
            &AcqConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(!evaluated.contains(&sel.db_index));
    }

    #[test]
    fn seeded_selection_is_deterministic() {
        let (model, triples) = toy_setup(50, 5, 3, 29);
        let gp = GpModel::with_params(
            &triples,
            KernelMode::StructureCoupled,
            MaternParams::unit(3),
            1e-4,
            0.0,
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let incumbent = triples.iter().map(|t| t.y).fold(f64::INFINITY, f64::min);
        let evaluated: HashSet<usize> = (0..5).collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            optimize_acquisition(
                &gp,
                &model,
                incumbent,
                &evaluated,
                &AcqConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
