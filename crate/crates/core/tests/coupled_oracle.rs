//! The coupled-kernel feature map against dense linear-algebra oracles that
//! use an independent inverse routine (nalgebra) instead of the production
//! Cholesky solves.

use ladder_core::coupled::{CoupledKernelState, EvaluatedTriple, StructuredKernelSpec};
use ladder_core::expr;
use ladder_core::kernels::MaternParams;
use ladder_core::latent::Structure;
use ladder_core::linalg::sym_eigendecomp;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn expr_triples(m: usize, d: usize, seed: u64) -> Vec<EvaluatedTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    while out.len() < m {
        let tree = expr::generate_expression(&mut rng, 5);
        let x = Structure::from_tokens(tree.tokens().iter().map(|t| t.as_str()));
        if !seen.insert(x.clone()) {
            continue;
        }
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        out.push(EvaluatedTriple::new(z, x, expr::objective(&tree)));
    }
    out
}

fn random_candidate(d: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Structure) {
    let tree = expr::generate_expression(rng, 4);
    let x = Structure::from_tokens(tree.tokens().iter().map(|t| t.as_str()));
    let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    (z, x)
}

/// `(K + jitter I)^{-1}` through nalgebra's LU inverse.
fn dense_inverse(state: &CoupledKernelState) -> DMatrix<f64> {
    let m = state.m();
    let k = DMatrix::from_fn(m, m, |i, j| {
        state.struct_gram().get(i, j) + if i == j { state.jitter_used() } else { 0.0 }
    });
    k.try_inverse().expect("jittered K must be invertible")
}

/// `V = U Σ^{1/2}` with the implementation's eigenbasis convention.
fn scaled_eigvecs(state: &CoupledKernelState) -> DMatrix<f64> {
    let m = state.m();
    let eig = sym_eigendecomp(state.latent_gram()).unwrap();
    DMatrix::from_fn(m, m, |i, k| eig.eigvecs.get(i, k) * eig.eigvals[k].sqrt())
}

#[test]
fn feature_map_matches_dense_inverse_route() {
    let triples = expr_triples(12, 3, 1);
    let state = CoupledKernelState::fit(
        &triples,
        MaternParams::unit(3),
        StructuredKernelSpec::default(),
    )
    .unwrap();
    let k_inv = dense_inverse(&state);
    let v = scaled_eigvecs(&state);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (z, x) = random_candidate(3, &mut rng);
        let k_z = nalgebra::DVector::from_vec(state.kernel_vector(&x).unwrap());
        let oracle = v.transpose() * &k_inv * &k_z;
        let got = state.feature_map(&z, &x).unwrap();
        for i in 0..state.m() {
            assert!(
                (got[i] - oracle[i]).abs() <= 1e-8,
                "feature {i}: {} vs oracle {}",
                got[i],
                oracle[i]
            );
        }
    }
}

#[test]
fn quadratic_form_route_matches_feature_route() {
    // The kernel as an explicit quadratic form k_z^T (K^{-1} L K^{-1}) k_z'
    // must agree with the feature-map dot product.
    let triples = expr_triples(10, 4, 3);
    let state = CoupledKernelState::fit(
        &triples,
        MaternParams::unit(4),
        StructuredKernelSpec::default(),
    )
    .unwrap();
    let m = state.m();
    let k_inv = dense_inverse(&state);
    let l = DMatrix::from_fn(m, m, |i, j| state.latent_gram().get(i, j));
    let coupling = &k_inv * &l * &k_inv;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (za, xa) = random_candidate(4, &mut rng);
        let (zb, xb) = random_candidate(4, &mut rng);
        let ka = nalgebra::DVector::from_vec(state.kernel_vector(&xa).unwrap());
        let kb = nalgebra::DVector::from_vec(state.kernel_vector(&xb).unwrap());
        let oracle = (ka.transpose() * &coupling * &kb)[(0, 0)];
        let got = state.coupled_kernel(&za, &xa, &zb, &xb).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "quadratic form {oracle} vs feature route {got}"
        );
    }
}

#[test]
fn coupled_gram_minimum_eigenvalue_via_independent_solver() {
    let triples = expr_triples(9, 3, 5);
    let state = CoupledKernelState::fit(
        &triples,
        MaternParams::unit(3),
        StructuredKernelSpec::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cands: Vec<(Vec<f64>, Structure)> =
        (0..24).map(|_| random_candidate(3, &mut rng)).collect();
    let gram = state.coupled_gram(&cands).unwrap();
    let n = gram.n();
    let dense = DMatrix::from_fn(n, n, |i, j| gram.get(i, j));
    let eig = nalgebra::SymmetricEigen::new(dense);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        min >= -1e-6 * gram.trace().abs(),
        "min eigenvalue {min} below tolerance"
    );
}

#[test]
fn training_reduction_against_dense_oracle() {
    // K (K+εI)^{-1} L (K+εI)^{-1} K computed densely must match the
    // implementation's coupled Gram on the training set.
    let triples = expr_triples(8, 3, 7);
    let state = CoupledKernelState::fit(
        &triples,
        MaternParams::unit(3),
        StructuredKernelSpec::default(),
    )
    .unwrap();
    let m = state.m();
    let k = DMatrix::from_fn(m, m, |i, j| state.struct_gram().get(i, j));
    let l = DMatrix::from_fn(m, m, |i, j| state.latent_gram().get(i, j));
    let k_inv = dense_inverse(&state);
    let dense = &k * &k_inv * &l * &k_inv * &k;

    let cands: Vec<(Vec<f64>, Structure)> = triples
        .iter()
        .map(|t| (t.z.clone(), t.x.clone()))
        .collect();
    let gram = state.coupled_gram(&cands).unwrap();
    for i in 0..m {
        for j in 0..m {
            assert!(
                (gram.get(i, j) - dense[(i, j)]).abs() <= 1e-8,
                "({i},{j}): {} vs dense {}",
                gram.get(i, j),
                dense[(i, j)]
            );
        }
    }
}
