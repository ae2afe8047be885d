//! Positive-semidefiniteness of the base kernels' Gram matrices on random
//! input sets, checked through the eigendecomposition's PSD policy.

use ladder_core::expr;
use ladder_core::kernels::{
    expr_fingerprint, fingerprint_dot, matern52, string_kernel, string_kernel_normalized,
    Fingerprint, MaternParams, StringKernelParams,
};
use ladder_core::linalg::{sym_eigendecomp, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_psd(gram: SymMatrix, what: &str) {
    match sym_eigendecomp(&gram) {
        Ok(_) => {}
        Err(e) => panic!("{what} Gram failed the PSD check: {e}"),
    }
}

#[test]
fn matern_gram_is_psd_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &m in &[5usize, 20, 50] {
        let d = 4;
        let params = MaternParams::new(
            (0..d).map(|_| rng.random_range(0.3..2.0)).collect(),
            rng.random_range(0.5..3.0),
        )
        .unwrap();
        let zs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let gram = SymMatrix::from_fn(m, |i, j| matern52(&zs[i], &zs[j], &params).unwrap());
        assert_psd(gram, "Matérn");
    }
}

#[test]
fn string_kernel_gram_is_psd_on_random_expressions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = StringKernelParams::default();
    for &m in &[5usize, 20, 50] {
        // Generated expressions, duplicates allowed: a singular-but-PSD Gram
        // must still pass the clamp policy.
        let seqs: Vec<Vec<String>> = (0..m)
            .map(|_| {
                expr::generate_expression(&mut rng, 4)
                    .tokens()
                    .iter()
                    .map(|t| t.as_str().to_owned())
                    .collect()
            })
            .collect();
        let raw = SymMatrix::from_fn(m, |i, j| string_kernel(&seqs[i], &seqs[j], &p));
        assert_psd(raw, "string kernel");
        let normalized = SymMatrix::from_fn(m, |i, j| {
            string_kernel_normalized(&seqs[i], &seqs[j], &p).unwrap()
        });
        assert_psd(normalized, "normalized string kernel");
    }
}

#[test]
fn fingerprint_gram_is_psd_on_random_bit_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &m in &[5usize, 20, 50] {
        let fps: Vec<Fingerprint> = (0..m)
            .map(|_| {
                let mut fp = Fingerprint::zeros(256);
                for _ in 0..rng.random_range(1..40) {
                    fp.set_bit(rng.random_range(0..256));
                }
                fp
            })
            .collect();
        let gram = SymMatrix::from_fn(m, |i, j| fingerprint_dot(&fps[i], &fps[j]).unwrap());
        assert_psd(gram, "fingerprint");
    }
}

#[test]
fn hashed_fingerprint_gram_is_psd_on_expressions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fps: Vec<Fingerprint> = (0..30)
        .map(|_| {
            let tokens: Vec<String> = expr::generate_expression(&mut rng, 5)
                .tokens()
                .iter()
                .map(|t| t.as_str().to_owned())
                .collect();
            expr_fingerprint(&tokens, 2048, 3)
        })
        .collect();
    let gram = SymMatrix::from_fn(30, |i, j| fingerprint_dot(&fps[i], &fps[j]).unwrap());
    assert_psd(gram, "hashed n-gram fingerprint");
}
