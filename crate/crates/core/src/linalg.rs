//! Dense symmetric linear algebra shared by the kernel and GP code:
//! Cholesky factorization with an escalating diagonal jitter, a cyclic-Jacobi
//! symmetric eigendecomposition with a deterministic sign convention, and
//! triangular solves.
//!
//! Everything here is a pure function of its inputs; matrices are small
//! (hundreds of rows at most), so clarity and exactness win over speed.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (largest jitter tried: {jitter_tried:e})")]
    NotPositiveDefinite { jitter_tried: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below -{threshold:e}")]
    NotPsd { eigenvalue: f64, threshold: f64 },
    #[error("zero pivot at row {index} in triangular solve")]
    ZeroPivot { index: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("entries[{i}][{j}] != entries[{j}][{i}]: matrix is not symmetric as stored")]
    NotSymmetric { i: usize, j: usize },
}

// ---------------------------------------------------------------------------
// Dense matrix
// ---------------------------------------------------------------------------

/// Minimal dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `A^T x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "t_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, row) in self.data.chunks_exact(self.cols).enumerate() {
            let xi = x[i];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    /// `A B`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + aik * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Symmetric matrix
// ---------------------------------------------------------------------------

/// Dense symmetric matrix; symmetry holds exactly as stored.
///
/// Construction through [`SymMatrix::from_fn`] evaluates the generator only
/// for `i <= j` and mirrors the result, so the invariant cannot be broken by
/// a generator that is only symmetric up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>, // full row-major storage
}

impl SymMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1, "SymMatrix requires n >= 1");
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    /// Builds from full row-major entries, rejecting any exact asymmetry.
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        assert_eq!(data.len(), n * n, "entry count must be n*n");
        for i in 0..n {
            for j in (i + 1)..n {
                if data[i * n + j].to_bits() != data[j * n + i].to_bits() {
                    return Err(LinalgError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mean_diag(&self) -> f64 {
        self.trace() / self.n as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        self.data.chunks_exact(self.n).map(|row| dot(row, x)).collect()
    }

    pub fn to_mat(&self) -> Mat {
        Mat {
            rows: self.n,
            cols: self.n,
            data: self.data.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Cholesky with jitter escalation
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor `G` with `G G^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>, // row-major, zero above the diagonal
}

/// Number of ×10 jitter escalations tried after the first attempt.
const MAX_JITTER_ESCALATIONS: u32 = 6;

/// Relative scale of the default jitter: `1e-8 · mean(diag)`.
const DEFAULT_JITTER_SCALE: f64 = 1e-8;

/// Factors `A + jitter I` as `G G^T` with `G` lower triangular.
///
/// The first attempt uses `base_jitter` as given; on failure the jitter
/// escalates ×10 per attempt starting from `max(base_jitter, 1e-8·mean(diag))`,
/// up to [`MAX_JITTER_ESCALATIONS`] escalations. Returns the factor together
/// with the jitter that succeeded. A failure after the full schedule signals
/// a degenerate Gram matrix that the caller must surface.
pub fn cholesky_psd(
    a: &SymMatrix,
    base_jitter: f64,
) -> Result<(CholeskyFactor, f64), LinalgError> {
    assert!(base_jitter >= 0.0, "base_jitter must be nonnegative");
    let mut floor = DEFAULT_JITTER_SCALE * a.mean_diag().abs();
    if floor <= 0.0 {
        floor = DEFAULT_JITTER_SCALE;
    }
    let step0 = if base_jitter > 0.0 { base_jitter } else { floor };

    let mut jitter = base_jitter;
    for attempt in 0..=MAX_JITTER_ESCALATIONS {
        if let Some(factor) = try_cholesky(a, jitter) {
            return Ok((factor, jitter));
        }
        jitter = step0 * 10f64.powi(attempt as i32);
    }
    Err(LinalgError::NotPositiveDefinite {
        jitter_tried: step0 * 10f64.powi(MAX_JITTER_ESCALATIONS as i32 - 1),
    })
}

fn try_cholesky(a: &SymMatrix, jitter: f64) -> Option<CholeskyFactor> {
    let n = a.n();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j) + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                g[i * n + i] = s.sqrt();
            } else {
                g[i * n + j] = s / g[j * n + j];
            }
        }
    }
    Some(CholeskyFactor { n, data: g })
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn check_pivots(&self) -> Result<(), LinalgError> {
        for i in 0..self.n {
            let d = self.get(i, i);
            if d == 0.0 || !d.is_normal() {
                return Err(LinalgError::ZeroPivot { index: i });
            }
        }
        Ok(())
    }

    /// Solves `G x = b` by forward substitution.
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        self.check_pivots()?;
        let mut x = b.to_vec();
        for i in 0..self.n {
            let row = &self.data[i * self.n..i * self.n + i];
            let s = dot(row, &x[..i]);
            x[i] = (x[i] - s) / self.get(i, i);
        }
        Ok(x)
    }

    /// Solves `G^T x = b` by back substitution.
    pub fn back_solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        self.check_pivots()?;
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..self.n {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
        Ok(x)
    }

    /// Solves `(G G^T) x = b`, i.e. applies `A^{-1}` for the factored matrix.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.back_solve(&self.forward_solve(b)?)
    }

    /// Solves `(G G^T) X = B` column by column.
    pub fn solve_mat(&self, b: &Mat) -> Result<Mat, LinalgError> {
        assert_eq!(b.rows(), self.n, "rhs row count mismatch");
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.col(j))?;
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }

    /// `log det(G G^T) = 2 Σ log g_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.get(i, i).ln()).sum()
    }
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Orthonormal eigenvectors (columns of `eigvecs`) with eigenvalues sorted
/// descending. Produced by [`sym_eigendecomp`], which clamps small negative
/// eigenvalues to exactly zero, or [`sym_eigen_raw`], which leaves them as
/// computed.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigvecs: Mat,
    pub eigvals: Vec<f64>,
}

impl EigenDecomp {
    /// Reconstructs `U Σ U^T`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.eigvals.len();
        Mat::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.eigvecs.get(i, k) * self.eigvals[k] * self.eigvecs.get(j, k))
                .sum()
        })
    }
}

/// Negative eigenvalues above `-1e-10·trace` are rounding noise and get
/// clamped; anything below signals a broken kernel.
const PSD_CLAMP_SCALE: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Eigendecomposition without any PSD policy: eigenvalues exactly as the
/// rotations left them, sorted descending, deterministic eigenvector signs
/// (largest-magnitude component of each vector is nonnegative).
pub fn sym_eigen_raw(a: &SymMatrix) -> EigenDecomp {
    let n = a.n();
    let mut w = a.data.clone();
    let mut v = Mat::identity(n);
    let frob = a.frobenius_norm();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += w[i * n + j] * w[i * n + j];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of the working matrix.
                for k in 0..n {
                    let wkp = w[k * n + p];
                    let wkq = w[k * n + q];
                    w[k * n + p] = c * wkp - s * wkq;
                    w[k * n + q] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[p * n + k];
                    let wqk = w[q * n + k];
                    w[p * n + k] = c * wpk - s * wqk;
                    w[q * n + k] = s * wpk + c * wqk;
                }
                // Accumulate the rotation into the eigenvector matrix.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        w[j * n + j]
            .partial_cmp(&w[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut eigvals = Vec::with_capacity(n);
    let mut eigvecs = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigvals.push(w[src * n + src]);
        // Sign convention: largest-magnitude component nonnegative.
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for k in 0..n {
            let val = v.get(k, src);
            if val.abs() > max_abs {
                max_abs = val.abs();
                sign = if val < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for k in 0..n {
            eigvecs.set(k, dst, sign * v.get(k, src));
        }
    }
    EigenDecomp { eigvecs, eigvals }
}

/// Eigendecomposition of a PSD matrix: negative eigenvalues within
/// `-1e-10·trace` are clamped to exactly zero, anything lower errors.
pub fn sym_eigendecomp(a: &SymMatrix) -> Result<EigenDecomp, LinalgError> {
    let mut decomp = sym_eigen_raw(a);
    let threshold = PSD_CLAMP_SCALE * a.trace().abs();
    for v in &mut decomp.eigvals {
        if *v < -threshold {
            return Err(LinalgError::NotPsd {
                eigenvalue: *v,
                threshold,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(decomp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymMatrix::from_fn(n, |i, j| raw[i * n + j])
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        // B B^T + n·I is safely positive definite.
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymMatrix::from_fn(n, |i, j| {
            let mut s = if i == j { n as f64 } else { 0.0 };
            for k in 0..n {
                s += b[i * n + k] * b[j * n + k];
            }
            s
        })
    }

    #[test]
    fn cholesky_identity_no_jitter() {
        let (g, jitter) = cholesky_psd(&SymMatrix::identity(3), 0.0).unwrap();
        assert_eq!(jitter, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(g.get(i, j), expect);
            }
        }
    }

    #[test]
    fn cholesky_hand_expanded_2x2() {
        // [[4,2],[2,3]] factors as [[2,0],[1,sqrt(2)]].
        let a = SymMatrix::from_raw(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let (g, jitter) = cholesky_psd(&a, 0.0).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((g.get(0, 0) - 2.0).abs() < 1e-14);
        assert!((g.get(1, 0) - 1.0).abs() < 1e-14);
        assert!((g.get(1, 1) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_rank_one_needs_jitter() {
        // ones(3)·ones(3)^T is exactly singular; jitter must rescue it.
        let a = SymMatrix::from_fn(3, |_, _| 1.0);
        let (_, jitter) = cholesky_psd(&a, 1e-8).unwrap();
        assert!(jitter >= 1e-8);
    }

    #[test]
    fn cholesky_rejects_negative_definite() {
        let a = SymMatrix::from_fn(2, |i, j| if i == j { -1.0 } else { 0.0 });
        // Even escalated jitter (~1e-2 at most here) cannot rescue -1 diagonal.
        match cholesky_psd(&a, 0.0) {
            Err(LinalgError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn solve_round_trips_spd_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 5, 17] {
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (g, _) = cholesky_psd(&a, 0.0).unwrap();
            let x = g.solve(&b).unwrap();
            let r = a.matvec(&x);
            let resid: f64 = r
                .iter()
                .zip(&b)
                .map(|(ri, bi)| (ri - bi) * (ri - bi))
                .sum::<f64>()
                .sqrt();
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(resid <= 1e-8 * bnorm.max(1.0), "residual {resid} too large");
        }
    }

    #[test]
    fn forward_solve_identity_returns_rhs() {
        let (g, _) = cholesky_psd(&SymMatrix::identity(4), 0.0).unwrap();
        let b = vec![1.0, -2.0, 3.5, 0.25];
        assert_eq!(g.forward_solve(&b).unwrap(), b);
    }

    #[test]
    fn solving_against_own_matrix_gives_identity() {
        let a = SymMatrix::from_raw(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let (g, _) = cholesky_psd(&a, 0.0).unwrap();
        let x = g.solve_mat(&a.to_mat()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((x.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let g = CholeskyFactor {
            n: 2,
            data: vec![1.0, 0.0, 0.5, 0.0],
        };
        match g.forward_solve(&[1.0, 1.0]) {
            Err(LinalgError::ZeroPivot { index: 1 }) => {}
            other => panic!("expected ZeroPivot at 1, got {other:?}"),
        }
    }

    #[test]
    fn eigendecomp_diagonal_input() {
        let a = SymMatrix::from_raw(2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let d = sym_eigendecomp(&a).unwrap();
        assert_eq!(d.eigvals, vec![3.0, 1.0]);
        assert_eq!(d.eigvecs.get(0, 0), 1.0);
        assert_eq!(d.eigvecs.get(1, 1), 1.0);
    }

    #[test]
    fn eigendecomp_2x2_hand_solved() {
        // [[2,1],[1,2]]: eigenvalues 3 and 1 with eigenvectors (1,1)/√2, (1,-1)/√2.
        let a = SymMatrix::from_raw(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let d = sym_eigendecomp(&a).unwrap();
        assert!((d.eigvals[0] - 3.0).abs() < 1e-12);
        assert!((d.eigvals[1] - 1.0).abs() < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert!((d.eigvecs.get(0, 0) - s).abs() < 1e-12);
        assert!((d.eigvecs.get(1, 0) - s).abs() < 1e-12);
        // Sign convention: the largest-magnitude component is nonnegative.
        assert!((d.eigvecs.get(0, 1).abs() - s).abs() < 1e-12);
        assert!(d.eigvecs.get(0, 1) * d.eigvecs.get(1, 1) < 0.0);
    }

    #[test]
    fn eigendecomp_identity() {
        let d = sym_eigendecomp(&SymMatrix::identity(4)).unwrap();
        assert_eq!(d.eigvals, vec![1.0; 4]);
    }

    #[test]
    fn eigendecomp_rejects_clearly_negative() {
        let a = SymMatrix::from_raw(2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        match sym_eigendecomp(&a) {
            Err(LinalgError::NotPsd { .. }) => {}
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn eigendecomp_clamps_rounding_noise_to_zero() {
        let a = SymMatrix::from_fn(3, |_, _| 1.0); // rank one, eigenvalues {3, 0, 0}
        let d = sym_eigendecomp(&a).unwrap();
        assert!((d.eigvals[0] - 3.0).abs() < 1e-12);
        assert_eq!(d.eigvals[1], 0.0);
        assert_eq!(d.eigvals[2], 0.0);
    }

    #[test]
    fn eigendecomp_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [3usize, 20, 80, 200] {
            let a = random_sym(n, &mut rng);
            let d = sym_eigen_raw(&a);
            let rec = d.reconstruct();
            let mut err = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let e = rec.get(i, j) - a.get(i, j);
                    err += e * e;
                }
            }
            let rel = err.sqrt() / a.frobenius_norm();
            assert!(rel <= 1e-7, "reconstruction error {rel} at n={n}");

            // U^T U = I to 1e-8.
            for i in 0..n.min(12) {
                for j in 0..n.min(12) {
                    let g = dot(&d.eigvecs.col(i), &d.eigvecs.col(j));
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() <= 1e-8, "U^TU[{i}][{j}] = {g}");
                }
            }
        }
    }

    #[test]
    fn eigendecomp_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_sym(30, &mut rng);
        let d1 = sym_eigen_raw(&a);
        let d2 = sym_eigen_raw(&a);
        assert_eq!(d1.eigvals, d2.eigvals);
        assert_eq!(d1.eigvecs, d2.eigvecs);
    }

    #[test]
    fn eigenvalues_sorted_descending() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_sym(25, &mut rng);
        let d = sym_eigen_raw(&a);
        for w in d.eigvals.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}
