//! Random small instances for checks and tests. All generators are seeded.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::operator::{DenseReal, Diagonal, RealOperator, SplitOperator};
use crate::setup::{Provenance, SpectralBounds};

/// Random orthogonal matrix from the QR factors of a Gaussian-like matrix.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    a.qr().q()
}

/// `Q diag(lambda) Q^T`.
pub fn with_spectrum(q: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    let m = q * d * q.transpose();
    // exact symmetry
    (&m + m.transpose()) * 0.5
}

/// Random PSD matrix of the given rank with eigenvalues in `(0, max]`.
pub fn random_psd<R: Rng>(n: usize, rank: usize, max: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let lambda: Vec<f64> = (0..n)
        .map(|i| if i < rank { rng.gen_range(0.05 * max..max) } else { 0.0 })
        .collect();
    with_spectrum(&q, &lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingRegime {
    /// `L = 0`.
    Undamped,
    /// Diagonal PSD `L` with some zero entries (central recursion).
    Diagonal,
    /// Low-rank dense PSD `L` (backward recursion).
    Dense,
}

/// `(K, L)` with `K, L` PSD and `4I - K - 2L` positive definite, so both
/// stability conditions hold. `K` gets a zero eigenvalue when
/// `singular_k` is set.
pub fn random_stable_kl<R: Rng>(
    n: usize,
    regime: DampingRegime,
    singular_k: bool,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = random_orthogonal(n, rng);
    let kappa: Vec<f64> = (0..n)
        .map(|i| if singular_k && i == 0 { 0.0 } else { rng.gen_range(0.1..3.0) })
        .collect();
    let k = with_spectrum(&q, &kappa);
    let l = match regime {
        DampingRegime::Undamped => DMatrix::zeros(n, n),
        DampingRegime::Diagonal => DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
            if i % 3 == 0 {
                0.0
            } else {
                rng.gen_range(0.0..0.45)
            }
        })),
        DampingRegime::Dense => random_psd(n, (n / 2).max(1), 0.45, rng),
    };
    (k, l)
}

/// Commuting pair sharing eigenvectors: `K = Q diag(kappa) Q^T`,
/// `L = Q diag(ell) Q^T`.
pub fn commuting_kl(q: &DMatrix<f64>, kappa: &[f64], ell: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    (with_spectrum(q, kappa), with_spectrum(q, ell))
}

/// Helmholtz-type `H = Re H + i Im H` with `Re H` indefinite
/// (eigenvalues in `[-1, 3]`, smallest exactly `-1` up to rounding) and
/// `Im H` PSD, diagonal or dense. The attached bounds are exact.
pub fn random_helmholtz<R: Rng>(n: usize, diagonal_im: bool, rng: &mut R) -> Result<SplitOperator> {
    let q = random_orthogonal(n, rng);
    let mut lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
    lambda[0] = -1.0;
    let re = with_spectrum(&q, &lambda);
    let im_op: Arc<dyn RealOperator>;
    let im_max;
    if diagonal_im {
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        im_max = d.iter().copied().fold(0.0, f64::max);
        im_op = Arc::new(Diagonal(d));
    } else {
        let m = random_psd(n, n, 0.5, rng);
        im_max = m.clone().symmetric_eigen().eigenvalues.max();
        im_op = Arc::new(DenseReal(m));
    }
    let eig = re.clone().symmetric_eigen().eigenvalues;
    let bounds = SpectralBounds {
        lambda_min_re: eig.min(),
        lambda_max_re: eig.max(),
        lambda_max_im: im_max,
        provenance: Provenance::Analytic,
    };
    Ok(SplitOperator::new(Arc::new(DenseReal(re)), im_op)?.with_bounds(bounds))
}

/// Dense matrix of a real operator.
pub fn dense_of(op: &dyn RealOperator) -> DMatrix<f64> {
    crate::operator::assemble_real(op, op.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_pairs_meet_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for regime in [DampingRegime::Undamped, DampingRegime::Diagonal, DampingRegime::Dense] {
            let (k, l) = random_stable_kl(8, regime, true, &mut rng);
            let ek = k.clone().symmetric_eigen().eigenvalues;
            let el = l.clone().symmetric_eigen().eigenvalues;
            assert!(ek.min() > -1e-12 && el.min() > -1e-12);
            let cfl = (DMatrix::identity(8, 8) * 4.0 - &k - &l * 2.0).symmetric_eigen().eigenvalues;
            assert!(cfl.min() > 0.0);
        }
    }
}
