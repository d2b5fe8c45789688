//! The target system `H = Re H + i Im H`, kept as two real symmetric maps.
//!
//! Every downstream formula (stiffness, damping, bounds) consumes the two
//! parts separately, so the complex product is only ever derived.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::setup::SpectralBounds;

/// Default cap on the number of unknowns accepted by [`SplitOperator::assemble_dense`].
pub const DENSE_CAP: usize = 20_000;

/// A real linear map `y = A x` on `R^N`.
///
/// Implementations must not mutate internal state during `apply`, so one
/// operator can be shared between threads writing to distinct outputs.
pub trait RealOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// Overwrites `y` with `A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// The diagonal entries, if the operator is diagonal.
    fn diagonal(&self) -> Option<&[f64]> {
        None
    }

    /// Half bandwidth of the matrix in the natural ordering, if known.
    fn bandwidth(&self) -> Option<usize> {
        None
    }
}

/// Diagonal operator `y_i = d_i x_i`.
#[derive(Debug, Clone)]
pub struct Diagonal(pub Vec<f64>);

impl Diagonal {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl RealOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, xi), di) in y.iter_mut().zip(x).zip(&self.0) {
            *yi = di * xi;
        }
    }

    fn diagonal(&self) -> Option<&[f64]> {
        Some(&self.0)
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(0)
    }
}

/// Dense real matrix, used for small instances and randomized tests.
#[derive(Debug, Clone)]
pub struct DenseReal(pub DMatrix<f64>);

impl RealOperator for DenseReal {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for (i, yi) in y.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.0[(i, j)] * xj;
            }
            *yi = acc;
        }
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(self.0.nrows().saturating_sub(1))
    }
}

/// A complex vector stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len(), "real and imaginary parts differ in length");
        Self { re, im }
    }

    pub fn from_real(re: Vec<f64>) -> Self {
        let n = re.len();
        Self { re, im: vec![0.0; n] }
    }

    pub fn from_complex(v: &[Complex64]) -> Self {
        Self {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `<self, other> = sum conj(self_i) other_i`.
    pub fn dot(&self, other: &Self) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.len() {
            let (a, b) = (self.re[i], self.im[i]);
            let (c, d) = (other.re[i], other.im[i]);
            re += a * c + b * d;
            im += a * d - b * c;
        }
        Complex64::new(re, im)
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: Complex64, x: &Self) {
        for i in 0..self.len() {
            let (xr, xi) = (x.re[i], x.im[i]);
            self.re[i] += a.re * xr - a.im * xi;
            self.im[i] += a.re * xi + a.im * xr;
        }
    }

    pub fn scale(&mut self, a: Complex64) {
        for i in 0..self.len() {
            let (r, m) = (self.re[i], self.im[i]);
            self.re[i] = a.re * r - a.im * m;
            self.im[i] = a.re * m + a.im * r;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

/// `H` as the pair `(Re H, Im H)` of real symmetric operators.
#[derive(Clone)]
pub struct SplitOperator {
    re: Arc<dyn RealOperator>,
    im: Arc<dyn RealOperator>,
    bounds_hint: Option<SpectralBounds>,
}

/// A linear map on complex vectors: the system matrix or a preconditioner.
pub trait ComplexLinearMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply_map(&self, x: &ComplexVector) -> Result<ComplexVector>;

    /// Simulated periods per application, for time-domain maps.
    fn periods_per_application(&self) -> usize {
        0
    }

    /// False for maps that are only real-linear, so `A(i x) != i A(x)`.
    fn is_complex_linear(&self) -> bool {
        true
    }
}

impl ComplexLinearMap for SplitOperator {
    fn dim(&self) -> usize {
        SplitOperator::dim(self)
    }

    fn apply_map(&self, x: &ComplexVector) -> Result<ComplexVector> {
        self.apply(x)
    }
}

/// Dense complex matrix as a linear map.
#[derive(Debug, Clone)]
pub struct DenseComplex(pub DMatrix<Complex64>);

impl ComplexLinearMap for DenseComplex {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_map(&self, x: &ComplexVector) -> Result<ComplexVector> {
        if x.len() != self.0.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.0.ncols(),
                got: x.len(),
            });
        }
        let v = nalgebra::DVector::from_vec(x.to_complex());
        Ok(ComplexVector::from_complex((&self.0 * v).as_slice()))
    }
}

impl std::fmt::Debug for SplitOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitOperator")
            .field("dim", &self.dim())
            .field("im_diagonal", &self.im_diagonal())
            .field("bounds_hint", &self.bounds_hint)
            .finish()
    }
}

impl SplitOperator {
    pub fn new(re: Arc<dyn RealOperator>, im: Arc<dyn RealOperator>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::DimensionMismatch {
                expected: re.dim(),
                got: im.dim(),
            });
        }
        Ok(Self {
            re,
            im,
            bounds_hint: None,
        })
    }

    /// Builds `H` from dense real and imaginary parts. A diagonal `Im H` is
    /// detected and stored as such.
    pub fn from_dense(re: DMatrix<f64>, im: DMatrix<f64>) -> Result<Self> {
        let n = im.nrows();
        let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || im[(i, j)] == 0.0));
        let im_op: Arc<dyn RealOperator> = if is_diag {
            Arc::new(Diagonal(im.diagonal().iter().copied().collect()))
        } else {
            Arc::new(DenseReal(im))
        };
        Self::new(Arc::new(DenseReal(re)), im_op)
    }

    pub fn identity(n: usize) -> Self {
        Self::new(
            Arc::new(Diagonal(vec![1.0; n])),
            Arc::new(Diagonal::zeros(n)),
        )
        .expect("same dimension")
    }

    pub fn with_bounds(mut self, bounds: SpectralBounds) -> Self {
        self.bounds_hint = Some(bounds);
        self
    }

    pub fn bounds_hint(&self) -> Option<&SpectralBounds> {
        self.bounds_hint.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.re.dim()
    }

    pub fn re(&self) -> &dyn RealOperator {
        self.re.as_ref()
    }

    pub fn im(&self) -> &dyn RealOperator {
        self.im.as_ref()
    }

    pub fn re_arc(&self) -> Arc<dyn RealOperator> {
        Arc::clone(&self.re)
    }

    pub fn im_arc(&self) -> Arc<dyn RealOperator> {
        Arc::clone(&self.im)
    }

    pub fn im_diagonal(&self) -> bool {
        self.im.diagonal().is_some()
    }

    pub fn im_diag_values(&self) -> Option<&[f64]> {
        self.im.diagonal()
    }

    pub fn bandwidth(&self) -> Option<usize> {
        Some(self.re.bandwidth()?.max(self.im.bandwidth()?))
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// `y = H x` with `(Re H + i Im H)(x_re + i x_im)`.
    pub fn apply(&self, x: &ComplexVector) -> Result<ComplexVector> {
        self.check_dim(x.len())?;
        let mut y = ComplexVector::zeros(self.dim());
        let mut scratch = vec![0.0; self.dim()];
        self.apply_into(x, &mut y, &mut scratch);
        Ok(y)
    }

    /// Non-allocating variant of [`apply`](Self::apply); all buffers have length `dim`.
    pub fn apply_into(&self, x: &ComplexVector, y: &mut ComplexVector, scratch: &mut [f64]) {
        self.re.apply(&x.re, &mut y.re);
        self.im.apply(&x.im, scratch);
        for (a, b) in y.re.iter_mut().zip(scratch.iter()) {
            *a -= b;
        }
        self.re.apply(&x.im, &mut y.im);
        self.im.apply(&x.re, scratch);
        for (a, b) in y.im.iter_mut().zip(scratch.iter()) {
            *a += b;
        }
    }

    /// `||F - H U||_2`.
    pub fn residual_norm(&self, u: &ComplexVector, f: &ComplexVector) -> Result<f64> {
        self.check_dim(f.len())?;
        let hu = self.apply(u)?;
        Ok(f.sub(&hu).norm())
    }

    /// Dense complex matrix whose column `j` is `H e_j`.
    pub fn assemble_dense(&self) -> Result<DMatrix<Complex64>> {
        self.assemble_dense_capped(DENSE_CAP)
    }

    pub fn assemble_dense_capped(&self, cap: usize) -> Result<DMatrix<Complex64>> {
        let n = self.dim();
        if n > cap {
            return Err(Error::DenseCapExceeded { dim: n, cap });
        }
        let (re, im) = self.assemble_dense_parts_capped(cap)?;
        Ok(DMatrix::from_fn(n, n, |i, j| Complex64::new(re[(i, j)], im[(i, j)])))
    }

    /// Dense `(Re H, Im H)`.
    pub fn assemble_dense_parts(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.assemble_dense_parts_capped(DENSE_CAP)
    }

    fn assemble_dense_parts_capped(&self, cap: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        if n > cap {
            return Err(Error::DenseCapExceeded { dim: n, cap });
        }
        Ok((assemble_real(self.re(), n), assemble_real(self.im(), n)))
    }
}

/// Dense matrix of a real operator, column by column.
pub fn assemble_real(op: &dyn RealOperator, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> ComplexVector {
        ComplexVector::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identity_split_is_identity() {
        let h = SplitOperator::identity(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 5);
        assert_eq!(h.apply(&x).unwrap(), x);
    }

    #[test]
    fn pure_imaginary_identity_multiplies_by_i() {
        let h = SplitOperator::new(Arc::new(Diagonal::zeros(3)), Arc::new(Diagonal(vec![1.0; 3])))
            .unwrap();
        let x = ComplexVector::from_real(vec![1.0; 3]);
        let y = h.apply(&x).unwrap();
        assert_eq!(y.re, vec![0.0; 3]);
        assert_eq!(y.im, vec![1.0; 3]);
    }

    #[test]
    fn two_by_two_matches_dense_complex_product() {
        let re = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let im = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        let h = SplitOperator::from_dense(re.clone(), im.clone()).unwrap();
        assert!(h.im_diagonal());
        let x = ComplexVector::from_real(vec![1.0, 1.0]);
        let y = h.apply(&x).unwrap();
        // (2 + 0.5i) - 1 = 1 + 0.5i ; -1 + 2 = 1
        assert_eq!(y.get(0), Complex64::new(1.0, 0.5));
        assert_eq!(y.get(1), Complex64::new(1.0, 0.0));
        let dense = h.assemble_dense().unwrap();
        let xc = nalgebra::DVector::from_vec(x.to_complex());
        let yd = &dense * xc;
        for i in 0..2 {
            assert!((yd[i] - y.get(i)).norm() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let h = SplitOperator::identity(3);
        assert!(matches!(
            h.apply(&ComplexVector::zeros(4)),
            Err(Error::DimensionMismatch { expected: 3, got: 4 })
        ));
        assert!(h
            .residual_norm(&ComplexVector::zeros(3), &ComplexVector::zeros(2))
            .is_err());
    }

    #[test]
    fn residual_norm_trivial_cases() {
        let h = SplitOperator::identity(4);
        let z = ComplexVector::zeros(4);
        assert_eq!(h.residual_norm(&z, &z).unwrap(), 0.0);
        let u = ComplexVector::new(vec![1.0, 2.0, 0.0, -1.0], vec![0.0, 1.0, 1.0, 0.0]);
        assert!((h.residual_norm(&u, &z).unwrap() - u.norm()).abs() < 1e-15);
    }

    #[test]
    fn dense_cap_refuses_large_operators() {
        let h = SplitOperator::identity(30);
        assert!(matches!(
            h.assemble_dense_capped(20),
            Err(Error::DenseCapExceeded { dim: 30, cap: 20 })
        ));
    }

    #[test]
    fn assembled_identity_is_complex_identity() {
        let h = SplitOperator::identity(3);
        let d = h.assemble_dense().unwrap();
        assert_eq!(d, DMatrix::<Complex64>::identity(3, 3));
    }

    #[test]
    fn apply_is_linear_and_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 12;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let re = &a + a.transpose();
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let im = &b * b.transpose();
        let h = SplitOperator::from_dense(re, im).unwrap();
        assert!(!h.im_diagonal());
        let x = random_vec(&mut rng, n);
        let y = random_vec(&mut rng, n);
        let (ca, cb) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let mut comb = x.clone();
        comb.scale(ca);
        comb.axpy(cb, &y);
        let lhs = h.apply(&comb).unwrap();
        let mut rhs = h.apply(&x).unwrap();
        rhs.scale(ca);
        rhs.axpy(cb, &h.apply(&y).unwrap());
        assert!(lhs.sub(&rhs).norm() <= 1e-12 * lhs.norm());

        let dense = h.assemble_dense().unwrap();
        let yd = &dense * nalgebra::DVector::from_vec(x.to_complex());
        let ya = h.apply(&x).unwrap();
        let diff: f64 = (0..n).map(|i| (yd[i] - ya.get(i)).norm_sqr()).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * ya.norm());
        // symmetric (not Hermitian) in both parts
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense[(i, j)], dense[(j, i)]);
            }
        }
    }
}
