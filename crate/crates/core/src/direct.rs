//! Direct solves used as reference solutions: dense LU for small systems and
//! a banded LU with partial pivoting for grid operators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{ComplexVector, SplitOperator, DENSE_CAP};

/// Upper limit on `n * (2 kl + ku + 1)` stored entries for the banded path.
pub const BANDED_STORAGE_CAP: usize = 200_000_000;

/// Solves `H U = F` by dense LU.
pub fn dense_solve(h: &SplitOperator, f: &ComplexVector) -> Result<ComplexVector> {
    let a = h.assemble_dense()?;
    dense_solve_matrix(a, f)
}

pub fn dense_solve_matrix(a: DMatrix<Complex64>, f: &ComplexVector) -> Result<ComplexVector> {
    let b = DVector::from_vec(f.to_complex());
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    Ok(ComplexVector::from_complex(x.as_slice()))
}

/// Banded LU factorization (`kl = ku = bandwidth`) with row pivoting.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; the extra `kl`
/// superdiagonals hold fill-in from pivoting.
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    rows: Vec<Complex64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // j - i + kl in [0, width)
        i * self.width + (j + self.kl - i)
    }

    /// Assembles the band of `H` by probing with `2b + 1` colored vectors and
    /// factors it.
    pub fn factor(h: &SplitOperator) -> Result<Self> {
        let n = h.dim();
        let b = h.bandwidth().unwrap_or(n.saturating_sub(1)).min(n.saturating_sub(1));
        let width = 3 * b + 1;
        if n.saturating_mul(width) > BANDED_STORAGE_CAP {
            return Err(Error::DenseCapExceeded {
                dim: n,
                cap: BANDED_STORAGE_CAP / width.max(1),
            });
        }
        let mut lu = Self {
            n,
            kl: b,
            width,
            rows: vec![Complex64::new(0.0, 0.0); n * width],
            pivots: vec![0; n],
        };
        let colors = 2 * b + 1;
        let mut x = vec![0.0; n];
        let mut yr = vec![0.0; n];
        let mut yi = vec![0.0; n];
        for c in 0..colors.min(n) {
            x.iter_mut().enumerate().for_each(|(j, v)| {
                *v = if j % colors == c { 1.0 } else { 0.0 }
            });
            h.re().apply(&x, &mut yr);
            h.im().apply(&x, &mut yi);
            for j in (c..n).step_by(colors) {
                let lo = j.saturating_sub(b);
                let hi = (j + b).min(n - 1);
                for i in lo..=hi {
                    let k = lu.idx(i, j);
                    lu.rows[k] = Complex64::new(yr[i], yi[i]);
                }
            }
        }
        lu.factorize()?;
        Ok(lu)
    }

    fn factorize(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        let ku_total = 2 * kl;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.rows[self.idx(k, k)].norm();
            for i in k + 1..=last_row {
                let v = self.rows[self.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular);
            }
            self.pivots[k] = p;
            let last_col = (k + ku_total).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.rows.swap(a, b);
                }
            }
            let pivot = self.rows[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let m = self.rows[ik] / pivot;
                self.rows[ik] = m;
                if m == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = self.rows[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.rows[ij] -= m * kj;
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, f: &ComplexVector) -> Result<ComplexVector> {
        let (n, kl) = (self.n, self.kl);
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: f.len(),
            });
        }
        let mut x = f.to_complex();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.rows[self.idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + 2 * kl).min(n - 1) {
                acc -= self.rows[self.idx(k, j)] * x[j];
            }
            x[k] = acc / self.rows[self.idx(k, k)];
        }
        Ok(ComplexVector::from_complex(&x))
    }
}

/// Reference solve: dense LU for small operators without a known bandwidth,
/// banded LU otherwise.
pub fn reference_solve(h: &SplitOperator, f: &ComplexVector) -> Result<ComplexVector> {
    match h.bandwidth() {
        Some(b) if b + 1 < h.dim() => BandedLu::factor(h)?.solve(f),
        _ if h.dim() <= DENSE_CAP => dense_solve(h, f),
        _ => BandedLu::factor(h)?.solve(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_solve_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 15;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let re = &a + a.transpose();
        let im = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0)));
        let h = SplitOperator::from_dense(re, im).unwrap();
        let f = ComplexVector::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let u = dense_solve(&h, &f).unwrap();
        assert!(h.residual_norm(&u, &f).unwrap() <= 1e-10 * f.norm());
    }

    #[test]
    fn banded_matches_dense_on_tridiagonal() {
        use crate::operator::{DenseReal, Diagonal};
        use std::sync::Arc;
        let n = 40;
        let re = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.1 * i as f64 - 1.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        struct Banded(DenseReal, usize);
        impl crate::operator::RealOperator for Banded {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn apply(&self, x: &[f64], y: &mut [f64]) {
                self.0.apply(x, y)
            }
            fn bandwidth(&self) -> Option<usize> {
                Some(self.1)
            }
        }
        let im: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.2 } else { 0.0 }).collect();
        let h = SplitOperator::new(
            Arc::new(Banded(DenseReal(re), 1)),
            Arc::new(Diagonal(im)),
        )
        .unwrap();
        let f = ComplexVector::new(
            (0..n).map(|i| (i as f64).sin()).collect(),
            (0..n).map(|i| (i as f64).cos()).collect(),
        );
        let ub = BandedLu::factor(&h).unwrap().solve(&f).unwrap();
        let ud = dense_solve(&h, &f).unwrap();
        assert!(ub.sub(&ud).norm() <= 1e-12 * ud.norm());
    }
}
