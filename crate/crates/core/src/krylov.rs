//! Restarted GMRES with left (default) or right preconditioning.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{ComplexLinearMap, ComplexVector};

/// Orthogonality loss that triggers a second Gram-Schmidt pass.
const REORTH_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmresConfig {
    pub restart: usize,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub record_true_error: bool,
    /// Solve `H P y = b`, `U = P y` instead of `P H U = P b`.
    pub right_preconditioning: bool,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            restart: 10,
            max_outer: 20,
            rel_tol: 1e-5,
            record_true_error: true,
            right_preconditioning: false,
        }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart == 0 || self.max_outer == 0 {
            return Err(Error::InvalidWindow("restart and max_outer must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidWindow(format!("rel_tol {} outside (0, 1)", self.rel_tol)));
        }
        Ok(())
    }
}

/// Per-iteration record; entry 0 is the initial guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cumulative_periods: usize,
    /// Relative residual of the system GMRES minimizes.
    pub precond_residual: f64,
    /// `||b - H U|| / ||b||`.
    pub true_residual: f64,
    /// `||U - U_ref|| / ||U_ref||` when a reference is supplied.
    pub true_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    /// Total Arnoldi steps.
    pub iterations: usize,
    /// Restart cycles started.
    pub outer_iterations: usize,
    pub preconditioner_applications: usize,
    pub total_simulated_periods: usize,
    pub wall_time: f64,
    pub history: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn residual_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.precond_residual).collect()
    }

    pub fn true_residual_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.true_residual).collect()
    }

    pub fn true_error_history(&self) -> Option<Vec<f64>> {
        self.history.iter().map(|r| r.true_error).collect()
    }

    pub fn final_true_residual(&self) -> f64 {
        self.history.last().map(|r| r.true_residual).unwrap_or(f64::NAN)
    }

    /// One row per iteration.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let io = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record([
            "iteration",
            "cumulative_periods",
            "precond_residual_rel",
            "true_residual_rel",
            "true_error_rel",
        ])
        .map_err(io)?;
        for r in &self.history {
            w.write_record([
                r.iteration.to_string(),
                r.cumulative_periods.to_string(),
                format!("{:e}", r.precond_residual),
                format!("{:e}", r.true_residual),
                r.true_error.map(|e| format!("{e:e}")).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts applications of the wrapped map.
struct Counted<'a> {
    map: Option<&'a dyn ComplexLinearMap>,
    count: usize,
}

impl Counted<'_> {
    fn apply(&mut self, x: &ComplexVector) -> Result<ComplexVector> {
        match self.map {
            Some(m) => {
                self.count += 1;
                m.apply_map(x)
            }
            None => Ok(x.clone()),
        }
    }

    fn periods(&self) -> usize {
        self.count * self.map.map(|m| m.periods_per_application()).unwrap_or(0)
    }
}

/// `(c, s, r)` with `[c s; -conj(s) c] [a; b] = [r; 0]`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64, Complex64) {
    let na = a.norm();
    let r = a.norm().hypot(b.norm());
    if r == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, b.conj() / b.norm(), Complex64::new(b.norm(), 0.0));
    }
    let phase = a / na;
    (na / r, phase * b.conj() / r, phase * r)
}

/// Solves `H U = b` by restarted GMRES, left preconditioned with `precond`
/// unless `cfg.right_preconditioning` is set.
pub fn gmres(
    op: &dyn ComplexLinearMap,
    precond: Option<&dyn ComplexLinearMap>,
    b: &ComplexVector,
    cfg: &GmresConfig,
) -> Result<(ComplexVector, SolveReport)> {
    gmres_with_reference(op, precond, b, cfg, None)
}

/// As [`gmres`], also recording the error against `reference`.
pub fn gmres_with_reference(
    op: &dyn ComplexLinearMap,
    precond: Option<&dyn ComplexLinearMap>,
    b: &ComplexVector,
    cfg: &GmresConfig,
    reference: Option<&ComplexVector>,
) -> Result<(ComplexVector, SolveReport)> {
    cfg.validate()?;
    let n = op.dim();
    for d in [b.len(), precond.map(|p| p.dim()).unwrap_or(n)] {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, got: d });
        }
    }
    let start = Instant::now();
    let right = cfg.right_preconditioning;
    // with a real-linear left preconditioner the Arnoldi estimate can drift
    // from the true residual, so convergence is confirmed explicitly
    let confirm = !right && precond.is_some_and(|p| !p.is_complex_linear());
    let mut pc = Counted { map: precond, count: 0 };
    let b_norm = b.norm();
    let ref_norm = reference.map(|r| r.norm());
    let error_of = |x: &ComplexVector| -> Option<f64> {
        if !cfg.record_true_error {
            return None;
        }
        reference.map(|r| x.sub(r).norm() / ref_norm.unwrap().max(f64::MIN_POSITIVE))
    };
    let mut x = ComplexVector::zeros(n);
    let mut report = SolveReport {
        converged: false,
        iterations: 0,
        outer_iterations: 0,
        preconditioner_applications: 0,
        total_simulated_periods: 0,
        wall_time: 0.0,
        history: Vec::new(),
    };
    if b_norm == 0.0 {
        report.converged = true;
        report.history.push(IterationRecord {
            iteration: 0,
            cumulative_periods: 0,
            precond_residual: 0.0,
            true_residual: 0.0,
            true_error: error_of(&x),
        });
        return Ok((x, report));
    }

    // initial residual of the minimized system; x = 0
    let mut r = if right { b.clone() } else { pc.apply(b)? };
    if !r.is_finite() {
        return Err(Error::NanInIterate(0));
    }
    let r0_norm = r.norm();
    if r0_norm == 0.0 {
        return Err(Error::Singular);
    }
    report.history.push(IterationRecord {
        iteration: 0,
        cumulative_periods: pc.periods(),
        precond_residual: 1.0,
        true_residual: 1.0,
        true_error: error_of(&x),
    });
    let tol = cfg.rel_tol * r0_norm;
    let m = cfg.restart;
    let zero = Complex64::new(0.0, 0.0);

    'outer: for _ in 0..cfg.max_outer {
        report.outer_iterations += 1;
        let beta = r.norm();
        if beta <= tol {
            report.converged = true;
            break;
        }
        let mut v: Vec<ComplexVector> = Vec::with_capacity(m + 1);
        let mut v0 = r.clone();
        v0.scale(Complex64::new(1.0 / beta, 0.0));
        v.push(v0);
        // hcol[j] holds column j of the Hessenberg matrix after rotation
        let mut hcols: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut rots: Vec<(f64, Complex64)> = Vec::with_capacity(m);
        let mut g = vec![zero; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k_used = 0;
        let mut est = beta;
        let mut breakdown = false;

        for j in 0..m {
            report.iterations += 1;
            let it = report.iterations;
            let mut w = if right {
                let z = pc.apply(&v[j])?;
                op.apply_map(&z)?
            } else {
                let hv = op.apply_map(&v[j])?;
                pc.apply(&hv)?
            };
            if !w.is_finite() {
                return Err(Error::NanInIterate(it));
            }
            let w_norm0 = w.norm();
            let mut h = vec![zero; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let c = vi.dot(&w);
                h[i] = c;
                w.axpy(-c, vi);
            }
            let wn = w.norm();
            let loss = v
                .iter()
                .map(|vi| vi.dot(&w).norm())
                .fold(0.0, f64::max)
                / wn.max(f64::MIN_POSITIVE);
            if loss > REORTH_THRESHOLD {
                for (i, vi) in v.iter().enumerate() {
                    let c = vi.dot(&w);
                    h[i] += c;
                    w.axpy(-c, vi);
                }
            }
            let hn = w.norm();
            h[j + 1] = Complex64::new(hn, 0.0);
            for (i, &(c, s)) in rots.iter().enumerate() {
                let (a, bb) = (h[i], h[i + 1]);
                h[i] = c * a + s * bb;
                h[i + 1] = -s.conj() * a + c * bb;
            }
            let (c, s, rr) = givens(h[j], h[j + 1]);
            h[j] = rr;
            h[j + 1] = zero;
            rots.push((c, s));
            g[j + 1] = -s.conj() * g[j];
            g[j] = c * g[j];
            hcols.push(h);
            k_used = j + 1;
            est = g[j + 1].norm();
            breakdown = hn <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);

            // iterate after this step, for the history
            let y = back_substitute(&hcols, &g, k_used)?;
            let xk = combine(&x, &v, &y, if right { Some(&mut pc) } else { None })?;
            let res = op.apply_map(&xk)?;
            let true_res = b.sub(&res).norm() / b_norm;
            report.history.push(IterationRecord {
                iteration: it,
                cumulative_periods: pc.periods(),
                precond_residual: est / r0_norm,
                true_residual: true_res,
                true_error: error_of(&xk),
            });
            if est <= tol || breakdown {
                x = xk;
                if est <= tol && !confirm {
                    report.converged = true;
                    break 'outer;
                }
                break;
            }
            if j + 1 == m {
                x = xk;
                break;
            }
            let mut vn = w;
            vn.scale(Complex64::new(1.0 / hn, 0.0));
            v.push(vn);
        }
        let _ = k_used;
        // explicit residual for the next cycle
        let hx = op.apply_map(&x)?;
        let rb = b.sub(&hx);
        r = if right { rb } else { pc.apply(&rb)? };
        if !r.is_finite() {
            return Err(Error::NanInIterate(report.iterations));
        }
        if breakdown && r.norm() > tol {
            log::warn!(
                "GMRES breakdown at iteration {} with residual {:e}",
                report.iterations,
                r.norm() / r0_norm
            );
        }
        if r.norm() <= tol {
            report.converged = true;
            break;
        }
        let _ = est;
    }
    report.preconditioner_applications = pc.count;
    report.total_simulated_periods = pc.periods();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

fn back_substitute(hcols: &[Vec<Complex64>], g: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    let mut y = vec![Complex64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for (jj, yj) in y.iter().enumerate().take(k).skip(i + 1) {
            acc -= hcols[jj][i] * yj;
        }
        let d = hcols[i][i];
        if d.norm() == 0.0 {
            return Err(Error::Singular);
        }
        y[i] = acc / d;
    }
    Ok(y)
}

/// `x + V y`, or `x + P V y` for right preconditioning.
fn combine(
    x: &ComplexVector,
    v: &[ComplexVector],
    y: &[Complex64],
    right: Option<&mut Counted<'_>>,
) -> Result<ComplexVector> {
    let mut d = ComplexVector::zeros(x.len());
    for (vi, &yi) in v.iter().zip(y) {
        d.axpy(yi, vi);
    }
    let d = match right {
        Some(pc) if pc.map.is_some() => pc.apply(&d)?,
        _ => d,
    };
    let mut out = x.clone();
    out.axpy(Complex64::new(1.0, 0.0), &d);
    Ok(out)
}

/// GMRES without preconditioning, as a comparison baseline.
pub fn unpreconditioned_baseline(
    op: &dyn ComplexLinearMap,
    b: &ComplexVector,
    cfg: &GmresConfig,
) -> Result<(ComplexVector, SolveReport)> {
    gmres(op, None, b, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::dense_solve_matrix;
    use crate::operator::{DenseComplex, SplitOperator};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> ComplexVector {
        ComplexVector::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_vec(&mut rng, 9);
        let (x, rep) = gmres(&SplitOperator::identity(9), None, &b, &GmresConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(x.sub(&b).norm() < 1e-14);
    }

    #[test]
    fn dense_system_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let base = Complex64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            if i == j {
                base + Complex64::new(3.0, 1.0)
            } else {
                base
            }
        });
        let b = random_vec(&mut rng, n);
        let cfg = GmresConfig {
            max_outer: 50,
            ..Default::default()
        };
        let (x, rep) = gmres(&DenseComplex(a.clone()), None, &b, &cfg).unwrap();
        assert!(rep.converged);
        let xd = dense_solve_matrix(a, &b).unwrap();
        assert!(x.sub(&xd).norm() <= 1e-4 * xd.norm());
        assert!(rep.final_true_residual() <= 1e-5 * 1.0001);
    }

    #[test]
    fn exact_inverse_preconditioner_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(rng.gen_range(-1.0..1.0), if i == j { 2.0 } else { 0.0 })
        });
        let inv = a.clone().try_inverse().unwrap();
        let b = random_vec(&mut rng, n);
        for right in [false, true] {
            let cfg = GmresConfig {
                rel_tol: 1e-12,
                right_preconditioning: right,
                ..Default::default()
            };
            let (x, rep) = gmres(&DenseComplex(a.clone()), Some(&DenseComplex(inv.clone())), &b, &cfg).unwrap();
            assert!(rep.converged, "right = {right}");
            assert_eq!(rep.iterations, 1);
            let r = DenseComplex(a.clone()).apply_map(&x).unwrap();
            assert!(b.sub(&r).norm() <= 1e-10 * b.norm());
        }
    }

    #[test]
    fn residuals_monotone_within_cycles() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let v = if i == j {
                2.0 + 0.1 * i as f64
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            };
            Complex64::new(v, 0.0)
        });
        let b = ComplexVector::from_real((0..n).map(|i| (i as f64).sin()).collect());
        let cfg = GmresConfig {
            restart: 5,
            max_outer: 40,
            ..Default::default()
        };
        let (_, rep) = gmres(&DenseComplex(a), None, &b, &cfg).unwrap();
        assert!(rep.converged);
        let h = rep.residual_history();
        for w in h.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nan_operator_is_reported() {
        struct Bad;
        impl ComplexLinearMap for Bad {
            fn dim(&self) -> usize {
                3
            }
            fn apply_map(&self, _x: &ComplexVector) -> Result<ComplexVector> {
                Ok(ComplexVector::new(vec![f64::NAN; 3], vec![0.0; 3]))
            }
        }
        let b = ComplexVector::from_real(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            gmres(&Bad, None, &b, &GmresConfig::default()),
            Err(Error::NanInIterate(1))
        ));
    }

    #[test]
    fn csv_report_has_one_row_per_iteration() {
        let b = ComplexVector::from_real(vec![1.0, 0.5]);
        let (_, rep) = gmres(&SplitOperator::identity(2), None, &b, &GmresConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        rep.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + rep.history.len());
    }
}
