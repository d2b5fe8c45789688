//! Spectral bounds, integrator choice, and the `(omega, dt)` selection rules.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{RealOperator, SplitOperator};

/// Default safety factor applied to the CFL bound on `omega * dt`.
pub const DEFAULT_SAFETY: f64 = 0.95;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITER: usize = 5000;
/// Relative outward margin applied to iterative eigenvalue estimates.
pub const ESTIMATE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Certified bounds supplied by the discretization.
    Analytic,
    /// Power-iteration estimates widened by [`ESTIMATE_MARGIN`].
    Iterative,
}

/// Bounds on the extreme eigenvalues of `Re H` and `Im H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub lambda_min_re: f64,
    pub lambda_max_re: f64,
    pub lambda_max_im: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Frequency adapted central differences; needs diagonal `Im H`.
    Acd,
    /// Frequency adapted backward differences; any PSD `Im H`.
    Abd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    AnalyticHint,
    Iterative,
}

/// Time-stepping parameters of the adapted leapfrog scheme.
///
/// With `A = Re H + omega^2 I` and `B = Im H / omega` the stepping matrices
/// are `K = k_scale A - bd_k_correction B` and `L = l_scale B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub scheme: SchemeKind,
    pub omega: f64,
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
    pub steps_per_period: usize,
    pub k_scale: f64,
    pub l_scale: f64,
    pub bd_k_correction: f64,
}

/// The adaptation scalars `alpha = x^2 / (4 sin^2(x/2))` and
/// `beta = x / sin(x)` for `x = omega * dt`.
pub fn alpha_beta(omega_dt: f64) -> Result<(f64, f64)> {
    if !(omega_dt > 0.0 && omega_dt < PI) {
        return Err(Error::OmegaDtOutOfRange(omega_dt));
    }
    let s = (0.5 * omega_dt).sin();
    let alpha = omega_dt * omega_dt / (4.0 * s * s);
    let beta = omega_dt / omega_dt.sin();
    Ok((alpha, beta))
}

impl SchemeParams {
    /// Parameters for a period of exactly `steps_per_period` steps.
    pub fn from_steps(scheme: SchemeKind, omega: f64, steps_per_period: usize) -> Result<Self> {
        if steps_per_period == 0 {
            return Err(Error::OmegaDtOutOfRange(f64::INFINITY));
        }
        let omega_dt = 2.0 * PI / steps_per_period as f64;
        let mut p = Self::from_omega_dt(scheme, omega, omega_dt)?;
        p.steps_per_period = steps_per_period;
        Ok(p)
    }

    /// Parameters for an arbitrary `omega * dt` in `(0, pi)`. The resulting
    /// `steps_per_period` is rounded and only meaningful when the period is a
    /// whole number of steps.
    pub fn from_omega_dt(scheme: SchemeKind, omega: f64, omega_dt: f64) -> Result<Self> {
        let (alpha, beta) = alpha_beta(omega_dt)?;
        let dt = omega_dt / omega;
        let bd_k_correction = match scheme {
            SchemeKind::Acd => 0.0,
            SchemeKind::Abd => dt * beta * (1.0 - omega_dt.cos()) / alpha,
        };
        Ok(Self {
            scheme,
            omega,
            dt,
            alpha,
            beta,
            steps_per_period: (2.0 * PI / omega_dt).round() as usize,
            k_scale: dt * dt / alpha,
            l_scale: beta * dt / alpha,
            bd_k_correction,
        })
    }

    pub fn omega_dt(&self) -> f64 {
        self.omega * self.dt
    }

    /// Certified eigenvalue ranges of `K`, `L` and the CFL quantity
    /// (`K` for acd, `K + 2L` for abd) implied by `bounds`.
    pub fn stability_margins(&self, bounds: &SpectralBounds) -> StabilityMargins {
        let w2 = self.omega * self.omega;
        let b_max = bounds.lambda_max_im / self.omega;
        let k_min = self.k_scale * (bounds.lambda_min_re + w2) - self.bd_k_correction * b_max;
        let k_max = self.k_scale * (bounds.lambda_max_re + w2);
        let cfl_max = match self.scheme {
            SchemeKind::Acd => k_max,
            SchemeKind::Abd => k_max + (2.0 * self.l_scale - self.bd_k_correction) * b_max,
        };
        StabilityMargins {
            k_min,
            k_max,
            l_max: self.l_scale * b_max,
            cfl_max,
        }
    }

    /// Checks `K >= 0`, `L >= 0` and `4I - K > 0` (acd) or `4I - K - 2L > 0` (abd)
    /// against the given bounds.
    pub fn verify_stability(&self, bounds: &SpectralBounds) -> Result<()> {
        let m = self.stability_margins(bounds);
        let tol = 1e-12 * self.k_scale * (bounds.lambda_min_re.abs() + self.omega * self.omega);
        if m.k_min < -tol {
            return Err(Error::Unstable(format!("K not PSD (lower bound {:e})", m.k_min)));
        }
        if m.cfl_max >= 4.0 {
            return Err(Error::Unstable(format!(
                "CFL quantity reaches {} >= 4",
                m.cfl_max
            )));
        }
        Ok(())
    }
}

/// Eigenvalue ranges implied by a [`SpectralBounds`] for a parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityMargins {
    pub k_min: f64,
    pub k_max: f64,
    pub l_max: f64,
    pub cfl_max: f64,
}

/// `Acd` when `Im H` is diagonal, otherwise `Abd`.
pub fn choose_scheme(h: &SplitOperator) -> SchemeKind {
    if h.im_diagonal() {
        SchemeKind::Acd
    } else {
        SchemeKind::Abd
    }
}

fn round_up_to_multiple_of_4(min_steps: f64) -> usize {
    let quarters = (min_steps / 4.0).ceil().max(1.0) as usize;
    4 * quarters
}

/// `omega = sqrt(-lambda_min(Re H))` and the largest stable `dt` for acd,
/// rounded so a period is a multiple of four steps.
pub fn select_params_acd(bounds: &SpectralBounds, safety: f64) -> Result<SchemeParams> {
    if bounds.lambda_min_re >= 0.0 {
        return Err(Error::DefiniteSystem(bounds.lambda_min_re));
    }
    let omega = (-bounds.lambda_min_re).sqrt();
    let lambda_max_a = bounds.lambda_max_re + omega * omega;
    let arg = omega / lambda_max_a.sqrt();
    if !(lambda_max_a > 0.0) || !(0.0..=1.0).contains(&arg) {
        return Err(Error::ArcsinDomain(arg));
    }
    let omega_dt_max = 2.0 * arg.asin();
    let steps = round_up_to_multiple_of_4(2.0 * PI / (safety * omega_dt_max));
    let params = SchemeParams::from_steps(SchemeKind::Acd, omega, steps)?;
    params.verify_stability(bounds)?;
    Ok(params)
}

/// `omega^2` for the abd scheme at a given `omega * dt`, chosen so `K` stays PSD.
pub fn abd_omega_squared(bounds: &SpectralBounds, omega_dt: f64) -> f64 {
    -bounds.lambda_min_re + (0.5 * omega_dt).tan() * bounds.lambda_max_im
}

/// Left-hand side of the scalar abd CFL condition; the condition is `< 4`.
///
/// The damping term carries the factor `omega * dt` that results from
/// bounding `K + 2L` with `L = beta dt B / alpha`.
pub fn abd_cfl_lhs(bounds: &SpectralBounds, omega_dt: f64) -> f64 {
    let (alpha, beta) = match alpha_beta(omega_dt) {
        Ok(ab) => ab,
        Err(_) => return f64::INFINITY,
    };
    let w2 = abd_omega_squared(bounds, omega_dt);
    omega_dt * omega_dt / alpha * (bounds.lambda_max_re / w2 + 1.0)
        + omega_dt * beta / alpha * (1.0 + omega_dt.cos()) * bounds.lambda_max_im / w2
}

/// Positive root of `(r + 1) x^2 + 2 s x = 4`.
pub fn abd_quadratic_root(r: f64, s: f64) -> f64 {
    let a = r + 1.0;
    (-s + (s * s + 4.0 * a).sqrt()) / a
}

/// Parameter selection for the abd scheme (non-diagonal `Im H`).
pub fn select_params_abd(bounds: &SpectralBounds, safety: f64, refine: bool) -> Result<SchemeParams> {
    if bounds.lambda_min_re >= 0.0 {
        return Err(Error::DefiniteSystem(bounds.lambda_min_re));
    }
    let neg_min = -bounds.lambda_min_re;
    let r = bounds.lambda_max_re / neg_min;
    let s = bounds.lambda_max_im / neg_min;
    if r + 1.0 <= 0.0 {
        return Err(Error::Unstable(format!("r + 1 = {} has no positive root", r + 1.0)));
    }
    let mut x = abd_quadratic_root(r, s).min(PI * (1.0 - 1e-12));
    if refine {
        let (mut lo, mut hi) = (x, PI * (1.0 - 1e-12));
        if abd_cfl_lhs(bounds, hi) < 4.0 {
            lo = hi;
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if abd_cfl_lhs(bounds, mid) < 4.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        x = lo;
    }
    let mut steps = round_up_to_multiple_of_4(2.0 * PI / (safety * x));
    for _ in 0..10 {
        let omega_dt = 2.0 * PI / steps as f64;
        if abd_cfl_lhs(bounds, omega_dt) < 4.0 {
            let omega = abd_omega_squared(bounds, omega_dt).sqrt();
            let params = SchemeParams::from_steps(SchemeKind::Abd, omega, steps)?;
            params.verify_stability(bounds)?;
            return Ok(params);
        }
        steps += 4;
    }
    Err(Error::Unstable(
        "abd CFL condition violated after 10 step reductions".into(),
    ))
}

/// Picks the scheme from `H` and runs the matching selection rule.
pub fn select_params(h: &SplitOperator, bounds: &SpectralBounds, safety: f64) -> Result<SchemeParams> {
    match choose_scheme(h) {
        SchemeKind::Acd => select_params_acd(bounds, safety),
        SchemeKind::Abd => select_params_abd(bounds, safety, false),
    }
}

struct Shifted<'a> {
    op: &'a dyn RealOperator,
    shift: f64,
}

/// Dominant eigenvalue (by magnitude) of `op - shift I` via power iteration
/// with Rayleigh quotients; returns the eigenvalue of `op`.
fn power_iteration(op: &dyn RealOperator, shift: f64, tol: f64, seed: u64) -> Result<f64> {
    let sh = Shifted { op, shift };
    let n = sh.op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut mu = 0.0;
    for _ in 0..POWER_MAX_ITER {
        sh.op.apply(&v, &mut w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= sh.shift * vi;
        }
        mu = dot(&v, &w);
        let nw = dot(&w, &w).sqrt();
        if nw == 0.0 {
            return Ok(sh.shift);
        }
        if (mu - prev).abs() <= tol * mu.abs().max(f64::MIN_POSITIVE) {
            return Ok(mu + sh.shift);
        }
        prev = mu;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITER,
        estimate: mu + sh.shift,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Extreme eigenvalues of a symmetric operator via two power iterations:
/// the dominant one, then the far end through the shift `op - dominant I`.
pub fn extreme_eigenvalues(op: &dyn RealOperator, tol: f64) -> Result<(f64, f64)> {
    let first = power_iteration(op, 0.0, tol, 0x5eed)?;
    let second = power_iteration(op, first, tol, 0x5eed + 1)?;
    Ok((first.min(second), first.max(second)))
}

/// Eigenvalue bounds for `H`, either passed through from the discretization
/// or estimated by power iteration and widened outward.
pub fn estimate_bounds(h: &SplitOperator, mode: BoundsMode, tol: f64) -> Result<SpectralBounds> {
    match mode {
        BoundsMode::AnalyticHint => h.bounds_hint().copied().ok_or_else(|| {
            Error::InvalidModel("no analytic bounds attached to the operator".into())
        }),
        BoundsMode::Iterative => {
            let (lo, hi) = extreme_eigenvalues(h.re(), tol)?;
            let lambda_max_im = match h.im_diag_values() {
                Some(d) => d.iter().copied().fold(0.0, f64::max),
                None => {
                    let m = power_iteration(h.im(), 0.0, tol, 0x5eed + 2)?;
                    (m + ESTIMATE_MARGIN * m.abs()).max(0.0)
                }
            };
            Ok(SpectralBounds {
                lambda_min_re: lo - ESTIMATE_MARGIN * lo.abs(),
                lambda_max_re: hi + ESTIMATE_MARGIN * hi.abs(),
                lambda_max_im,
                provenance: Provenance::Iterative,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Diagonal;
    use std::sync::Arc;

    fn bounds(min: f64, max: f64, im: f64) -> SpectralBounds {
        SpectralBounds {
            lambda_min_re: min,
            lambda_max_re: max,
            lambda_max_im: im,
            provenance: Provenance::Analytic,
        }
    }

    #[test]
    fn alpha_beta_small_argument_limit() {
        let (a, b) = alpha_beta(1e-6).unwrap();
        assert!((a - 1.0).abs() < 1e-9);
        assert!((b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn alpha_beta_reference_values() {
        // 30-digit reference evaluations.
        let (a, b) = alpha_beta(PI / 2.0).unwrap();
        assert!((a - 1.233_700_550_136_169_8).abs() < 1e-14);
        assert!((b - 1.570_796_326_794_896_6).abs() < 1e-14);
        let (a, b) = alpha_beta(PI / 4.0).unwrap();
        assert!((a - 1.053_029_287_545_514_9).abs() < 1e-14);
        assert!((b - 1.110_720_734_539_591_6).abs() < 1e-14);
    }

    #[test]
    fn alpha_beta_rejects_out_of_range() {
        for x in [0.0, -0.1, PI, 4.0, f64::NAN] {
            assert!(alpha_beta(x).is_err(), "{x}");
        }
    }

    #[test]
    fn both_alpha_forms_agree() {
        for i in 1..100 {
            let x = PI * i as f64 / 100.0;
            let (a, _) = alpha_beta(x).unwrap();
            // 2 - 2 cos x cancels for small x, costing about eps / x^2
            let other = x * x / (2.0 - 2.0 * x.cos());
            assert!((a - other).abs() <= 4e-15 * a * (1.0 + 1.0 / (x * x)), "x = {x}");
        }
    }

    #[test]
    fn choose_scheme_follows_diagonality() {
        let n = 3;
        let diag = SplitOperator::identity(n);
        assert_eq!(choose_scheme(&diag), SchemeKind::Acd);
        let dense = SplitOperator::from_dense(
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::from_element(2, 2, 1.0),
        )
        .unwrap();
        assert_eq!(choose_scheme(&dense), SchemeKind::Abd);
    }

    #[test]
    fn acd_six_points_per_wavelength() {
        let h = 0.01;
        let k = 2.0 * PI / 6.0 / h;
        let b = bounds(-k * k, -k * k + 8.0 / (h * h), 0.0);
        let p = select_params_acd(&b, 0.95).unwrap();
        assert!((p.omega - k).abs() < 1e-9 * k);
        assert_eq!(p.steps_per_period, 12);
        let omega_dt_max = 2.0 * (k * h / 8f64.sqrt()).asin();
        assert!((omega_dt_max - 0.758_535_262_080_727_7).abs() < 1e-12);
        assert!((p.omega_dt() - 2.0 * PI / 12.0).abs() < 1e-15);
    }

    #[test]
    fn acd_boundary_case_gives_four_steps() {
        // lambda_max(A) = omega^2 exactly.
        let b = bounds(-4.0, 0.0, 0.0);
        let p = select_params_acd(&b, 0.95).unwrap();
        assert_eq!(p.steps_per_period, 4);
    }

    #[test]
    fn acd_rejects_definite_system() {
        assert!(matches!(
            select_params_acd(&bounds(0.5, 3.0, 0.0), 0.95),
            Err(Error::DefiniteSystem(_))
        ));
        assert!(matches!(
            select_params_acd(&bounds(-1.0, -2.0, 0.0), 0.95),
            Err(Error::ArcsinDomain(_))
        ));
    }

    #[test]
    fn acd_is_monotone_in_lambda_max() {
        let mut last_dt = f64::INFINITY;
        for i in 0..50 {
            let b = bounds(-1.0, 1.0 + i as f64 * 3.7, 0.2);
            let p = select_params_acd(&b, 0.95).unwrap();
            assert!(p.dt <= last_dt);
            assert_eq!(p.steps_per_period % 4, 0);
            last_dt = p.dt;
        }
    }

    #[test]
    fn abd_quadratic_roots() {
        assert!((abd_quadratic_root(1.0, 0.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((abd_quadratic_root(0.0, 1.0) - (5f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn abd_without_damping_matches_acd_omega() {
        let b = bounds(-9.0, 30.0, 0.0);
        let p = select_params_abd(&b, 0.95, false).unwrap();
        assert!((p.omega - 3.0).abs() < 1e-14);
        assert_eq!(p.steps_per_period % 4, 0);
    }

    #[test]
    fn abd_refinement_never_shrinks_the_step() {
        let b = bounds(-2.0, 10.0, 1.5);
        let plain = select_params_abd(&b, 0.95, false).unwrap();
        let refined = select_params_abd(&b, 0.95, true).unwrap();
        assert!(refined.steps_per_period <= plain.steps_per_period);
        assert!(abd_cfl_lhs(&b, refined.omega_dt()) < 4.0);
        refined.verify_stability(&b).unwrap();
    }

    #[test]
    fn iterative_bounds_on_diagonal() {
        let h = SplitOperator::new(
            Arc::new(Diagonal(vec![-4.0, 1.0, 9.0])),
            Arc::new(Diagonal::zeros(3)),
        )
        .unwrap();
        let b = estimate_bounds(&h, BoundsMode::Iterative, 1e-12).unwrap();
        assert!(b.lambda_min_re <= -4.0 && b.lambda_min_re >= -4.0 * 1.0101);
        assert!(b.lambda_max_re >= 9.0 && b.lambda_max_re <= 9.0 * 1.0101);
        assert_eq!(b.lambda_max_im, 0.0);
        assert_eq!(b.provenance, Provenance::Iterative);
    }

    #[test]
    fn analytic_mode_passes_bounds_through() {
        let b = bounds(-1.0, 2.0, 0.5);
        let h = SplitOperator::identity(2).with_bounds(b);
        assert_eq!(estimate_bounds(&h, BoundsMode::AnalyticHint, 1e-8).unwrap(), b);
        assert!(estimate_bounds(&SplitOperator::identity(2), BoundsMode::AnalyticHint, 1e-8).is_err());
    }
}
