//! Windowed time-domain approximate solution operator `S_T`.
//!
//! The Helmholtz solution is approximated by running the damped wave
//! problem for `T` whole periods with time-harmonic forcing switched on by
//! a sine-square window, then reading off the field.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leapfrog::{advance, build_kernel, run, KernelCoeffs, LeapfrogState};
use crate::operator::{ComplexLinearMap, ComplexVector, SplitOperator};
use crate::setup::SchemeParams;

/// Default taper fraction.
pub const DEFAULT_RHO: f64 = 0.25;

/// `chi_1(s / rho)` with `chi_1(s) = sin^2(pi s / 2)` on `[0, 1]`, 0 below
/// and 1 above.
pub fn window_value(rho: f64, s: f64) -> f64 {
    let t = (s / rho).clamp(0.0, 1.0);
    let v = (0.5 * PI * t).sin();
    v * v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub rho: f64,
    /// Simulated time in whole periods.
    pub periods: usize,
}

impl WindowSpec {
    pub fn new(rho: f64, periods: usize) -> Self {
        Self { rho, periods }
    }

    /// The "no taper" proxy: forcing ramps up over a single period.
    pub fn untapered(periods: usize) -> Self {
        Self {
            rho: 1.0 / periods as f64,
            periods,
        }
    }

    pub fn n_steps(&self, steps_per_period: usize) -> usize {
        self.periods * steps_per_period
    }

    pub fn validate(&self, steps_per_period: usize, mode: PrecondMode) -> Result<()> {
        if self.periods == 0 {
            return Err(Error::InvalidWindow("T must be at least one period".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidWindow(format!("rho = {} outside (0, 1]", self.rho)));
        }
        if self.rho * (self.n_steps(steps_per_period) as f64) < 1.0 {
            return Err(Error::InvalidWindow("taper shorter than one time step".into()));
        }
        if mode == PrecondMode::RealExtraction {
            let cap = 1.0 - 0.25 / self.periods as f64;
            if self.rho > cap + 1e-12 {
                return Err(Error::InvalidWindow(format!(
                    "rho = {} exceeds {cap} so the window does not reach 1 a quarter period before the end",
                    self.rho
                )));
            }
            if steps_per_period % 4 != 0 {
                return Err(Error::InvalidWindow(format!(
                    "{steps_per_period} steps per period is not a multiple of 4"
                )));
            }
        }
        Ok(())
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::new(DEFAULT_RHO, 50)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondMode {
    /// Two real runs carrying the real and imaginary parts of `e^{i w t} F`.
    Complex,
    /// One real run; the real part is read at the final time and the
    /// imaginary part a quarter period earlier.
    RealExtraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecondConfig {
    pub window: WindowSpec,
    pub mode: PrecondMode,
}

impl Default for PrecondConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            mode: PrecondMode::RealExtraction,
        }
    }
}

/// `(cos, sin)` of `2 pi n / s`, reduced mod `s` to keep the phase exact.
fn phase(n: usize, s: usize) -> (f64, f64) {
    let th = 2.0 * PI * (n % s) as f64 / s as f64;
    (th.cos(), th.sin())
}

fn check_len(kernel: &KernelCoeffs, f: &ComplexVector) -> Result<()> {
    if f.len() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: f.len(),
        });
    }
    Ok(())
}

/// `S_T F` with complex forcing `chi_rho(n / N) e^{i 2 pi n / s} F`.
/// `T` is whole periods so the final phase factor is 1.
pub fn apply_st_complex(
    kernel: &KernelCoeffs,
    params: &SchemeParams,
    window: &WindowSpec,
    f: &ComplexVector,
) -> Result<ComplexVector> {
    check_len(kernel, f)?;
    let s = params.steps_per_period;
    window.validate(s, PrecondMode::Complex)?;
    let n_steps = window.n_steps(s);
    let nf = n_steps as f64;
    let rho = window.rho;
    let part = |imag: bool| -> Result<Vec<f64>> {
        let mut forcing = |n: usize, out: &mut [f64]| -> bool {
            let chi = window_value(rho, n as f64 / nf);
            if chi == 0.0 {
                return false;
            }
            let (c, sn) = phase(n, s);
            let (a, b) = if imag { (chi * sn, chi * c) } else { (chi * c, -chi * sn) };
            for ((o, re), im) in out.iter_mut().zip(&f.re).zip(&f.im) {
                *o = a * re + b * im;
            }
            true
        };
        Ok(run(kernel, &mut forcing, n_steps, params.dt, &mut [])?.u_curr)
    };
    let (re, im) = rayon::join(|| part(false), || part(true));
    let u = ComplexVector::new(re?, im?);
    if let Some(i) = (0..u.len()).find(|&i| !(u.re[i].is_finite() && u.im[i].is_finite())) {
        return Err(Error::Unstable(format!("non-finite field at index {i}")));
    }
    Ok(u)
}

/// `S_T F` from one real run with forcing
/// `chi_rho(n / N) (cos(w t) Re F - sin(w t) Im F)`:
/// `Re U = u` at `T` periods and `Im U = u` at `T - 1/4` periods.
pub fn apply_st_real(
    kernel: &KernelCoeffs,
    params: &SchemeParams,
    window: &WindowSpec,
    f: &ComplexVector,
) -> Result<ComplexVector> {
    check_len(kernel, f)?;
    let s = params.steps_per_period;
    window.validate(s, PrecondMode::RealExtraction)?;
    let n_steps = window.n_steps(s);
    let nf = n_steps as f64;
    let rho = window.rho;
    let mut forcing = |n: usize, out: &mut [f64]| -> bool {
        let chi = window_value(rho, n as f64 / nf);
        if chi == 0.0 {
            return false;
        }
        let (c, sn) = phase(n, s);
        for ((o, re), im) in out.iter_mut().zip(&f.re).zip(&f.im) {
            *o = chi * (c * re - sn * im);
        }
        true
    };
    let mut state = LeapfrogState::zeros(kernel.dim(), params.dt);
    advance(kernel, &mut state, &mut forcing, n_steps - s / 4, &mut [])?;
    let im = state.u_curr.clone();
    advance(kernel, &mut state, &mut forcing, s / 4, &mut [])?;
    let u = ComplexVector::new(state.u_curr, im);
    if !u.is_finite() {
        return Err(Error::Unstable("non-finite field in real run".into()));
    }
    Ok(u)
}

/// `S_T` as a fixed linear map for GMRES.
#[derive(Debug)]
pub struct TimeDomainPreconditioner {
    kernel: KernelCoeffs,
    params: SchemeParams,
    config: PrecondConfig,
    applications: AtomicUsize,
}

impl TimeDomainPreconditioner {
    pub fn new(kernel: KernelCoeffs, params: SchemeParams, config: PrecondConfig) -> Result<Self> {
        config.window.validate(params.steps_per_period, config.mode)?;
        Ok(Self {
            kernel,
            params,
            config,
            applications: AtomicUsize::new(0),
        })
    }

    /// Builds the adapted kernel for `h` and wraps it.
    pub fn for_operator(h: &SplitOperator, params: SchemeParams, config: PrecondConfig) -> Result<Self> {
        Self::new(build_kernel(h, &params, true)?, params, config)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn config(&self) -> &PrecondConfig {
        &self.config
    }

    pub fn kernel(&self) -> &KernelCoeffs {
        &self.kernel
    }

    pub fn applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    /// Simulated periods so far.
    pub fn simulated_periods(&self) -> usize {
        self.applications() * self.config.window.periods
    }

    pub fn reset_count(&self) {
        self.applications.store(0, Ordering::Relaxed);
    }
}

impl ComplexLinearMap for TimeDomainPreconditioner {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn apply_map(&self, x: &ComplexVector) -> Result<ComplexVector> {
        self.applications.fetch_add(1, Ordering::Relaxed);
        match self.config.mode {
            PrecondMode::Complex => apply_st_complex(&self.kernel, &self.params, &self.config.window, x),
            PrecondMode::RealExtraction => apply_st_real(&self.kernel, &self.params, &self.config.window, x),
        }
    }

    fn periods_per_application(&self) -> usize {
        self.config.window.periods
    }

    /// The real two-time extraction is exact only in the time-harmonic
    /// limit; at finite `T` it commutes with multiplication by `i` only up
    /// to the transient.
    fn is_complex_linear(&self) -> bool {
        self.config.mode == PrecondMode::Complex
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{DenseReal, Diagonal};
    use crate::setup::{estimate_bounds, select_params, BoundsMode, DEFAULT_SAFETY};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[test]
    fn window_values() {
        assert!((window_value(0.25, 0.125) - 0.5).abs() < 1e-15);
        assert_eq!(window_value(0.25, 0.0), 0.0);
        assert_eq!(window_value(0.25, -1.0), 0.0);
        for s in [0.25, 0.3, 1.0, 2.0] {
            assert_eq!(window_value(0.25, s), 1.0);
        }
    }

    #[test]
    fn window_validation() {
        assert!(WindowSpec::new(0.25, 10).validate(12, PrecondMode::RealExtraction).is_ok());
        assert!(WindowSpec::new(1.0, 10).validate(12, PrecondMode::RealExtraction).is_err());
        assert!(WindowSpec::new(1.0, 10).validate(12, PrecondMode::Complex).is_ok());
        assert!(WindowSpec::new(0.25, 10).validate(10, PrecondMode::RealExtraction).is_err());
        assert!(WindowSpec::new(0.0, 10).validate(12, PrecondMode::Complex).is_err());
        assert!(WindowSpec::new(0.25, 0).validate(12, PrecondMode::Complex).is_err());
        assert!(WindowSpec::untapered(40).validate(12, PrecondMode::RealExtraction).is_ok());
    }

    fn small_system() -> SplitOperator {
        let n = 6;
        let re = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 - 0.5 * i as f64
            } else if i.abs_diff(j) == 1 {
                -0.4
            } else {
                0.0
            }
        });
        SplitOperator::new(
            Arc::new(DenseReal(re)),
            Arc::new(Diagonal((0..n).map(|i| 0.2 + 0.05 * i as f64).collect())),
        )
        .unwrap()
    }

    #[test]
    fn zero_in_zero_out_and_finite() {
        let h = small_system();
        let b = estimate_bounds(&h, BoundsMode::Iterative, 1e-10).unwrap();
        let p = select_params(&h, &b, DEFAULT_SAFETY).unwrap();
        let pc = TimeDomainPreconditioner::for_operator(&h, p, PrecondConfig::default()).unwrap();
        let z = pc.apply_map(&ComplexVector::zeros(6)).unwrap();
        assert_eq!(z.norm(), 0.0);
        assert_eq!(pc.applications(), 1);
        assert_eq!(pc.simulated_periods(), 50);
    }
}
