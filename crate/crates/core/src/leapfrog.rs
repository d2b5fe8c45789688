//! Damped leapfrog time stepping.
//!
//! All four integrators (cd, bd, acd, abd) share the recursion
//!
//! ```text
//! central:  (I + L/2) u_{n+1} = (2I - K) u_n - (I - L/2) u_{n-1} + g f_n
//! backward:           u_{n+1} = (2I - K - L) u_n - (I - L) u_{n-1} + g f_n
//! ```
//!
//! and differ only in how `K`, `L` and `g` are scaled. A kernel stores
//! `K = k_scale (S + shift I) - k_damp M` and `L = l_scale M` where `S` is the
//! stiffness base and `M` the damping base, so a Helmholtz kernel never has
//! to materialize `K`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::{Diagonal, RealOperator, SplitOperator};
use crate::setup::{SchemeKind, SchemeParams};

const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recursion {
    Central,
    Backward,
}

/// Coefficients of one leapfrog integrator.
#[derive(Clone)]
pub struct KernelCoeffs {
    stiffness: Arc<dyn RealOperator>,
    shift: f64,
    k_scale: f64,
    damping: Option<Arc<dyn RealOperator>>,
    k_damp: f64,
    l_scale: f64,
    /// `1 / (1 + L_ii / 2)` for the central recursion.
    d_inv: Option<Vec<f64>>,
    /// `L_ii / 2` for the central recursion.
    half_l: Option<Vec<f64>>,
    recursion: Recursion,
    g_scale: f64,
}

impl std::fmt::Debug for KernelCoeffs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelCoeffs")
            .field("dim", &self.dim())
            .field("recursion", &self.recursion)
            .field("shift", &self.shift)
            .field("k_scale", &self.k_scale)
            .field("k_damp", &self.k_damp)
            .field("l_scale", &self.l_scale)
            .field("g_scale", &self.g_scale)
            .finish()
    }
}

/// Builds the stepping kernel for `H` with `A = Re H + omega^2 I` and
/// `B = Im H / omega`.
///
/// With `adapted = true` the scalings are `K = dt^2/alpha A` (minus the
/// backward-difference correction for abd), `L = beta dt/alpha B` and
/// `g = dt^2/alpha`; with `adapted = false` they are the plain
/// `K = dt^2 A`, `L = dt B`, `g = dt^2`.
pub fn build_kernel(h: &SplitOperator, params: &SchemeParams, adapted: bool) -> Result<KernelCoeffs> {
    let recursion = match params.scheme {
        SchemeKind::Acd => {
            if !h.im_diagonal() {
                return Err(Error::SchemeMismatch(
                    "central differences need a diagonal Im H; use abd".into(),
                ));
            }
            Recursion::Central
        }
        SchemeKind::Abd => Recursion::Backward,
    };
    let omega = params.omega;
    let dt = params.dt;
    let (k_scale, l_scale, k_corr, g_scale) = if adapted {
        (params.k_scale, params.l_scale, params.bd_k_correction, params.k_scale)
    } else {
        (dt * dt, dt, 0.0, dt * dt)
    };
    KernelCoeffs::new(
        h.re_arc(),
        omega * omega,
        k_scale,
        Some(h.im_arc()),
        k_corr / omega,
        l_scale / omega,
        recursion,
        g_scale,
    )
}

impl KernelCoeffs {
    /// General constructor; see the module docs for the meaning of each
    /// coefficient.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        stiffness: Arc<dyn RealOperator>,
        shift: f64,
        k_scale: f64,
        damping: Option<Arc<dyn RealOperator>>,
        k_damp: f64,
        l_scale: f64,
        recursion: Recursion,
        g_scale: f64,
    ) -> Result<Self> {
        let n = stiffness.dim();
        if let Some(m) = &damping {
            if m.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.dim(),
                });
            }
        }
        let (d_inv, half_l) = match recursion {
            Recursion::Central => {
                let diag: Vec<f64> = match &damping {
                    None => vec![0.0; n],
                    Some(m) => m
                        .diagonal()
                        .ok_or_else(|| {
                            Error::SchemeMismatch(
                                "central recursion requires a diagonal damping term".into(),
                            )
                        })?
                        .to_vec(),
                };
                if k_damp != 0.0 {
                    return Err(Error::SchemeMismatch(
                        "central recursion takes no damping correction in K".into(),
                    ));
                }
                let half_l: Vec<f64> = diag.iter().map(|m| 0.5 * l_scale * m).collect();
                let d_inv = half_l.iter().map(|hl| 1.0 / (1.0 + hl)).collect();
                (Some(d_inv), Some(half_l))
            }
            Recursion::Backward => (None, None),
        };
        Ok(Self {
            stiffness,
            shift,
            k_scale,
            damping,
            k_damp,
            l_scale,
            d_inv,
            half_l,
            recursion,
            g_scale,
        })
    }

    /// Kernel with explicitly given `K` and `L` (`g = 1`).
    pub fn from_matrices(
        k: Arc<dyn RealOperator>,
        l: Option<Arc<dyn RealOperator>>,
        recursion: Recursion,
    ) -> Result<Self> {
        Self::new(k, 0.0, 1.0, l, 0.0, 1.0, recursion, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn recursion(&self) -> Recursion {
        self.recursion
    }

    pub fn g_scale(&self) -> f64 {
        self.g_scale
    }

    /// Elementwise `1 / (1 + L_ii / 2)` (central recursion only).
    pub fn d_inv(&self) -> Option<&[f64]> {
        self.d_inv.as_deref()
    }

    /// `y = K x`.
    pub fn apply_k(&self, x: &[f64], y: &mut [f64]) {
        self.stiffness.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.k_scale * (*yi + self.shift * xi);
        }
        if self.k_damp != 0.0 {
            if let Some(m) = &self.damping {
                let mut t = vec![0.0; x.len()];
                m.apply(x, &mut t);
                for (yi, ti) in y.iter_mut().zip(&t) {
                    *yi -= self.k_damp * ti;
                }
            }
        }
    }

    /// `y = L x`.
    pub fn apply_l(&self, x: &[f64], y: &mut [f64]) {
        match &self.damping {
            Some(m) => {
                m.apply(x, y);
                y.iter_mut().for_each(|v| *v *= self.l_scale);
            }
            None => y.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// One step `(u_{n-1}, u_n) -> (u_n, u_{n+1})` with raw forcing `f_n`
    /// (the kernel applies `g_scale`). `None` means zero forcing.
    pub fn step(&self, state: &mut LeapfrogState, forcing: Option<&[f64]>) -> Result<()> {
        let n = self.dim();
        if state.u_curr.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: state.u_curr.len(),
            });
        }
        if let Some(f) = forcing {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.len(),
                });
            }
        }
        let LeapfrogState {
            u_prev,
            u_curr,
            next,
            work,
            mwork,
            ..
        } = state;
        self.stiffness.apply(u_curr, next);
        let (ks, shift, g) = (self.k_scale, self.shift, self.g_scale);
        match self.recursion {
            Recursion::Central => {
                let d_inv = self.d_inv.as_deref().expect("central kernel");
                let half_l = self.half_l.as_deref().expect("central kernel");
                let body = |i: usize, out: &mut f64| {
                    let uc = u_curr[i];
                    let up = u_prev[i];
                    let ku = ks * (*out + shift * uc);
                    let mut rhs = (2.0 * uc - ku) - (up - half_l[i] * up);
                    if let Some(f) = forcing {
                        rhs += g * f[i];
                    }
                    *out = d_inv[i] * rhs;
                };
                if n >= PAR_THRESHOLD {
                    next.par_iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                } else {
                    next.iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                }
            }
            Recursion::Backward => {
                // M ((k_damp - l) u_n + l u_{n-1}) carries both damping terms.
                let have_m = if let Some(m) = &self.damping {
                    let (a, b) = (self.k_damp - self.l_scale, self.l_scale);
                    for i in 0..n {
                        work[i] = a * u_curr[i] + b * u_prev[i];
                    }
                    m.apply(work, mwork);
                    Some(&*mwork)
                } else {
                    None
                };
                let body = |i: usize, out: &mut f64| {
                    let uc = u_curr[i];
                    let up = u_prev[i];
                    let mut v = (2.0 * uc - up) - ks * (*out + shift * uc);
                    if let Some(mz) = have_m {
                        v += mz[i];
                    }
                    if let Some(f) = forcing {
                        v += g * f[i];
                    }
                    *out = v;
                };
                if n >= PAR_THRESHOLD {
                    next.par_iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                } else {
                    next.iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                }
            }
        }
        std::mem::swap(u_prev, u_curr);
        std::mem::swap(u_curr, next);
        state.step_index += 1;
        Ok(())
    }
}

/// `(u_{n-1}, u_n)` plus the step index `n`.
#[derive(Debug, Clone)]
pub struct LeapfrogState {
    pub u_prev: Vec<f64>,
    pub u_curr: Vec<f64>,
    pub step_index: usize,
    pub dt: f64,
    next: Vec<f64>,
    work: Vec<f64>,
    mwork: Vec<f64>,
}

impl LeapfrogState {
    /// Zero state at step 0.
    pub fn zeros(n: usize, dt: f64) -> Self {
        Self::from_fields(vec![0.0; n], vec![0.0; n], dt)
    }

    pub fn from_fields(u_prev: Vec<f64>, u_curr: Vec<f64>, dt: f64) -> Self {
        let n = u_curr.len();
        assert_eq!(u_prev.len(), n);
        Self {
            u_prev,
            u_curr,
            step_index: 0,
            dt,
            next: vec![0.0; n],
            work: vec![0.0; n],
            mwork: vec![0.0; n],
        }
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }
}

/// Step-indexed forcing. Writes `f_n` into `out` and returns `true`, or
/// returns `false` when `f_n = 0`.
pub trait ForcingSource {
    fn forcing(&mut self, n: usize, out: &mut [f64]) -> bool;
}

/// No forcing.
pub struct Unforced;

impl ForcingSource for Unforced {
    fn forcing(&mut self, _n: usize, _out: &mut [f64]) -> bool {
        false
    }
}

impl<F: FnMut(usize, &mut [f64]) -> bool> ForcingSource for F {
    fn forcing(&mut self, n: usize, out: &mut [f64]) -> bool {
        self(n, out)
    }
}

/// Per-step callback invoked after every step.
pub trait Observer {
    fn observe(&mut self, state: &LeapfrogState) -> std::result::Result<(), String>;
}

/// Advances `state` by `n_steps` steps, calling each observer after each step.
pub fn advance(
    kernel: &KernelCoeffs,
    state: &mut LeapfrogState,
    forcing: &mut dyn ForcingSource,
    n_steps: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<()> {
    let mut f = vec![0.0; kernel.dim()];
    for _ in 0..n_steps {
        let n = state.step_index;
        let active = forcing.forcing(n, &mut f);
        kernel.step(state, if active { Some(&f) } else { None })?;
        for obs in observers.iter_mut() {
            obs.observe(state).map_err(|message| Error::Observer {
                step: state.step_index,
                message,
            })?;
        }
    }
    Ok(())
}

/// Runs `n_steps` steps from the zero state `u_{-1} = u_0 = 0`; step `n`
/// consumes `f_n` and produces `u_{n+1}`.
pub fn run(
    kernel: &KernelCoeffs,
    forcing: &mut dyn ForcingSource,
    n_steps: usize,
    dt: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<LeapfrogState> {
    let mut state = LeapfrogState::zeros(kernel.dim(), dt);
    advance(kernel, &mut state, forcing, n_steps, observers)?;
    Ok(state)
}

/// Writes `u_n` every `every` steps as a raw little-endian f64 dump with a
/// short text header (`dims`, `step`).
pub struct SnapshotWriter {
    dir: PathBuf,
    dims: Vec<usize>,
    every: usize,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: impl AsRef<Path>, dims: &[usize], every: usize) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
            dims: dims.to_vec(),
            every: every.max(1),
            written: Vec::new(),
        }
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, state: &LeapfrogState) -> std::result::Result<(), String> {
        if state.step_index % self.every != 0 {
            return Ok(());
        }
        let path = self.dir.join(format!("snapshot_{:07}.bin", state.step_index));
        write_field(&path, &self.dims, Some(state.step_index), &state.u_curr)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

/// Field dump: text header lines `dims ...`, optional `step n`, `end`, then
/// the values as little-endian f64.
pub fn write_field(path: &Path, dims: &[usize], step: Option<usize>, data: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims_str.join(" "))?;
    if let Some(s) = step {
        writeln!(w, "step {s}")?;
    }
    writeln!(w, "end")?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

/// Reads a dump written by [`write_field`]: `(dims, step, values)`.
pub fn read_field(path: &Path) -> Result<(Vec<usize>, Option<usize>, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let (header, body) = split_header(&bytes)?;
    let mut dims = Vec::new();
    let mut step = None;
    for line in header.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("dims") => {
                dims = it
                    .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad dim {t}"))))
                    .collect::<Result<_>>()?
            }
            Some("step") => {
                step = it.next().and_then(|t| t.parse().ok());
            }
            _ => {}
        }
    }
    Ok((dims, step, le_f64s(body)?))
}

pub(crate) fn split_header(bytes: &[u8]) -> Result<(String, &[u8])> {
    let marker = b"end\n";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Parse("missing 'end' header line".into()))?;
    let header = String::from_utf8_lossy(&bytes[..pos]).into_owned();
    Ok((header, &bytes[pos + marker.len()..]))
}

pub(crate) fn le_f64s(body: &[u8]) -> Result<Vec<f64>> {
    if body.len() % 8 != 0 {
        return Err(Error::Parse("payload is not a whole number of f64 values".into()));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Convenience: a diagonal operator wrapped for kernel construction.
pub fn diagonal_op(values: Vec<f64>) -> Arc<dyn RealOperator> {
    Arc::new(Diagonal(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DenseReal;
    use nalgebra::DMatrix;

    fn scalar_kernel(k: f64, l: Option<f64>, recursion: Recursion) -> KernelCoeffs {
        let kop = diagonal_op(vec![k]);
        let lop = l.map(|l| diagonal_op(vec![l]));
        KernelCoeffs::from_matrices(kop, lop, recursion).unwrap()
    }

    #[test]
    fn zero_stiffness_keeps_constant_state() {
        let kern = scalar_kernel(0.0, Some(0.0), Recursion::Central);
        let mut st = LeapfrogState::from_fields(vec![3.5], vec![3.5], 1.0);
        for _ in 0..10 {
            kern.step(&mut st, None).unwrap();
            assert_eq!(st.u_curr, vec![3.5]);
        }
    }

    #[test]
    fn period_four_oscillation_for_k_two() {
        let kern = scalar_kernel(2.0, None, Recursion::Central);
        let mut st = LeapfrogState::from_fields(vec![1.0], vec![0.0], 1.0);
        let mut seq = Vec::new();
        for _ in 0..3 {
            kern.step(&mut st, None).unwrap();
            seq.push(st.u_curr[0]);
        }
        assert_eq!(seq, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_scalar_matches_direct_recursion() {
        // K = 2, L = 2: u_{n+1} = (2 - 2 - 2) u_n - (1 - 2) u_{n-1}.
        let kern = scalar_kernel(2.0, Some(2.0), Recursion::Backward);
        let (mut a, mut b) = (0.3, -1.1);
        let mut st = LeapfrogState::from_fields(vec![a], vec![b], 1.0);
        for _ in 0..8 {
            kern.step(&mut st, None).unwrap();
            let c = -2.0 * b + a;
            a = b;
            b = c;
            assert!((st.u_curr[0] - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
    }

    #[test]
    fn central_rejects_non_diagonal_damping() {
        let m: Arc<dyn RealOperator> = Arc::new(DenseReal(DMatrix::from_element(2, 2, 1.0)));
        let k = diagonal_op(vec![1.0, 1.0]);
        assert!(KernelCoeffs::from_matrices(k, Some(m), Recursion::Central).is_err());
    }

    #[test]
    fn d_inv_entries() {
        let kern = KernelCoeffs::from_matrices(
            diagonal_op(vec![1.0, 1.0, 1.0]),
            Some(diagonal_op(vec![0.0, 0.5, 3.0])),
            Recursion::Central,
        )
        .unwrap();
        let d = kern.d_inv().unwrap();
        for (di, l) in d.iter().zip([0.0, 0.5, 3.0]) {
            assert!((di - 1.0 / (1.0 + 0.5 * l)).abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_forcing_gives_zero_state() {
        let kern = scalar_kernel(1.0, Some(0.2), Recursion::Central);
        let st = run(&kern, &mut Unforced, 100, 0.1, &mut []).unwrap();
        assert_eq!(st.u_curr, vec![0.0]);
        assert_eq!(st.step_index, 100);
        assert!((st.time() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn forcing_dimension_checked() {
        let kern = scalar_kernel(1.0, None, Recursion::Backward);
        let mut st = LeapfrogState::zeros(1, 1.0);
        assert!(kern.step(&mut st, Some(&[1.0, 2.0])).is_err());
    }

    struct Failing;
    impl Observer for Failing {
        fn observe(&mut self, s: &LeapfrogState) -> std::result::Result<(), String> {
            if s.step_index == 3 {
                Err("boom".into())
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn observer_failure_aborts_with_step() {
        let kern = scalar_kernel(1.0, None, Recursion::Central);
        let err = run(&kern, &mut Unforced, 10, 1.0, &mut [&mut Failing]).unwrap_err();
        assert!(matches!(err, Error::Observer { step: 3, .. }));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let kern = KernelCoeffs::from_matrices(
            diagonal_op(vec![0.5; 6]),
            None,
            Recursion::Central,
        )
        .unwrap();
        let mut src = |n: usize, out: &mut [f64]| {
            out.iter_mut().enumerate().for_each(|(i, v)| *v = (n + i) as f64);
            true
        };
        let mut snap = SnapshotWriter::new(dir.path(), &[2, 3], 2);
        let st = run(&kern, &mut src, 4, 0.5, &mut [&mut snap]).unwrap();
        assert_eq!(snap.written.len(), 2);
        let (dims, step, data) = read_field(&snap.written[1]).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(step, Some(4));
        assert_eq!(data, st.u_curr);
    }
}
