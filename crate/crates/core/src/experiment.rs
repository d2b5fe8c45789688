//! Configuration-driven runs: a preconditioned solve, convergence of `S_T`
//! against a direct solve, and GMRES against plain `S_T` at matched
//! period budgets.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::reference_solve;
use crate::error::{Error, Result};
use crate::fd::{build_compact, build_model, build_second_order, point_source, CoeffTable, GridModel, ModelSpec};
use crate::krylov::{gmres_with_reference, GmresConfig, SolveReport};
use crate::leapfrog::{build_kernel, run, KernelCoeffs, LeapfrogState, SnapshotWriter};
use crate::operator::{ComplexVector, SplitOperator};
use crate::precond::{
    apply_st_complex, apply_st_real, window_value, PrecondConfig, PrecondMode, TimeDomainPreconditioner, WindowSpec,
};
use crate::setup::{estimate_bounds, select_params, BoundsMode, SchemeParams, SpectralBounds, DEFAULT_SAFETY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    SecondOrder,
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationConfig {
    pub stencil: Stencil,
    /// CSV coefficient table for the compact stencil; the built-in table
    /// when unset.
    pub table: Option<PathBuf>,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            stencil: Stencil::SecondOrder,
            table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetupConfig {
    pub safety: f64,
    pub bounds: BoundsMode,
    /// Relative tolerance of the power iteration in `iterative` mode.
    pub bounds_tol: f64,
}

impl Default for SetupConfig {
    fn default() -> Self {
        Self {
            safety: DEFAULT_SAFETY,
            bounds: BoundsMode::AnalyticHint,
            bounds_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecondSettings {
    /// `T` in periods.
    pub periods: usize,
    /// Taper fraction; 0 selects the one-period ramp.
    pub rho: f64,
    pub mode: PrecondMode,
}

impl Default for PrecondSettings {
    fn default() -> Self {
        Self {
            periods: 25,
            rho: 0.25,
            mode: PrecondMode::RealExtraction,
        }
    }
}

impl PrecondSettings {
    pub fn to_config(&self) -> PrecondConfig {
        PrecondConfig {
            window: window_for(self.periods, self.rho),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Steps between wavefield snapshots of one `S_T F` run; 0 disables.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub discretization: DiscretizationConfig,
    /// Source position as a full-grid index; the grid center when unset.
    pub source: Option<Vec<usize>>,
    pub setup: SetupConfig,
    pub precond: PrecondSettings,
    pub gmres: GmresConfig,
    pub outputs: OutputConfig,
    /// Memory budget in MiB for the size check.
    pub memory_budget_mb: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            discretization: DiscretizationConfig::default(),
            source: None,
            setup: SetupConfig::default(),
            precond: PrecondSettings::default(),
            gmres: GmresConfig::default(),
            outputs: OutputConfig::default(),
            memory_budget_mb: 8192.0,
        }
    }
}

impl ExperimentConfig {
    /// Checks referenced files and the memory estimate.
    pub fn validate(&self) -> StageResult<()> {
        let missing = |p: &Path| StageError::new(Stage::Config, Error::Parse(format!("{} does not exist", p.display())));
        if let Some(p) = &self.model.path {
            if !p.exists() {
                return Err(missing(p));
            }
        }
        if let Some(p) = &self.discretization.table {
            if !p.exists() {
                return Err(missing(p));
            }
        }
        let mb = self.memory_estimate_mb();
        if mb > self.memory_budget_mb {
            return Err(StageError::new(
                Stage::Config,
                Error::InvalidModel(format!(
                    "estimated {mb:.0} MiB exceeds the budget of {} MiB",
                    self.memory_budget_mb
                )),
            ));
        }
        Ok(())
    }

    /// Rough peak memory: Krylov basis, stencil weights, model fields and
    /// the time-stepping state.
    pub fn memory_estimate_mb(&self) -> f64 {
        let d = self.model.size.len() as i32;
        let n: f64 = self
            .model
            .size
            .iter()
            .map(|&s| (s + 2 * self.model.layer_width) as f64)
            .product();
        let vectors = 2.0 * (self.gmres.restart as f64 + 6.0);
        let stencil = 3f64.powi(d) + 1.0;
        let fields = 8.0;
        n * 8.0 * (vectors + stencil + fields) / (1024.0 * 1024.0)
    }
}

/// Window with `rho = 0` mapped to the one-period ramp.
pub fn window_for(periods: usize, rho: f64) -> WindowSpec {
    if rho == 0.0 {
        WindowSpec::untapered(periods)
    } else {
        WindowSpec::new(rho, periods)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Model,
    Operator,
    Bounds,
    Params,
    Preconditioner,
    Oracle,
    Gmres,
    TimeDomain,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Model => "model",
            Stage::Operator => "operator",
            Stage::Bounds => "bounds",
            Stage::Params => "params",
            Stage::Preconditioner => "preconditioner",
            Stage::Oracle => "oracle",
            Stage::Gmres => "gmres",
            Stage::TimeDomain => "time-domain",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}{}", hint.as_deref().map(|h| format!(" ({h})")).unwrap_or_default())]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
    pub hint: Option<String>,
}

impl StageError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self {
            stage,
            source,
            hint: None,
        }
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

/// Model, operator, bounds, parameters and right-hand side of a run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: GridModel,
    pub op: SplitOperator,
    pub bounds: SpectralBounds,
    pub params: SchemeParams,
    pub source: Vec<usize>,
    pub rhs: ComplexVector,
}

impl Problem {
    pub fn kernel(&self) -> StageResult<KernelCoeffs> {
        build_kernel(&self.op, &self.params, true).at(Stage::Preconditioner)
    }

    /// `S_T F` for this problem's right-hand side.
    pub fn time_domain(&self, kernel: &KernelCoeffs, window: &WindowSpec, mode: PrecondMode) -> StageResult<ComplexVector> {
        match mode {
            PrecondMode::Complex => apply_st_complex(kernel, &self.params, window, &self.rhs),
            PrecondMode::RealExtraction => apply_st_real(kernel, &self.params, window, &self.rhs),
        }
        .at(Stage::TimeDomain)
    }

    /// Direct solve of `H U = F`.
    pub fn reference(&self) -> StageResult<ComplexVector> {
        reference_solve(&self.op, &self.rhs).map_err(|e| {
            let hint = matches!(e, Error::DenseCapExceeded { .. })
                .then(|| "use a smaller model for oracle-backed runs".to_string());
            StageError {
                stage: Stage::Oracle,
                source: e,
                hint,
            }
        })
    }
}

/// Model, operator, bounds and `(omega, dt)` for a config.
pub fn build_problem(cfg: &ExperimentConfig) -> StageResult<Problem> {
    cfg.validate()?;
    let model = build_model(&cfg.model).at(Stage::Model)?;
    let (op, analytic) = match cfg.discretization.stencil {
        Stencil::SecondOrder => build_second_order(&model),
        Stencil::Compact => {
            let table = match &cfg.discretization.table {
                Some(p) => CoeffTable::from_csv(p).at(Stage::Operator)?,
                None => CoeffTable::Default,
            };
            build_compact(&model, &table).at(Stage::Operator)?
        }
    };
    let op = op.with_bounds(analytic);
    let bounds = estimate_bounds(&op, cfg.setup.bounds, cfg.setup.bounds_tol).at(Stage::Bounds)?;
    let params = select_params(&op, &bounds, cfg.setup.safety).at(Stage::Params)?;
    let source = cfg.source.clone().unwrap_or_else(|| model.center());
    let rhs = point_source(&model, &source).at(Stage::Model)?;
    Ok(Problem {
        model,
        op,
        bounds,
        params,
        source,
        rhs,
    })
}

pub struct SolveOutcome {
    pub problem: Problem,
    pub solution: ComplexVector,
    pub report: SolveReport,
}

/// Builds everything and runs preconditioned GMRES.
pub fn solve(cfg: &ExperimentConfig) -> StageResult<SolveOutcome> {
    let problem = build_problem(cfg)?;
    let pc = TimeDomainPreconditioner::for_operator(&problem.op, problem.params, cfg.precond.to_config())
        .at(Stage::Preconditioner)?;
    let (solution, report) =
        gmres_with_reference(&problem.op, Some(&pc), &problem.rhs, &cfg.gmres, None).at(Stage::Gmres)?;
    Ok(SolveOutcome {
        problem,
        solution,
        report,
    })
}

/// One real-forced `S_T F` run writing snapshots every `every` steps into
/// `dir`. Returns the files written.
pub fn snapshot_run(problem: &Problem, settings: &PrecondSettings, dir: &Path, every: usize) -> StageResult<Vec<PathBuf>> {
    let kernel = problem.kernel()?;
    let window = window_for(settings.periods, settings.rho);
    let s = problem.params.steps_per_period;
    window.validate(s, PrecondMode::Complex).at(Stage::TimeDomain)?;
    let n_steps = window.n_steps(s);
    let f = &problem.rhs;
    let mut forcing = |n: usize, out: &mut [f64]| -> bool {
        let chi = window_value(window.rho, n as f64 / n_steps as f64);
        if chi == 0.0 {
            return false;
        }
        let th = 2.0 * PI * (n % s) as f64 / s as f64;
        let (c, sn) = (th.cos(), th.sin());
        for ((o, re), im) in out.iter_mut().zip(&f.re).zip(&f.im) {
            *o = chi * (c * re - sn * im);
        }
        true
    };
    let mut writer = SnapshotWriter::new(dir, problem.model.dims(), every);
    let _state: LeapfrogState =
        run(&kernel, &mut forcing, n_steps, problem.params.dt, &mut [&mut writer]).at(Stage::Output)?;
    Ok(writer.written)
}

/// Relative error of `S_T F` for one `(T, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    #[serde(rename = "T_periods")]
    pub periods: usize,
    /// Requested taper fraction (0 for the one-period ramp).
    pub rho: f64,
    pub rho_effective: f64,
    pub time_steps: usize,
    pub rel_error: f64,
}

/// `||S_T F - H^-1 F|| / ||H^-1 F||` for every pair in `periods x rhos`.
pub fn converge_t(cfg: &ExperimentConfig, periods: &[usize], rhos: &[f64]) -> StageResult<Vec<ConvergeRow>> {
    let problem = build_problem(cfg)?;
    let reference = problem.reference()?;
    converge_t_with(&problem, &reference, cfg.precond.mode, periods, rhos)
}

/// As [`converge_t`] with a prepared problem and reference.
pub fn converge_t_with(
    problem: &Problem,
    reference: &ComplexVector,
    mode: PrecondMode,
    periods: &[usize],
    rhos: &[f64],
) -> StageResult<Vec<ConvergeRow>> {
    let kernel = problem.kernel()?;
    let ref_norm = reference.norm();
    let pairs: Vec<(usize, f64)> = periods.iter().flat_map(|&t| rhos.iter().map(move |&r| (t, r))).collect();
    pairs
        .par_iter()
        .map(|&(t, rho)| {
            let window = window_for(t, rho);
            let u = problem.time_domain(&kernel, &window, mode)?;
            Ok(ConvergeRow {
                periods: t,
                rho,
                rho_effective: window.rho,
                time_steps: window.n_steps(problem.params.steps_per_period),
                rel_error: u.sub(reference).norm() / ref_norm,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Gmres,
    Plain,
}

/// One point of a period-budget curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: SweepMethod,
    /// Periods per preconditioner application (GMRES) or of the single run.
    #[serde(rename = "T_periods")]
    pub periods: usize,
    pub iteration: usize,
    /// Simulated periods so far, including the right-hand side application.
    pub budget_periods: usize,
    /// GMRES residual estimate, relative; empty for plain runs.
    pub precond_residual_rel: Option<f64>,
    pub true_error_rel: f64,
}

/// Preconditioned GMRES for each `T`, then plain `S_P F` at every budget
/// `P` reached by GMRES.
pub fn gmres_sweep(cfg: &ExperimentConfig, periods: &[usize]) -> StageResult<Vec<SweepRow>> {
    let problem = build_problem(cfg)?;
    let reference = problem.reference()?;
    gmres_sweep_with(&problem, &reference, cfg, periods)
}

/// As [`gmres_sweep`] with a prepared problem and reference.
pub fn gmres_sweep_with(
    problem: &Problem,
    reference: &ComplexVector,
    cfg: &ExperimentConfig,
    periods: &[usize],
) -> StageResult<Vec<SweepRow>> {
    let kernel = problem.kernel()?;
    let mut gcfg = cfg.gmres;
    gcfg.record_true_error = true;
    let runs: Vec<StageResult<Vec<SweepRow>>> = periods
        .par_iter()
        .map(|&t| {
            let settings = PrecondSettings {
                periods: t,
                ..cfg.precond.clone()
            };
            let pc = TimeDomainPreconditioner::new(kernel.clone(), problem.params, settings.to_config())
                .at(Stage::Preconditioner)?;
            let (_, report) =
                gmres_with_reference(&problem.op, Some(&pc), &problem.rhs, &gcfg, Some(reference)).at(Stage::Gmres)?;
            let last = report.history.len() - 1;
            Ok(report
                .history
                .iter()
                .enumerate()
                .map(|(i, r)| SweepRow {
                    method: SweepMethod::Gmres,
                    periods: t,
                    iteration: r.iteration,
                    // the last point also pays for the closing residual check
                    budget_periods: if i == last {
                        report.total_simulated_periods
                    } else {
                        r.cumulative_periods
                    },
                    precond_residual_rel: Some(r.precond_residual),
                    true_error_rel: r.true_error.unwrap_or(f64::NAN),
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in runs {
        rows.extend(r?);
    }
    let mut budgets: Vec<usize> = rows.iter().map(|r| r.budget_periods).filter(|&b| b > 0).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let ref_norm = reference.norm();
    let plain: Vec<StageResult<SweepRow>> = budgets
        .par_iter()
        .map(|&b| {
            let window = window_for(b, cfg.precond.rho);
            let u = problem.time_domain(&kernel, &window, cfg.precond.mode)?;
            Ok(SweepRow {
                method: SweepMethod::Plain,
                periods: b,
                iteration: 0,
                budget_periods: b,
                precond_residual_rel: None,
                true_error_rel: u.sub(reference).norm() / ref_norm,
            })
        })
        .collect();
    for r in plain {
        rows.push(r?);
    }
    Ok(rows)
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.size = vec![16, 16];
        cfg.model.layer_width = 6;
        cfg
    }

    #[test]
    fn window_constraint_rejects() {
        let mut cfg = small();
        cfg.precond.rho = 0.9;
        cfg.precond.periods = 1;
        let err = solve(&cfg).err().unwrap();
        assert_eq!(err.stage, Stage::Preconditioner);
        assert!(matches!(err.source, Error::InvalidWindow(_)));
    }

    #[test]
    fn missing_table_is_config_error() {
        let mut cfg = small();
        cfg.discretization.stencil = Stencil::Compact;
        cfg.discretization.table = Some(PathBuf::from("/nonexistent/table.csv"));
        assert_eq!(build_problem(&cfg).err().unwrap().stage, Stage::Config);
    }

    #[test]
    fn memory_budget() {
        let mut cfg = small();
        cfg.model.size = vec![4000, 4000, 4000];
        cfg.model.layer_width = 16;
        let err = cfg.validate().err().unwrap();
        assert_eq!(err.stage, Stage::Config);
    }

    #[test]
    fn small_solve_converges_and_repeats() {
        let mut cfg = small();
        cfg.precond.periods = 10;
        let a = solve(&cfg).unwrap();
        assert!(a.report.converged);
        assert_eq!(a.report.history.len(), a.report.iterations + 1);
        let r = a.problem.op.residual_norm(&a.solution, &a.problem.rhs).unwrap() / a.problem.rhs.norm();
        assert!((r - a.report.final_true_residual()).abs() < 1e-12);
        let b = solve(&cfg).unwrap();
        assert_eq!(a.report.residual_history(), b.report.residual_history());
    }

    #[test]
    fn csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let rows = [ConvergeRow {
            periods: 4,
            rho: 0.25,
            rho_effective: 0.25,
            time_steps: 32,
            rel_error: 0.5,
        }];
        write_rows(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("T_periods,rho,rho_effective,time_steps,rel_error\n4,0.25,0.25,32,0.5"));
    }
}
