use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use helmtd::diagnostics::selfcheck;
use helmtd::experiment::{
    converge_t, gmres_sweep, snapshot_run, solve, write_rows, ExperimentConfig, Problem,
    StageError,
};
use helmtd::leapfrog::write_field;
use toml::{Table, Value};

#[derive(Parser, Debug)]
#[command(version, about = "Time-domain preconditioned Helmholtz experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config; a manifest from an earlier run also works.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set precond.periods=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set outputs.directory=...`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preconditioned GMRES solve; writes the field, report and manifest.
    Solve,
    /// Relative error of S_T F against a direct solve for each (T, rho).
    ConvergeT {
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        periods: Vec<usize>,
        /// Taper fractions; 0 means a one-period ramp.
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
        rhos: Vec<f64>,
    },
    /// GMRES per T against plain S_T at the same period budgets.
    GmresSweep {
        #[arg(long, value_delimiter = ',', default_value = "25,50,100")]
        periods: Vec<usize>,
    },
    /// Runs the built-in diagnostics; exits nonzero on any failure.
    Selfcheck,
    /// Prints the resolved config as TOML.
    ShowConfig,
}

/// Sets `path` (dot separated) in `table`, creating tables on the way.
fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| anyhow!("empty key in '{path}'"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("'{p}' in '{path}' is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn get_path<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut table = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<Table>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Table::new(),
    };
    // manifests carry a run record next to the config
    table.remove("run");
    let mut keys = Vec::new();
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override '{o}' is not KEY=VALUE"))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        keys.push(k.trim().to_string());
    }
    if let Some(out) = &common.out {
        set_path(&mut table, "outputs.directory", Value::String(out.display().to_string()))?;
    }
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .context("config does not match the expected layout")?;
    // keys that deserialization silently ignored are typos
    let back = Table::try_from(&cfg)?;
    for k in keys {
        if get_path(&back, &k).is_none() {
            bail!("unknown config key '{k}'");
        }
    }
    Ok(cfg)
}

/// Config plus a `[run]` record; feeding it back via `--config` repeats
/// the run.
fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, problem: Option<&Problem>) -> Result<()> {
    let mut table = Table::try_from(cfg)?;
    let mut run = Table::new();
    run.insert("command".into(), Value::String(command.into()));
    run.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    run.insert(
        "args".into(),
        Value::Array(std::env::args().skip(1).map(Value::String).collect()),
    );
    run.insert("random_seed".into(), Value::String("none; the solve path is deterministic".into()));
    if let Some(p) = problem {
        let m = &p.model;
        run.insert("grid".into(), Value::Array(m.dims().iter().map(|&d| Value::Integer(d as i64)).collect()));
        run.insert("h".into(), Value::Float(m.h));
        run.insert("frequency".into(), Value::Float(m.frequency));
        run.insert("points_per_wavelength".into(), Value::Float(m.points_per_wavelength()));
        run.insert("size_in_wavelengths".into(), Value::Float(m.size_in_wavelengths()));
        run.insert(
            "source".into(),
            Value::Array(p.source.iter().map(|&i| Value::Integer(i as i64)).collect()),
        );
        run.insert("bounds".into(), Value::try_from(p.bounds)?);
        run.insert("params".into(), Value::try_from(p.params)?);
    }
    table.insert("run".into(), Value::Table(run));
    let path = dir.join("manifest.toml");
    fs::write(&path, toml::to_string(&table)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.outputs.directory.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_solve(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let outcome = solve(cfg)?;
    let p = &outcome.problem;
    let r = &outcome.report;
    r.write_csv(&dir.join("report.csv"))?;
    let dims = p.model.dims();
    write_field(&dir.join("solution_re.bin"), dims, None, &outcome.solution.re)?;
    write_field(&dir.join("solution_im.bin"), dims, None, &outcome.solution.im)?;
    if cfg.outputs.snapshot_every > 0 {
        let snap = dir.join("snapshots");
        fs::create_dir_all(&snap)?;
        let files = snapshot_run(p, &cfg.precond, &snap, cfg.outputs.snapshot_every)?;
        log::info!("{} snapshots in {}", files.len(), snap.display());
    }
    write_manifest(&dir, "solve", cfg, Some(p))?;
    println!(
        "converged = {}, iterations = {}, simulated periods = {}, true residual = {:.3e}, {:.2} s",
        r.converged,
        r.iterations,
        r.total_simulated_periods,
        r.final_true_residual(),
        r.wall_time
    );
    println!("results in {}", dir.display());
    Ok(if r.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_converge(cfg: &ExperimentConfig, periods: &[usize], rhos: &[f64]) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let rows = converge_t(cfg, periods, rhos)?;
    write_rows(&dir.join("converge_t.csv"), &rows)?;
    write_manifest(&dir, "converge-t", cfg, None)?;
    for r in &rows {
        println!("T = {:>4}  rho = {:<5}  error = {:.3e}", r.periods, r.rho, r.rel_error);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(cfg: &ExperimentConfig, periods: &[usize]) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let rows = gmres_sweep(cfg, periods)?;
    write_rows(&dir.join("gmres_sweep.csv"), &rows)?;
    write_manifest(&dir, "gmres-sweep", cfg, None)?;
    println!("{} rows in {}", rows.len(), dir.join("gmres_sweep.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck(out: Option<&Path>) -> Result<ExitCode> {
    let report = selfcheck()?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        report.write_csv(&dir.join("selfcheck.csv"))?;
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} of {} checks did not pass", report.failures().len(), report.checks.len());
        Ok(ExitCode::FAILURE)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Selfcheck = cli.command {
        return cmd_selfcheck(cli.common.out.as_deref());
    }
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::ConvergeT { periods, rhos } => cmd_converge(&cfg, periods, rhos),
        Command::GmresSweep { periods } => cmd_sweep(&cfg, periods),
        Command::ShowConfig => {
            print!("{}", toml::to_string(&cfg)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfcheck => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            // stage errors already carry their cause in the message
            if e.downcast_ref::<StageError>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
