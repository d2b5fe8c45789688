use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = [
    "--set",
    "model.size=[24,24]",
    "--set",
    "model.layer_width=6",
    "--set",
    "precond.periods=10",
];

fn helmtd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helmtd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_small(extra: &[&str]) -> Output {
    let args = small(extra);
    helmtd(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn solve_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run_small(&["solve", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged = true"));
    for f in ["manifest.toml", "report.csv", "solution_re.bin", "solution_im.bin"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("steps_per_period = 12"));
    assert!(manifest.contains("periods = 10"));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.lines().count() > 2);
}

#[test]
fn manifest_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run_small(&["--set", "precond.rho=0.5", "solve", "-o", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = a.join("manifest.toml");
    let o = helmtd(&["-c", manifest.to_str().unwrap(), "solve", "-o", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["solution_re.bin", "solution_im.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn set_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[precond]\nperiods = 40\nrho = 0.5\n").unwrap();
    let o = helmtd(&["-c", cfg.to_str().unwrap(), "--set", "precond.periods=30", "show-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("periods = 30"), "{text}");
    assert!(text.contains("rho = 0.5"), "{text}");
}

#[test]
fn unknown_key_is_rejected() {
    let o = helmtd(&["--set", "precond.period=30", "show-config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("precond.period"));
}

#[test]
fn bad_window_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(&[
        "--set",
        "precond.rho=0.9",
        "--set",
        "precond.periods=1",
        "solve",
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("preconditioner stage"), "{}", stderr(&o));
}

#[test]
fn missing_table_is_config_error() {
    let o = helmtd(&["--set", "discretization.table=\"/nonexistent/table.csv\"", "solve", "-o", "/tmp/unused"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config stage"), "{}", stderr(&o));
    assert!(!Path::new("/tmp/unused/manifest.toml").exists());
}

#[test]
fn converge_t_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run_small(&["converge-t", "--periods", "5,10", "--rhos", "0,0.25", "-o", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("converge_t.csv")).unwrap();
    assert!(text.starts_with("T_periods,rho,"));
    assert_eq!(text.lines().count(), 5);

    let o = run_small(&["gmres-sweep", "--periods", "5", "-o", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("gmres_sweep.csv")).unwrap();
    assert!(text.contains("gmres") && text.contains("plain"), "{text}");
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = helmtd(&["selfcheck", "-o", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("checks passed"));
    assert!(dir.path().join("selfcheck.csv").is_file());
}
