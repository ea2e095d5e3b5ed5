use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rhg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhg"))
        .args(args)
        .env_remove("RHG_WORKERS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn steady_state_writes_the_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = rhg(&[
        "steady-state",
        "--override",
        "problem=\"econ_growth\"",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("steady_state.csv").is_file());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("success = true"));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("steady_state:"));
}

#[test]
fn shipped_figure_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../figures");
    let mut seen = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = rhg(&["run", "--config", path.to_str().unwrap(), "--print-config"]);
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn config_errors_exit_with_2_and_suggest_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "problem = \"lq_coupled\"\nhorizn = 8\n[params]\nq = [1.0]\n",
    );
    let o = rhg(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("did you mean `horizon`"), "{e}");
    assert!(e.contains("q"), "{e}");

    let o = rhg(&["run", "--config", &cfg, "--override", "horizon=0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = rhg(&["run", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_resolves_overrides_and_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "task = \"open_loop\"\nproblem = \"lq_coupled\"\nhorizon = [4, 8]\n",
    );
    let o = rhg(&[
        "sweep",
        "--config",
        &cfg,
        "--override",
        "steps=7",
        "--override",
        "solver.newton_tol=1e-10",
        "--print-config",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let t: toml::Table = text.parse().unwrap();
    assert_eq!(t["task"].as_str(), Some("sweep"));
    assert_eq!(t["steps"].as_integer(), Some(7));
    assert_eq!(t["solver"]["newton_tol"].as_float(), Some(1e-10));

    // the printed config is itself a valid config
    let again = write_config(dir.path(), &text);
    let o2 = rhg(&["sweep", "--config", &again, "--print-config"]);
    assert_eq!(String::from_utf8(o2.stdout).unwrap(), text);
}

#[test]
fn workers_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_rhg"))
        .args([
            "solve",
            "--override",
            "problem=\"lq_coupled\"",
            "--out",
            out.to_str().unwrap(),
        ])
        .env("RHG_WORKERS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["workers"].as_integer(), Some(3));
}

#[test]
fn solver_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = rhg(&[
        "run",
        "--override",
        "problem=\"lq_coupled\"",
        "--override",
        "solver.max_iter=1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("failed"));
}
