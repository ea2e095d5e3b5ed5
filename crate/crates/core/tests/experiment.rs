//! End-to-end experiment runs: manifests, output files and determinism.

use std::fs;
use std::path::Path;

use rhg_core::experiment::{run_experiment, ExperimentConfig, RunManifest};
use rhg_core::io::CsvTable;

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let text = format!("output_dir = {:?}\n{body}\n", dir.to_string_lossy());
    ExperimentConfig::parse(&text).unwrap()
}

fn run(dir: &Path, body: &str, workers: usize) -> RunManifest {
    run_experiment(&config(dir, body), workers).unwrap()
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

const TASKS: [&str; 5] = [
    "task = \"open_loop\"\nproblem = \"lq_coupled\"\nhorizon = [4, 6]\nx0 = [[1.0], [-0.5]]\npenalty = [false, true]",
    "task = \"closed_loop\"\nproblem = \"lq_coupled\"\nhorizon = 6\nsteps = 8\nx0 = [[1.0], [0.0]]",
    "task = \"steady_state\"\nproblem = \"econ_growth\"",
    "task = \"sweep\"\nproblem = \"lq_coupled\"\nhorizon = [4, 5, 6]\nsteps = 10\npenalty = [false, true]",
    "task = \"diagnostics\"\nproblem = \"lq_coupled\"\nhorizon = [4, 6]\nsteps = 8\nx0 = [[1.0], [-1.0]]\nderivative_points = 5",
];

#[test]
fn every_manifest_file_exists() {
    for body in TASKS {
        let dir = tempfile::tempdir().unwrap();
        let m = run(dir.path(), body, 2);
        assert!(m.success(), "{body}: {:?}", m.failures);
        assert!(!m.files.is_empty(), "{body}");
        for f in &m.files {
            assert!(f.is_file(), "{body}: {} missing", f.display());
        }
        let text = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        let parsed: toml::Table = text.parse().unwrap();
        let listed = parsed["files"].as_array().unwrap();
        assert_eq!(listed.len(), m.files.len());
        assert_eq!(parsed["success"].as_bool(), Some(true));
        // the embedded config reproduces the run
        let embedded = ExperimentConfig::parse(parsed["config"].as_str().unwrap()).unwrap();
        assert_eq!(embedded, config(dir.path(), body));
    }
}

#[test]
fn worker_count_does_not_change_the_output() {
    let body = "task = \"sweep\"\nproblem = \"lq_coupled\"\nhorizon = [4, 5, 6, 7]\nsteps = 12\nx0 = [[1.0], [-0.5]]\npenalty = [false, true]";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path(), body, 1);
    run(b.path(), body, 3);
    let (ca, cb) = (csv_bytes(a.path()), csv_bytes(b.path()));
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
}

#[test]
fn growth_steady_state_is_a_fixed_point_of_the_shift() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), TASKS[2], 1);
    let t = CsvTable::read(&dir.path().join("steady_state.csv")).unwrap();
    let (f, c, v) = (
        t.column("field").unwrap(),
        t.column("component").unwrap(),
        t.column("value").unwrap(),
    );
    let get = |field: &str, comp: &str| -> f64 {
        t.rows
            .iter()
            .find(|r| r[f] == field && r[c] == comp)
            .unwrap_or_else(|| panic!("{field}[{comp}]"))[v]
            .parse()
            .unwrap()
    };
    for i in ["0", "1"] {
        assert!((get("x_s", i) - get("u_s", i)).abs() < 1e-9);
    }
}

#[test]
fn unsolvable_runs_are_recorded_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(
        dir.path(),
        "task = \"closed_loop\"\nproblem = \"lq_coupled\"\nhorizon = 6\nsteps = 4\n[solver]\nmax_iter = 1",
        1,
    );
    assert!(!m.success());
    assert!(!m.failures.is_empty());
    let text = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(text.contains("success = false"));
}
