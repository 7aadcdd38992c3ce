use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dekohere(args: &[&str], out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dekohere"));
    cmd.args(args).arg("--out").arg(out).current_dir(root());
    if let Some(t) = threads {
        cmd.env("DEKOHERE_THREADS", t);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn propagate_writes_manifest_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = dekohere(&["propagate", "--scenario", "scenarios/qubit_dephasing.json"], dir.path(), None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("coherence(0,1)"));
    assert!(dir.path().join("propagate/coherence_0_1.csv").exists());
    assert!(dir.path().join("propagate/population_0.csv").exists());
    let report = fs::read_to_string(dir.path().join("propagate/report.json")).unwrap();
    assert!(report.contains("\"max_invariant_violation\""));
}

#[test]
fn compare_on_dephasing_stays_within_three_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let o = dekohere(&["compare", "--scenario", "scenarios/qubit_dephasing.json"], dir.path(), None);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o).lines().find(|l| l.starts_with("max |z|")).unwrap().to_string();
    let z: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(z < 3.0, "{line}");
}

#[test]
fn cp_audit_exits_zero_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = dekohere(&["cp-audit", "--scenario", "scenarios/correlated_transverse_noise.json"], dir.path(), None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("non-CP time points"));
    let text = fs::read_to_string(dir.path().join("cp-audit/choi_spectrum.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 20);
}

#[test]
fn zero_horizon_propagates_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = dekohere(&["propagate", "--scenario", "scenarios/initial_only.json"], dir.path(), None);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("propagate/rho.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn unknown_model_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dekohere(&["propagate", "--scenario", "crates/cli/tests/fixtures/unknown_kind.json"], dir.path(), None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.kind") && err.contains("global_white_noise"), "{err}");
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dekohere(&["plot", "--scenario", "x.json"], dir.path(), None).status.code(), Some(1));
    assert_eq!(dekohere(&["propagate", "--scenario", "missing.json"], dir.path(), None).status.code(), Some(1));
    let o = dekohere(&["mc", "--scenario", "scenarios/qubit_dephasing.json"], dir.path(), Some("many"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = dir.path().join(threads);
        let o = dekohere(
            &["mc", "--scenario", "scenarios/three_level_lindblad.json", "--samples", "300", "--seed", "5"],
            &out,
            Some(threads),
        );
        assert_eq!(o.status.code(), Some(0));
        outputs.push(fs::read(out.join("mc/rho.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
