use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sodsim(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sodsim")).args(args).env("SODSIM_OUT_DIR", out_root).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_artifacts_under_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = sodsim(&["run", &scenario("rescue_sweep")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["telemetry.log", "metrics.csv", "report.toml", "summary.txt", "mission_report.txt"] {
        assert!(dir.path().join("rescue_sweep").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let s = scenario("rescue_sweep");
    sodsim(&["run", &s, "--out", a.to_str().unwrap()], dir.path());
    sodsim(&["run", &s, "--seed", "43", "--out", b.to_str().unwrap()], dir.path());
    let la = std::fs::read_to_string(a.join("telemetry.log")).unwrap();
    let lb = std::fs::read_to_string(b.join("telemetry.log")).unwrap();
    assert!(lb.starts_with("# sodsim-telemetry v1 seed=43"));
    assert_ne!(la, lb);
}

#[test]
fn exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("rescue_sweep")).unwrap();
    let aborted = dir.path().join("aborted.toml");
    std::fs::write(&aborted, text.replace("org = \"rescue\"", "org = \"rescue\"\npermission = false")).unwrap();
    assert_eq!(sodsim(&["run", aborted.to_str().unwrap()], dir.path()).status.code(), Some(10));

    let failed = dir.path().join("failed.toml");
    std::fs::write(&failed, text.replace("tick_limit = 3000", "tick_limit = 50")).unwrap();
    assert_eq!(sodsim(&["run", failed.to_str().unwrap()], dir.path()).status.code(), Some(11));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\ndorne_count = 3\n").unwrap();
    let o = sodsim(&["validate", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dorne_count") && err.contains(":2:"), "{err}");
}

#[test]
fn replay_round_trip_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("capture_master");
    sodsim(&["run", &s], dir.path());
    let log = dir.path().join("capture_master/telemetry.log");
    let o = sodsim(&["replay", log.to_str().unwrap(), &s], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verified"));

    let text = std::fs::read_to_string(&log).unwrap();
    let tampered: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 5 { format!("{}ffff\n", &l[..l.len() - 4]) } else { format!("{l}\n") })
        .collect();
    std::fs::write(&log, tampered).unwrap();
    let o = sodsim(&["replay", log.to_str().unwrap(), &s], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("divergence at record 4"), "{}", stdout(&o));
}

#[test]
fn store_feeds_the_next_run_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("kb.txt");
    let s = scenario("capture_master");
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    sodsim(&["run", &s, "--store", store.to_str().unwrap(), "--out", first.to_str().unwrap()], dir.path());
    assert!(std::fs::read_to_string(&store).unwrap().contains("event:drone_capture"));
    sodsim(&["run", &s, "--store", store.to_str().unwrap(), "--out", second.to_str().unwrap()], dir.path());
    let report = std::fs::read_to_string(second.join("report.toml")).unwrap();
    assert!(report.contains("path = \"precedent\""));
    let knowledge = second.join("knowledge_in.txt");
    let log = second.join("telemetry.log");
    let o = sodsim(
        &["replay", log.to_str().unwrap(), &s, "--knowledge", knowledge.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn dump_matrix_has_54_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = sodsim(&["dump-matrix"], dir.path());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 55);
    assert!(text.contains("Static,Centralised,SP3,4"));
    assert!(text.contains("Hybrid,Distributed,PE2,5"));
}

#[test]
fn batch_runs_every_scenario_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in");
    std::fs::create_dir(&src).unwrap();
    for n in ["rescue_sweep", "capture_master", "sensor_data_collection"] {
        std::fs::copy(scenario(n), src.join(format!("{n}.toml"))).unwrap();
    }
    let out = dir.path().join("out");
    let o = sodsim(&["batch", src.to_str().unwrap(), "--jobs", "3", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(": completed")).count(), 3);
    assert!(out.join("sensor_data_collection/report.toml").exists());
}

#[test]
fn replay_takes_the_seed_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("rescue_sweep");
    let out = dir.path().join("seeded");
    sodsim(&["run", &s, "--seed", "7", "--out", out.to_str().unwrap()], dir.path());
    let log = out.join("telemetry.log");
    let o = sodsim(&["replay", log.to_str().unwrap(), &s], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = sodsim(&["replay", log.to_str().unwrap(), &s, "--seed", "8"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}
