use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wellbath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wellbath")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn meta_value(meta: &str, key: &str) -> Option<String> {
    meta.lines().find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
}

#[test]
fn fig2_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = wellbath(&["--scenario", "fig2", "--levels", "4", "--q-ratio", "10", "--samples", "50", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&dir.path().join("fig2_Q10.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,p_left,entropy"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    // 17 significant digits in scientific form.
    assert!(first.iter().all(|f| f.split('e').next().unwrap().trim_start_matches('-').len() == 18), "{first:?}");
    assert_eq!(csv.lines().count(), 52);
    let meta = read(&dir.path().join("fig2_Q10.csv.meta"));
    for key in ["scenario", "coupling_q", "q_ratio", "mean_g", "b", "source.q_ratio", "source.temperature"] {
        assert!(meta_value(&meta, key).is_some(), "missing {key} in\n{meta}");
    }
    assert_eq!(meta_value(&meta, "source.q_ratio").as_deref(), Some("flag"));
    assert_eq!(meta_value(&meta, "source.temperature").as_deref(), Some("default"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["--scenario", "pair_x33", "--levels", "3", "--samples", "40", "--out", out];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = wellbath(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        snapshots.push(files.iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect::<Vec<_>>());
        for p in files {
            fs::remove_file(p).unwrap();
        }
    }
    assert_eq!(snapshots[0].len(), 8);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# demo\nscenario = collision_demo\nb = 0.3\ntemperature = 2  # ignored here\n").unwrap();
    let out = dir.path().join("o");
    let o = wellbath(&["--config", cfg.to_str().unwrap(), "--b", "0.7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = read(&out.join("collision_demo_dephasing.csv.meta"));
    assert_eq!(meta_value(&meta, "b").unwrap().parse::<f64>().unwrap(), 0.7);
    assert_eq!(meta_value(&meta, "source.b").as_deref(), Some("flag"));
    assert_eq!(meta_value(&meta, "source.temperature").as_deref(), Some("file"));
    assert!(read(&out.join("collision_demo_dephasing.csv")).starts_with("t,coherence,coherence_closed_form,"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_line = dir.path().join("a.cfg");
    fs::write(&bad_line, "scenario = fig1\n\ntemperature 5\n").unwrap();
    let o = wellbath(&["--config", bad_line.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let unknown = dir.path().join("b.cfg");
    fs::write(&unknown, "temprature = 5\n").unwrap();
    let o = wellbath(&["--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("temprature"), "{}", stderr(&o));

    for args in [
        &["--temperature", "-1"][..],
        &["--b", "1.5"],
        &["--levels", "0"],
        &["--q-ratio", "1", "--coupling-q", "1e-5"],
        &["--scenario", "fig7"],
        &["--rel-tol", "2"],
    ] {
        let o = wellbath(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unattainable_tolerance_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = wellbath(&[
        "--scenario", "fig2", "--levels", "4", "--method", "dopri", "--rel-tol", "1e-300", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("adaptive step"));
}
