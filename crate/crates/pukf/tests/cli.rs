use std::process::{Command, Output};

fn pukf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pukf")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_writes_csv() {
    let o = pukf(&["run", "--filter", "ud-pu", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("time,truth_0"));
    assert_eq!(text.lines().count(), 302);
}

#[test]
fn flops_table() {
    let o = pukf(&["flops", "--n", "3", "--m", "2", "--q", "1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("batch,total,62,0,62"), "{text}");
    assert!(text.contains("ud,conventional_update,18,0,18"), "{text}");
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&pukf(&["run", "--filter", "kalman"])), 2);
    assert_eq!(code(&pukf(&["run", "--scenario", "orbit"])), 2);
    assert_eq!(code(&pukf(&["monte-carlo", "--runs", "0"])), 2);
    assert_eq!(code(&pukf(&["run", "--config", "/nonexistent/file.cfg"])), 2);
    assert_eq!(code(&pukf(&["flops", "--n", "0"])), 2);
}

#[test]
fn filter_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "falling_body.kp = 1e-300\n").unwrap();
    let out = dir.path().join("run.csv");
    let o = pukf(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn exported_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    let o = pukf(&["export-config", "--scenario", "tumbler", "--out", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let again = pukf(&["export-config", "--scenario", "tumbler", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read_to_string(&cfg).unwrap(), String::from_utf8(again.stdout).unwrap());
}

#[test]
fn compare_reports_small_deviation() {
    let o = pukf(&["compare", "--seed", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(row.iter().all(|d| *d < 1e-6), "{text}");
}
