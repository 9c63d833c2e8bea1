use std::process::{Command, Output};

fn dfrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfrc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dfrc(&[]).status.code(), Some(2));
    assert_eq!(dfrc(&["figure"]).status.code(), Some(2));
    assert_eq!(dfrc(&["figure", "--id", "fig7", "--trials", "many"]).status.code(), Some(2));
    assert_eq!(dfrc(&["scene", "explode"]).status.code(), Some(2));
}

#[test]
fn bad_ids_and_configs_fail_cleanly() {
    let o = dfrc(&["figure", "--id", "fig3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown experiment id"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "trials = 0\n").unwrap();
    let o = dfrc(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));

    let o = dfrc(&["pipeline", "--config", "/nonexistent/cfg.toml"]);
    assert!(!o.status.success());
}

#[test]
fn figure_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = dfrc(&["figure", "--id", "fig10", "--trials", "2", "--seed", "4", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = std::fs::read_to_string(dir.path().join("fig10.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("# experiment=fig10 seed=4 trials=2"));
    assert!(lines.next().unwrap().starts_with("# snr_db"));
    assert_eq!(lines.next(), Some("snr_db,variant,se_mean,se_stderr,trials,failures"));
    // 5 SNR points, SIC and no-SIC
    assert_eq!(lines.count(), 10);
}

#[test]
fn figure_accepts_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig7.toml");
    std::fs::write(&cfg, "experiment_id = \"fig7\"\nsnr_grid_db = [5.0]\nvariant_set = [\"hbf_opt\"]\n").unwrap();
    let o = dfrc(&[
        "figure", "--id", "fig7", "--trials", "2", "--config", cfg.to_str().unwrap(), "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = std::fs::read_to_string(dir.path().join("fig7.csv")).unwrap();
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn scene_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.toml");
    let p = path.to_str().unwrap();
    assert!(dfrc(&["scene", "gen", "--k", "6", "--l", "2", "--seed", "9", "--out", p]).status.success());
    let shown = stdout(&dfrc(&["scene", "show", p]));
    assert!(shown.starts_with("K = 6, L = 2"));
    assert_eq!(shown.lines().filter(|l| l.contains("comm")).count(), 2);
    assert_eq!(shown.lines().filter(|l| l.contains("UE AoA")).count(), 2);

    std::fs::write(&path, "angles_deg = [1.0]\n").unwrap();
    assert!(!dfrc(&["scene", "show", p]).status.success());
}

#[test]
fn pipeline_default_reports_every_stage() {
    let o = dfrc(&["pipeline", "--config", "default"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for section in ["target search (BS side)", "DL spectral efficiency", "tracking PRI", "UL SE with SIC"] {
        assert!(out.contains(section), "missing {section}");
    }
}
