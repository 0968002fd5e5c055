use std::path::Path;
use std::process::{Command, Output};

use snspd_array::formats::{parse_timetags, read_crosstalk_csv, read_sde_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snspd-array"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn snspd-array")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_tag_file_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--duration",
        "0.01",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("timetags.txt")).unwrap();
    assert!(text.starts_with("# timetags v1 duration_ps=10000000000 seed=20240601\n"));
    let file = parse_timetags(&text).unwrap();
    assert!(file.records.iter().all(|r| r.origin.is_some()));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("channel,rate_hz"));
}

#[test]
fn measured_view_drops_origin() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--measured",
        "--duration",
        "0.001",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("timetags.txt")).unwrap();
    let file = parse_timetags(&text).unwrap();
    assert!(!file.records.is_empty());
    assert!(file.records.iter().all(|r| r.origin.is_none()));
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "simulate",
            "--seed",
            "42",
            "--duration",
            "0.01",
            "--out",
            &out_arg(d.path()),
        ]);
        assert!(o.status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("timetags.txt")).unwrap();
    assert_eq!(read(&a), read(&b));

    let c = tempfile::tempdir().unwrap();
    run(&[
        "simulate",
        "--seed",
        "43",
        "--duration",
        "0.01",
        "--out",
        &out_arg(c.path()),
    ]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn dark_only_tag_count() {
    // 16 elements at 5,000 dark counts/s for 10 s: 800,000 expected.
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--duration",
        "10",
        "--set",
        "source.rate_hz=0",
        "--set",
        "crosstalk.active=none",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("timetags.txt")).unwrap();
    let n = parse_timetags(&text).unwrap().records.len() as f64;
    let expected = 16.0 * 5000.0 * 10.0;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n}");
}

#[test]
fn effective_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--seed",
        "7",
        "--duration",
        "0.002",
        "--set",
        "element.2.dead_time_ns=20",
        "--out",
        &out_arg(a.path()),
    ]);
    assert!(o.status.success());
    let echo = a.path().join("effective_config.conf");
    let b = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--config",
        &echo.display().to_string(),
        "--out",
        &out_arg(b.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.path().join("timetags.txt")).unwrap(),
        std::fs::read(b.path().join("timetags.txt")).unwrap()
    );
}

#[test]
fn config_errors_name_the_key_and_exit_1() {
    let o = run(&["simulate", "--set", "element.3.bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("element.3.bogus"));

    let o = run(&["sweep", "--set", "element.5.i_width_ua=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("element.5.i_width_ua"));

    let o = run(&["simulate", "--config", "/nonexistent/file.conf"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["crosstalk", "--regime", "medium"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("crosstalk_run.regime"));

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sde_curve_holds_half_efficiency_at_ghz() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sde-curve",
        "--set",
        "sde_curve.min_photons=2e5",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows =
        read_sde_csv(&std::fs::read_to_string(dir.path().join("sde_curve.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 7);
    let last = rows.last().unwrap();
    assert_eq!(last.0, 1e9);
    assert!(last.1 >= 0.50 && last.2 >= 0.50, "{last:?}");
}

#[test]
fn fit_reset_recovers_mean_tau_and_refits_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "fit-reset",
        "--set",
        "crosstalk.active=none",
        "--set",
        "sweep.target_counts=5e4",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fits_text = std::fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    let fits = snspd_array::formats::read_fits_csv(&fits_text).unwrap();
    assert_eq!(fits.len(), 16);
    let mean = fits.iter().map(|f| f.1[0]).sum::<f64>() / 16.0;
    assert!((mean - 9.6).abs() / 9.6 < 0.05, "{mean}");

    let again = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    let o = run(&[
        "fit-reset",
        "--set",
        "crosstalk.active=none",
        "--input",
        &sweep.display().to_string(),
        "--out",
        &out_arg(again.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fits_text,
        std::fs::read_to_string(again.path().join("fits.csv")).unwrap()
    );
}

#[test]
fn crosstalk_low_regime_matches_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "crosstalk",
        "--regime",
        "low",
        "--duration",
        "0.5",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows =
        read_crosstalk_csv(&std::fs::read_to_string(dir.path().join("crosstalk.csv")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 240);
    let max = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    assert!((max - 0.1).abs() < 0.03, "{max}");
    assert!(dir.path().join("crosstalk_delay.csv").exists());
}

#[test]
fn report_lists_missing_inputs() {
    let empty = tempfile::tempdir().unwrap();
    let o = run(&["report", "--out", &out_arg(empty.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for f in ["sde_curve.csv", "fits.csv", "jitter.csv", "crosstalk.csv"] {
        assert!(err.contains(f), "{err}");
    }

    let partial = tempfile::tempdir().unwrap();
    std::fs::write(
        partial.path().join("sde_curve.csv"),
        "flux,sde_mc,sde_analytic\n3000000,0.834,0.8327\n",
    )
    .unwrap();
    let o = run(&["report", "--out", &out_arg(partial.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(partial.path().join("report.txt")).unwrap();
    assert!(text.contains("83.40 %"));
    assert!(text.contains("reset time: missing"));
    assert!(text.contains("element jitter: missing"));
    assert!(text.contains("missing inputs: fits.csv, jitter.csv, crosstalk.csv"));
}

#[test]
fn malformed_report_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fits.csv"), "channel,tau\n0,1\n").unwrap();
    let o = run(&["report", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fits.csv"));
}

#[test]
fn no_temporary_files_left_behind() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--duration",
        "0.001",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["effective_config.conf", "timetags.txt"]);
}
