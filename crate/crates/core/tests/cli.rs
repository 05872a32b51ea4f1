use std::path::Path;
use std::process::{Command, Output};

use adaptive_mm::calibration::{write_intervals_file, IntervalRecord, LevelObs};
use adaptive_mm::recursion::Catalog;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptive-mm"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .to_string()
}

#[test]
fn help_documents_exit_codes_and_formats() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "EXIT CODES",
        "INTERVAL CSV",
        "RAW TRADES CSV",
        "CALIBRATION FILE",
        "CATALOG FILE",
        "QUOTE STATE LINE",
        "LEDGER CSV",
        "REPORT CSV",
        "oracle-check",
        "--section.key=value",
    ] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn full_size_catalog_has_one_record_per_step_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(dir.path(), &["catalog", "--paths.out_dir=o", "--model.scenario=g3", "--model.lambda=0.0005"]);
    assert_eq!(field(&line, "records"), (19_801 * 81).to_string());
    let text = std::fs::read_to_string(dir.path().join("o/catalog.txt")).unwrap();
    let records = text.split("[records]\n").nth(1).unwrap().lines().count();
    // Header row plus one row per (step, scenario).
    assert_eq!(records, 1 + 19_801 * 81);
    // Reading and re-serializing reproduces the file byte for byte.
    let cat = Catalog::read_file(&dir.path().join("o/catalog.txt")).unwrap();
    let mut again = Vec::new();
    cat.write_to(&mut again).unwrap();
    assert!(again == text.as_bytes());
}

/// Intervals where both sides see identical flow.
fn mirrored_intervals(n: usize) -> Vec<IntervalRecord> {
    (0..n)
        .map(|i| {
            let active = i % 3 != 0;
            let levels: Vec<LevelObs> = if active {
                let scale = 1.0 + (i % 7) as f64 * 0.1;
                (1..=4)
                    .map(|o| LevelObs {
                        offset: o,
                        volume: (scale * (400.0 - 90.0 * o as f64 - (i % 5) as f64 * 10.0)).max(0.0),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            IntervalRecord {
                index: i,
                buy_mo: active,
                sell_mo: active,
                mid_price: 13_000.0,
                ask_levels: levels.clone(),
                bid_levels: levels,
            }
        })
        .collect()
}

#[test]
fn symmetric_calibration_quotes_symmetrically_at_zero_inventory() {
    let dir = tempfile::tempdir().unwrap();
    write_intervals_file(&dir.path().join("data.csv"), &mirrored_intervals(600)).unwrap();
    let common = [
        "--paths.data=data.csv",
        "--paths.calibration=calib.toml",
        "--paths.out_dir=o",
        "--model.scenario=g2",
        "--model.n_steps=50",
    ];
    let calib = ok(dir.path(), &[&["calibrate"][..], &common].concat());
    assert_eq!(field(&calib, "intervals"), "600");
    ok(dir.path(), &[&["catalog", "--model.source=calibration"][..], &common].concat());
    for history in ["11,11,00", "00,11,11", "00,00,00"] {
        let state = format!("step=10 inventory=0 mid=13000 history={history}");
        let out = ok(dir.path(), &[&["quote", "--state", &state][..], &common].concat());
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("ask,bid"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let (a, b) = (row[0] - 13_000.0, 13_000.0 - row[1]);
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{history}: {a} vs {b}");
        assert!(a > 0.0);
    }
}

#[test]
fn quote_reads_the_state_from_stdin() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["catalog", "--paths.out_dir=o", "--model.scenario=g2", "--model.n_steps=20"]);
    let mut child = bin()
        .current_dir(dir.path())
        .args(["quote", "--paths.out_dir=o"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"step=3 inventory=250 mid=13000 history=10,00,01\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // Long inventory skews both quotes down.
    assert!(row[0] > 13_000.0 && row[1] < 13_000.0);
}

#[test]
fn compare_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "compare".to_string(),
            format!("--paths.out_dir={out}"),
            "--model.scenario=g2".into(),
            "--model.n_steps=300".into(),
            "--run.runs=12".into(),
            "--run.levels=[1,2,3]".into(),
        ]
    };
    let a: Vec<String> = args("a");
    let b: Vec<String> = args("b");
    let sa = ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(dir.path(), &b.iter().map(String::as_str).collect::<Vec<_>>());
    for file in ["compare_summary.csv", "compare_runs.csv"] {
        let x = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let summary = std::fs::read_to_string(dir.path().join("a/compare_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 5);
    assert!(summary.lines().nth(1).unwrap().starts_with("adaptive,12,"));
    assert!(sa.contains("strategy=level-3"));
}

#[test]
fn simulate_calibrate_catalog_backtest_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--paths.out_dir=o",
        "--paths.calibration=o/calib.toml",
        "--paths.catalog=o/catalog.txt",
        "--model.scenario=g2",
        "--model.n_steps=3999",
        "--run.paths=1",
    ];
    let sim = ok(dir.path(), &[&["simulate"][..], &common].concat());
    assert_eq!(field(&sim, "intervals"), "4000");
    let data = ["--paths.data=o/paths/path_00000.csv"];
    ok(dir.path(), &[&["calibrate"][..], &common, &data].concat());
    ok(dir.path(), &[&["catalog", "--model.source=calibration"][..], &common].concat());
    let bt = ok(dir.path(), &[&["backtest"][..], &common, &data].concat());
    assert_eq!(field(&bt, "intervals"), "4000");
    let ledger = std::fs::read_to_string(dir.path().join("o/ledger.csv")).unwrap();
    assert_eq!(ledger.lines().next(), Some("step,scenario,a,b,q_plus,q_minus,W,I,S"));
    assert_eq!(ledger.lines().count(), 4001);
    let diag = ok(dir.path(), &[&["diagnose"][..], &common].concat());
    assert!(diag.lines().any(|l| l.starts_with("admissibility ")));
    assert!(diag.lines().any(|l| l.starts_with("symmetry ")));
    assert!(dir.path().join("o/config.toml").exists());
}

#[test]
fn oracle_check_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(dir.path(), &["oracle-check", "--paths.out_dir=o", "--run.oracle_instances=6"]);
    assert_eq!(field(&line, "instances"), "6");
    let csv = std::fs::read_to_string(dir.path().join("o/oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[model]\nscenario = \"g2\"\nn_steps = 10\n[paths]\nout_dir = \"o\"\n",
    )
    .unwrap();
    let line = ok(dir.path(), &["catalog", "--config", "run.toml"]);
    assert_eq!(field(&line, "records"), (11 * 27).to_string());
    let line = ok(dir.path(), &["catalog", "--config", "run.toml", "--model.n_steps", "4", "--model.scenario=constant"]);
    assert_eq!(field(&line, "records"), "5");
}

fn error_line(out: &Output) -> (i32, String) {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let line = stderr.lines().last().unwrap_or("").to_string();
    (out.status.code().unwrap(), line)
}

#[test]
fn failures_exit_with_distinct_codes_and_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32, &str); 5] = [
        (&["catalog", "--model.lambda=-1"], 2, "config"),
        (&["catalog", "--model.bogus=1"], 2, "config"),
        (&["backtest", "--paths.catalog=missing.txt"], 3, "io"),
        (&["calibrate", "--paths.data=missing.csv"], 3, "io"),
        (&["catalog", "--model.lambda=0", "--model.phi=0", "--model.n_steps=3"], 5, "model"),
    ];
    for (args, code, kind) in cases {
        let (status, line) = error_line(&run(dir.path(), args));
        assert_eq!(status, code, "{args:?}: {line}");
        assert!(line.starts_with(&format!("error kind={kind} code={code} message=\"")), "{line}");
    }
    ok(dir.path(), &["catalog", "--paths.out_dir=o", "--model.n_steps=5", "--model.scenario=g2"]);
    let (status, line) = error_line(&run(dir.path(), &["quote", "--paths.out_dir=o", "--state", "step=1 mid=1"]));
    assert_eq!(status, 4, "{line}");
    assert!(line.starts_with("error kind=parse code=4"));
    std::fs::write(dir.path().join("bad.csv"), "interval_index,buy_mo\n1,2\n").unwrap();
    let (status, _) = error_line(&run(dir.path(), &["calibrate", "--paths.data=bad.csv"]));
    assert!(status == 4 || status == 7, "{status}");
}
