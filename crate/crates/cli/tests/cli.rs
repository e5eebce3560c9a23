use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn gridflex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridflex")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_matches_golden_files() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut cases: Vec<(Vec<&str>, &str)> = vec![(vec!["--help"], "help.txt")];
    let subs = ["validate", "pf", "sens", "flex", "opf", "run", "report"];
    let names: Vec<String> = subs.iter().map(|s| format!("{s}.txt")).collect();
    for (s, n) in subs.iter().zip(&names) {
        cases.push((vec![s, "--help"], n.as_str()));
    }
    for (args, file) in cases {
        let out = gridflex(&args);
        assert!(out.status.success(), "{args:?}");
        let want = fs::read_to_string(golden.join(file)).unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), want, "{args:?} differs from {file}");
    }
}

#[test]
fn validate_reports_the_small_network() {
    let out = gridflex(&["validate", "--network", path(&fixture("network_small.json"))]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("14 buses"), "{text}");
    assert!(text.contains("radial: slack S"), "{text}");
}

#[test]
fn flex_writes_a_polygon() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridflex(&[
        "flex",
        "--network",
        path(&fixture("network_small.json")),
        "--grid",
        "T1",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("flex_T1.json")).unwrap()).unwrap();
    assert!(doc["vertices"].as_array().is_some_and(|v| v.len() >= 3), "{doc}");
}

#[test]
fn run_and_report_are_reproducible() {
    let config = fixture("scenario.toml");
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let out = gridflex(&["run", "--config", path(&config), "--case", "monitoring", "--jobs", "2", "--out", path(dir.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join("report_monitoring_current.json")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());

    let out = gridflex(&["report", "--out", path(dir.path())]);
    assert!(out.status.success());
    let kpis = fs::read_to_string(dir.path().join("kpis.csv")).unwrap();
    assert!(kpis.starts_with("case,scenario,losses_kwh,violation_chf,flex_mv_lv_kw,hosting_capacity_kwp"), "{kpis}");
    assert!(kpis.contains("monitoring,current,"), "{kpis}");
}

#[test]
fn missing_input_exits_with_two() {
    let out = gridflex(&["pf", "--network", "/does/not/exist.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));

    let out = gridflex(&["run", "--case", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_power_flow_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("profiles_small.csv")).unwrap();
    let mut lines = text.lines();
    let mut heavy = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let mut cols: Vec<String> = line.split(',').map(str::to_owned).collect();
        cols[3] = (cols[3].parse::<f64>().unwrap() * 1000.0).to_string();
        heavy.push_str(&cols.join(","));
        heavy.push('\n');
    }
    let profiles = dir.path().join("heavy.csv");
    fs::write(&profiles, heavy).unwrap();
    let out = gridflex(&[
        "pf",
        "--network",
        path(&fixture("network_small.json")),
        "--profiles",
        path(&profiles),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}
