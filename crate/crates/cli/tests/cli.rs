use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use interchange::netmodel::parse_case_document;
use interchange::oracle::{grid_search_schedule, OracleOptions, ScanGrid};
use interchange_cli::normalize_args;
use serde_json::Value;

fn case(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

fn interchange(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_interchange"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn sixbus() -> String {
    case("sixbus.json").display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.unwrap()
                .iter()
                .map(|v| match v {
                    "true" => 1.0,
                    "false" => 0.0,
                    _ => v.parse().unwrap(),
                })
                .collect()
        })
        .collect();
    (header, rows)
}

#[test]
fn normalization_accepts_run_positional_and_load_shorthand() {
    let a = normalize_args(["bin", "run", "--case", "x.json", "--cmd", "sto", "--d5", "250"]);
    assert_eq!(a, ["bin", "--case", "x.json", "--cmd", "sto", "--load", "5=250"]);
    let b = normalize_args(["bin", "sto", "--case", "x.json", "--d12=3.5"]);
    assert_eq!(b, ["bin", "--cmd", "sto", "--case", "x.json", "--load", "12=3.5"]);
    // Flags that merely start with `--d` are left alone.
    let c = normalize_args(["bin", "--dry", "--d"]);
    assert_eq!(c, ["bin", "--dry", "--d"]);
}

#[test]
fn sto_row_closes_the_gap_and_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["run", "--case", &sixbus(), "--cmd", "sto", "--d5", "250"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    let row = &doc["summary"][0];
    assert_eq!(row["method"], "STO");
    let q = row["q"].as_f64().unwrap();
    let gap = row["expected_gap"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-3, "gap {gap}");

    // Independent check: brute-force minimizer of the expected cost.
    let text = fs::read_to_string(case("sixbus.json")).unwrap();
    let d = parse_case_document(&text).unwrap();
    let sc = grid_search_schedule(&d.network, &d.forecast, &ScanGrid::default(), &OracleOptions::default()).unwrap();
    assert!((q - sc.argmin).abs() <= 0.1 + 1e-9, "q {q} vs argmin {}", sc.argmin);
    let cost = row["expected_cost"].as_f64().unwrap();
    assert!(cost <= sc.min_cost + 1e-6 * sc.min_cost, "cost {cost} vs grid {}", sc.min_cost);

    for r in [1, 2] {
        let (header, rows) = read_csv(&dir.path().join(format!("curves_STO_region{r}.csv")));
        assert_eq!(header, ["q", "price", "degenerate"]);
        assert!(rows.len() >= 201);
    }
}

#[test]
fn summary_text_matches_schedule_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["compare", "--case", &sixbus()], dir.path());
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    let text = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let lines: Vec<&str> = text.lines().skip(1).collect();
    let rows = doc["summary"].as_array().unwrap();
    assert_eq!(lines.len(), rows.len());
    for (line, row) in lines.iter().zip(rows) {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[0], row["method"].as_str().unwrap());
        for (i, key) in ["q", "expected_cost", "expected_gap"].iter().enumerate() {
            let v: f64 = f[i + 1].parse().unwrap();
            assert_eq!(v.to_bits(), row[*key].as_f64().unwrap().to_bits(), "{key}");
        }
    }
    assert_eq!(doc["schedules"][0]["q"], rows[0]["q"]);
    assert_eq!(doc["schedules"][1]["q"], rows[1]["q"]);
}

#[test]
fn sigma_sweep_keeps_to_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["sweep-sigma", "--case", &sixbus(), "--sigmas", "0,5,10,15,20"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let (header, rows) = read_csv(&dir.path().join("sweep_sigma.csv"));
    assert_eq!(&header[..3], ["sigma", "q_to", "q_sto"]);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r[1], rows[0][1], "TO moved with sigma");
    }
    assert_eq!(rows[0][1], rows[0][2], "TO and STO differ at sigma = 0");
}

#[test]
fn repeated_runs_are_bit_identical_across_execution_modes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(interchange(
        &["compare", "--case", &sixbus(), "--expectation", "mc", "--mc-samples", "64", "--seed", "7"],
        a.path()
    )
    .status
    .success());
    assert!(interchange(
        &[
            "compare",
            "--case",
            &sixbus(),
            "--expectation",
            "mc",
            "--mc-samples",
            "64",
            "--seed",
            "7",
            "--sequential"
        ],
        b.path()
    )
    .status
    .success());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn oracle_writes_a_scan() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["oracle", "--case", &sixbus()], dir.path());
    assert!(out.status.success());
    let (header, rows) = read_csv(&dir.path().join("scan.csv"));
    assert_eq!(header, ["q", "expected_cost", "expected_gap"]);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
}

#[test]
fn missing_case_exits_one_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["run", "--case", "missing.json", "--cmd", "sto"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["exit_code"], 1);
    assert!(doc["message"].as_str().unwrap().contains("missing.json"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let infeasible = interchange(&["sto", "--case", &sixbus(), "--d5", "5000"], dir.path());
    assert_eq!(infeasible.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let parse = interchange(&["validate", "--case", bad.to_str().unwrap()], dir.path());
    assert_eq!(parse.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&parse.stdout).unwrap();
    assert_eq!(doc["kind"], "parse");

    let neg = interchange(&["sto", "--case", &sixbus(), "--sigma", "-1"], dir.path());
    assert_eq!(neg.status.code(), Some(1));
}

#[test]
fn matpower_case_validates_with_its_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["validate", "--case", case("case118.m").to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(text.contains("buses: 118"));
}

#[test]
fn proxy_sweep_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = interchange(&["sweep-proxy", "--case", &sixbus(), "--pairs", "1:6,2:6,1:5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let (_, rows) = read_csv(&dir.path().join("sweep_proxy.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0][0], rows[0][1]), (1.0, 6.0));
}
