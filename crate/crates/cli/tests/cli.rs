use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn sicqta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicqta"))
        .args(args)
        .env_remove("SICQTA_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// CSV rows as header-keyed maps.
fn rows(csv: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn field<'a>(row: &'a [(String, String)], key: &str) -> &'a str {
    &row.iter().find(|(h, _)| h == key).unwrap().1
}

#[test]
fn resolve_four_device_example() {
    let out = stdout(&sicqta(&[
        "resolve",
        "--algorithm",
        "sicqta",
        "--u",
        "3",
        "--ids",
        "000,001,100,101",
    ]));
    let trace: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(trace["params"]["u"], 3);
    let slots = trace["slots"].as_array().unwrap();
    assert_eq!(slots.len(), 6);
    let queries: Vec<&str> = slots.iter().map(|s| s["query"].as_str().unwrap()).collect();
    assert_eq!(queries, ["", "0", "00", "000", "10", "100"]);
    assert_eq!(
        slots[3]["decoded_by_cancellation"],
        serde_json::json!(["001"])
    );
    assert_eq!(trace["decoded"]["101"], 6);
}

#[test]
fn resolve_single_device() {
    let out = stdout(&sicqta(&[
        "resolve",
        "--algorithm",
        "qta",
        "--u",
        "3",
        "--ids",
        "010",
    ]));
    let trace: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(trace["slots"].as_array().unwrap().len(), 1);
    assert_eq!(trace["slots"][0]["outcome"], "S");
}

#[test]
fn invalid_input_exits_with_2() {
    for args in [
        &[
            "resolve",
            "--algorithm",
            "qta",
            "--u",
            "3",
            "--ids",
            "000,000",
        ][..],
        &["resolve", "--u", "3", "--ids", "1000"],
        &["resolve", "--u", "3"],
        &["bounds", "--u", "3", "--m-range", "1..4"],
        &["bounds", "--u", "3", "--m-range", "2..9"],
        &["batch", "--u", "3", "--m", "9", "--seed", "1"],
        &[
            "batch", "--u", "3", "--m", "2", "--trials", "0", "--seed", "1",
        ],
        &["batch", "--u", "3", "--m", "2"],
        &["sweep", "--axis", "m=5..1", "--u", "4", "--seed", "1"],
        &["table1", "--mode", "guess"],
        &["arrivals", "--u", "4", "--lambda", "-1", "--seed", "1"],
    ] {
        assert_eq!(sicqta(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bounds_rows() {
    let csv = stdout(&sicqta(&["bounds", "--u", "6", "--m-range", "2..64"]));
    let table = rows(&csv);
    assert_eq!(table.len(), 63);
    assert_eq!(field(&table[62], "M"), "64");
    assert_eq!(field(&table[62], "sic_upper"), "64");
    let csv = stdout(&sicqta(&["bounds", "--u", "3", "--m-range", "4..4"]));
    assert_eq!(field(&rows(&csv)[0], "sic_upper"), "6");
}

#[test]
fn batch_reports_no_violations() {
    let out = sicqta(&[
        "batch",
        "--algorithm",
        "sicqta",
        "--u",
        "6",
        "--m",
        "32",
        "--trials",
        "10000",
        "--seed",
        "7",
    ]);
    let csv = stdout(&out);
    let table = rows(&csv);
    assert_eq!(table.len(), 10_000);
    assert!(table.iter().all(|r| field(r, "M") == "32"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bound violations 0"));
}

#[test]
fn arrivals_below_saturation_are_stable() {
    let csv = stdout(&sicqta(&[
        "arrivals",
        "--algorithm",
        "sicqta",
        "--u",
        "4",
        "--lambda",
        "0.9",
        "--horizon",
        "200000",
        "--seed",
        "7",
    ]));
    let table = rows(&csv);
    assert_eq!(field(&table[0], "stable_flag"), "true");
    assert_eq!(field(&table[0], "lambda"), "0.900000");
}

#[test]
fn sweep_row_counts() {
    let csv = stdout(&sicqta(&[
        "sweep", "--axis", "m=1..64", "--u", "6", "--trials", "50", "--seed", "3",
    ]));
    assert_eq!(rows(&csv).len(), 64);
    let csv = stdout(&sicqta(&[
        "sweep",
        "--axis",
        "lambda=0.2..0.4:0.1",
        "--u",
        "4",
        "--horizon",
        "5000",
        "--seed",
        "3",
    ]));
    assert_eq!(rows(&csv).len(), 3);
}

#[test]
fn table1_formula_rows() {
    let csv = stdout(&sicqta(&["table1", "--mode", "formula"]));
    let table = rows(&csv);
    let sic = |m: &str| -> Vec<String> {
        table
            .iter()
            .filter(|r| field(r, "algorithm") == "sicqta" && field(r, "M") == m)
            .map(|r| field(r, "N_supported").to_string())
            .collect()
    };
    assert_eq!(sic("3"), ["8", "16", "32", "64"]);
    assert_eq!(sic("4"), ["4", "4", "8", "8"]);
    let m4l5 = table
        .iter()
        .find(|r| field(r, "algorithm") == "sicqta" && field(r, "M") == "4" && field(r, "L") == "5")
        .unwrap();
    assert_eq!(field(m4l5, "paper_reference_value"), "8");
    assert_eq!(field(m4l5, "mismatch"), "true");
}

#[test]
fn out_file_gets_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bounds.csv");
    let codebook = dir.path().join("trace.codebook");
    stdout(&sicqta(&[
        "bounds",
        "--u",
        "4",
        "--m-range",
        "2..16",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(rows(&fs::read_to_string(&out).unwrap()).len(), 15);
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("bounds.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "bounds");
    assert_eq!(manifest["parameters"]["m_range"], "2..16");
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["duration_secs"].is_number());

    let trace = dir.path().join("trace.json");
    stdout(&sicqta(&[
        "resolve",
        "--u",
        "3",
        "--ids",
        "000,001,100,101",
        "--codebook",
        codebook.to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
    ]));
    assert_eq!(
        fs::read_to_string(&codebook).unwrap(),
        "d=6 N=4\n111100\n111000\n100011\n100010\n"
    );
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("trace.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);

    let eval: Value = serde_json::from_str(&stdout(&sicqta(&[
        "codebook",
        "--file",
        codebook.to_str().unwrap(),
        "--m",
        "4",
    ])))
    .unwrap();
    assert_eq!(eval["min_successes"], 4);
    assert_eq!(eval["exhaustive"], true);
}

#[test]
fn random_resolve_is_seeded() {
    let a = stdout(&sicqta(&[
        "resolve", "--u", "8", "--random", "20", "--seed", "5",
    ]));
    let b = stdout(&sicqta(&[
        "resolve", "--u", "8", "--random", "20", "--seed", "5",
    ]));
    assert_eq!(a, b);
    let trace: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(trace["participants"].as_array().unwrap().len(), 20);
}

#[test]
fn worker_count_does_not_change_output() {
    let run = |workers: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_sicqta"))
            .args([
                "sweep",
                "--axis",
                "m=2,17,40",
                "--u",
                "6",
                "--trials",
                "3000",
                "--seed",
                "11",
            ])
            .env("SICQTA_WORKERS", workers)
            .output()
            .unwrap();
        stdout(&out)
    };
    assert_eq!(run("1"), run("8"));
}
