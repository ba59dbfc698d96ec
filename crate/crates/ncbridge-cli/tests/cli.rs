//! End-to-end tests of the command line binary: exit codes, fidelity of the
//! machine output format and the byte-level determinism of seeded simulation
//! runs, serial or parallel.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ncbridge::{
    generate, nc_estimate, read_csv, write_csv, ColumnMap, DgpConfig, EstimateReport,
    GeneratedData, GmmReport, Scenario, SensitivityResult, SeriesAnalysis,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ncbridge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("stdout is text")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process was not signalled")
}

fn structural_csv(dir: &Path, n: usize, eta: f64, xi: f64, seed: u64) -> PathBuf {
    let config = DgpConfig::new(Scenario::StructuralContinuous, eta, xi, n)
        .expect("valid study configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match generate(&config, &mut rng).expect("generation succeeds") {
        GeneratedData::Iid(data) => data,
        GeneratedData::Series(_) => unreachable!("structural draws are unit records"),
    };
    let path = dir.join("data.csv");
    write_csv(&data, &path).expect("dataset writes");
    path
}

fn example_summary(dir: &Path, rd_zw: &str) -> PathBuf {
    let path = dir.join("summary.txt");
    let text = format!(
        "rd_xy_given_z = -150\nrd_xw_given_z = 0.15\nrd_zy_given_x = -10\nrd_zw_given_x = {rd_zw}\n"
    );
    std::fs::write(&path, text).expect("summary file writes");
    path
}

fn simulate_into(dir: &Path, threads: &str) {
    let output = bin()
        .args([
            "simulate",
            "--scenario",
            "structural",
            "--eta",
            "0.3",
            "--xi",
            "0.2",
            "--n",
            "400",
            "--reps",
            "30",
            "--seed",
            "99",
            "--estimators",
            "nc,ols",
            "--out-dir",
            dir.to_str().expect("utf-8 path"),
        ])
        .env("NC_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "simulate failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn criterion_11_same_seed_reproduces_report_files_serial_or_parallel() {
    let root = tempfile::tempdir().expect("temp dir");
    let serial = root.path().join("serial");
    let parallel = root.path().join("parallel");
    let repeat = root.path().join("repeat");
    simulate_into(&serial, "1");
    simulate_into(&parallel, "4");
    simulate_into(&repeat, "4");

    let mut identical = true;
    let mut detail = String::new();
    for name in ["simulation_report.json", "simulation_table.txt", "replicates.csv"] {
        let base = std::fs::read(serial.join(name)).expect("report file exists");
        let same = [&parallel, &repeat]
            .iter()
            .all(|dir| std::fs::read(dir.join(name)).expect("report file exists") == base);
        identical &= same;
        if !detail.is_empty() {
            detail.push_str(", ");
        }
        detail.push_str(name);
        detail.push_str(if same { " identical" } else { " differs" });
    }
    let verdict = if identical { "PASS" } else { "FAIL" };
    println!("criterion 11 (seeded simulation reports, serial and parallel): {verdict} - {detail}");
    assert!(identical, "criterion 11: {detail}");
}

#[test]
fn machine_estimate_matches_the_in_process_report_exactly() {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv_path = structural_csv(dir.path(), 4000, 0.5, 0.0, 31);
    let csv_arg = csv_path.to_str().expect("utf-8 path");
    let output = run(&[
        "estimate", csv_arg, "--x", "x", "--y", "y", "--z", "z", "--w", "w", "--v", "v0",
        "--method", "nc", "--format", "machine",
    ]);
    let parsed: EstimateReport =
        serde_json::from_str(&stdout(&output)).expect("machine output parses");

    let map = ColumnMap {
        x: "x".into(),
        y: "y".into(),
        z: "z".into(),
        w: "w".into(),
        v: vec!["v0".into()],
        transforms: HashMap::new(),
    };
    let data = read_csv(&csv_path, &map).expect("csv reads");
    let estimate = nc_estimate(&data).expect("nc solves");
    let expected = EstimateReport::from_estimate(&estimate, data.len(), 0.95);
    assert_eq!(parsed, expected);
    assert!(
        (parsed.estimate - 0.5).abs() <= 4.0 * parsed.std_error,
        "estimate {} strays from the truth 0.5 (se {})",
        parsed.estimate,
        parsed.std_error
    );

    let reserialized = serde_json::to_string(&parsed).expect("report serializes");
    let reparsed: EstimateReport = serde_json::from_str(&reserialized).expect("report reparses");
    assert_eq!(reparsed, parsed);
}

#[test]
fn machine_gmm_report_round_trips_and_centers_on_the_truth() {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv_path = structural_csv(dir.path(), 2500, 0.5, 0.0, 47);
    let out_path = dir.path().join("fit.json");
    let output = run(&[
        "estimate",
        csv_path.to_str().expect("utf-8 path"),
        "--x", "x", "--y", "y", "--z", "z", "--w", "w", "--v", "v0",
        "--bridge", "linear_additive",
        "--contrast", "1", "0",
        "--format", "machine",
        "--output",
        out_path.to_str().expect("utf-8 path"),
    ]);
    assert!(stdout(&output).is_empty(), "--output diverts the report from stdout");

    let text = std::fs::read_to_string(&out_path).expect("report file exists");
    let report: GmmReport = serde_json::from_str(&text).expect("machine output parses");
    assert!(report.converged);
    assert_eq!(report.parameters, ["1", "x", "v0", "w", "delta"]);
    let x_hat = report.estimates[1];
    let delta_hat = report.estimates[4];
    assert!(
        (x_hat - 0.5).abs() <= 4.0 * report.std_errors[1],
        "x coefficient {x_hat} strays from the truth 0.5"
    );
    assert!(
        (delta_hat - x_hat).abs() < 1e-8,
        "unit contrast {delta_hat} differs from the x coefficient {x_hat}"
    );

    let reparsed: GmmReport =
        serde_json::from_str(&serde_json::to_string(&report).expect("report serializes"))
            .expect("report reparses");
    assert_eq!(reparsed, report);
}

#[test]
fn timeseries_command_reports_both_estimates_and_the_confounding_test() {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = DgpConfig::new(Scenario::Timeseries, 0.3, 0.9, 600)
        .expect("valid study configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let frame = match generate(&config, &mut rng).expect("generation succeeds") {
        GeneratedData::Series(frame) => frame,
        GeneratedData::Iid(_) => unreachable!("time-series draws are series"),
    };
    let path = dir.path().join("series.csv");
    let mut writer = csv::Writer::from_path(&path).expect("series csv opens");
    writer.write_record(["x", "y", "v0"]).expect("header writes");
    let v = &frame.covariates()[0];
    for i in 0..frame.len() {
        writer
            .write_record([
                frame.x()[i].to_string(),
                frame.y()[i].to_string(),
                v[i].to_string(),
            ])
            .expect("row writes");
    }
    writer.flush().expect("series csv flushes");
    let csv_arg = path.to_str().expect("utf-8 path");

    let table = stdout(&run(&[
        "timeseries", csv_arg, "--x", "x", "--y", "y", "--v", "v0",
        "--exposure-lags", "2", "--hac", "10",
    ]));
    assert!(table.contains("lagged design:"), "table: {table}");
    assert!(table.contains("confounding test: w ~ x + z + controls"), "table: {table}");
    assert!(table.contains("alpha2 (z)"), "table: {table}");

    let machine = stdout(&run(&[
        "timeseries", csv_arg, "--x", "x", "--y", "y", "--v", "v0",
        "--exposure-lags", "2", "--hac", "10", "--format", "machine",
    ]));
    let analysis: SeriesAnalysis = serde_json::from_str(&machine).expect("machine output parses");
    assert_eq!(analysis.hac_bandwidth, 10);
    assert!(
        (analysis.nc_estimate - 0.7).abs() <= 6.0 * analysis.nc_std_error,
        "series nc estimate {} strays from the truth 0.7",
        analysis.nc_estimate
    );
    let reparsed: SeriesAnalysis =
        serde_json::from_str(&serde_json::to_string(&analysis).expect("analysis serializes"))
            .expect("analysis reparses");
    assert_eq!(reparsed, analysis);
}

#[test]
fn summary_positive_control_reproduces_the_published_adjustment() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = example_summary(dir.path(), "0.11");
    let path_arg = path.to_str().expect("utf-8 path");
    let output = run(&[
        "summary", "--summary-file", path_arg, "--positive-control",
        "--ace-xw-range", "-2", "0", "--format", "machine",
    ]);
    let result: SensitivityResult =
        serde_json::from_str(&stdout(&output)).expect("machine output parses");
    assert!((result.gamma2 - (-10.0 / 0.11)).abs() < 1e-9, "gamma2 {}", result.gamma2);
    assert!((result.gamma1 - (-1500.0 / 11.0)).abs() < 1e-9, "gamma1 {}", result.gamma1);
    let threshold = result.explain_away_threshold().expect("nonzero bridge slope");
    assert!((threshold - (-1.5)).abs() <= 0.01, "threshold {threshold}");

    let table = stdout(&run(&[
        "summary", "--summary-file", path_arg, "--positive-control", "--ace-xw-range", "-2", "0",
    ]));
    assert!(table.contains("-1.5000"), "table shows the explain-away threshold: {table}");
}

#[test]
fn counterexample_command_verifies_the_shared_covariance() {
    let output = run(&["counterexample", "--n", "60000", "--seed", "11", "--format", "machine"]);
    let report: serde_json::Value =
        serde_json::from_str(&stdout(&output)).expect("machine output parses");
    assert_eq!(report["consistent"], serde_json::Value::Bool(true));
}

#[test]
fn usage_errors_exit_with_code_1() {
    let missing_flag = run(&["estimate", "data.csv", "--x", "x", "--y", "y", "--z", "z"]);
    assert_eq!(exit_code(&missing_flag), 1);

    let bad_scenario = run(&[
        "simulate", "--scenario", "spatial", "--eta", "0", "--xi", "0", "--n", "100",
        "--reps", "2", "--seed", "1",
    ]);
    assert_eq!(exit_code(&bad_scenario), 1);

    let zero_lag = run(&["timeseries", "data.csv", "--x", "x", "--y", "y", "--lag", "0"]);
    assert_eq!(exit_code(&zero_lag), 1);

    let hac_without_gmm = run(&[
        "estimate", "data.csv", "--x", "x", "--y", "y", "--z", "z", "--w", "w",
        "--method", "nc", "--hac", "5",
    ]);
    assert_eq!(exit_code(&hac_without_gmm), 1);

    let dir = tempfile::tempdir().expect("temp dir");
    let summary = example_summary(dir.path(), "0.11");
    let inverted_range = run(&[
        "summary", "--summary-file",
        summary.to_str().expect("utf-8 path"),
        "--positive-control", "--ace-xw-range", "2", "0",
    ]);
    assert_eq!(exit_code(&inverted_range), 1);
}

#[test]
fn statistical_failures_exit_with_code_2() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("flat_z.csv");
    let mut text = String::from("x,y,z,w\n");
    for i in 0..40 {
        let t = i as f64;
        let w = ((i * i) % 13) as f64;
        text.push_str(&format!("{},{},1,{}\n", t, 2.0 * t + w, w));
    }
    std::fs::write(&path, text).expect("csv writes");
    let degenerate_instrument = run(&[
        "estimate",
        path.to_str().expect("utf-8 path"),
        "--x", "x", "--y", "y", "--z", "z", "--w", "w", "--method", "iv",
    ]);
    assert_eq!(exit_code(&degenerate_instrument), 2);

    let zero_denominator = example_summary(dir.path(), "0");
    let no_bridge_slope = run(&[
        "summary", "--summary-file",
        zero_denominator.to_str().expect("utf-8 path"),
    ]);
    assert_eq!(exit_code(&no_bridge_slope), 2);
}

#[test]
fn input_failures_exit_with_code_3() {
    let missing_file = run(&[
        "estimate", "/nonexistent/data.csv", "--x", "x", "--y", "y", "--z", "z", "--w", "w",
    ]);
    assert_eq!(exit_code(&missing_file), 3);

    let dir = tempfile::tempdir().expect("temp dir");
    let csv_path = structural_csv(dir.path(), 50, 0.0, 0.0, 5);
    let wrong_column = run(&[
        "estimate",
        csv_path.to_str().expect("utf-8 path"),
        "--x", "x", "--y", "y", "--z", "z", "--w", "nope",
    ]);
    assert_eq!(exit_code(&wrong_column), 3);
}
