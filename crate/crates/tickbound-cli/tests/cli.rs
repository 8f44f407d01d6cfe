//! End-to-end checks of the tickbound binary: formats, exit codes, manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tickbound::{
    build_exponential_clock, serialize_model, C64, CMatrix, ClockModel, DensityMatrix,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tickbound"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tickbound-cli-{}-{name}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_exponential_model(dir: &Path) -> PathBuf {
    let doc = serialize_model(&build_exponential_clock(1.0).unwrap());
    let path = dir.join("exponential.json");
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

/// Projector tick jump: the post-tick state can tick again, so trajectories
/// keep emitting (Poisson process with unit rate).
fn write_recurrent_model(dir: &Path) -> PathBuf {
    let mut jump = CMatrix::zeros(2, 2);
    jump[(1, 1)] = C64::new(1.0, 0.0);
    let mut rho = CMatrix::zeros(2, 2);
    rho[(1, 1)] = C64::new(1.0, 0.0);
    let model = ClockModel::new(
        CMatrix::zeros(2, 2),
        Vec::new(),
        vec![jump],
        DensityMatrix::new(rho).unwrap(),
    )
    .unwrap();
    let path = dir.join("recurrent.json");
    fs::write(&path, serde_json::to_string_pretty(&serialize_model(&model)).unwrap()).unwrap();
    path
}

/// Tick jump out of an unpopulated level: survival stays at 1 forever.
fn write_dark_model(dir: &Path) -> PathBuf {
    let mut jump = CMatrix::zeros(2, 2);
    jump[(0, 1)] = C64::new(1.0, 0.0);
    let mut rho = CMatrix::zeros(2, 2);
    rho[(0, 0)] = C64::new(1.0, 0.0);
    let model = ClockModel::new(
        CMatrix::zeros(2, 2),
        Vec::new(),
        vec![jump],
        DensityMatrix::new(rho).unwrap(),
    )
    .unwrap();
    let path = dir.join("dark.json");
    fs::write(&path, serde_json::to_string_pretty(&serialize_model(&model)).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["simulate"])), 1, "missing required flags");
    assert_eq!(code(&run(&["verify", "--n-models", "0"])), 1);
    assert_eq!(code(&run(&["stats", "--model", "/nonexistent/model.json"])), 1);
}

#[test]
fn simulate_exponential_writes_consistent_series() {
    let dir = scratch("sim-exp");
    let model = write_exponential_model(&dir);
    let prefix = dir.join("run").display().to_string();
    let out = run(&["simulate", "--model", model.to_str().unwrap(), "--out", &prefix]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(format!("{prefix}_timeseries.csv")).unwrap();
    let rows = parse_csv(&csv);
    assert_eq!(rows[0], ["t", "survival", "tick_pdf", "conditional_rate", "top_level_population"]);
    assert!(rows.len() > 10);
    for row in &rows[1..] {
        let survival: f64 = row[1].parse().unwrap();
        let pdf: f64 = row[2].parse().unwrap();
        let rate: f64 = row[3].parse().unwrap();
        let population: f64 = row[4].parse().unwrap();
        assert!((rate - 1.0).abs() <= 1e-8, "rate {rate} off unity");
        assert!((pdf - survival * rate).abs() <= 1e-8 * pdf.max(1e-300));
        assert!((population - rate).abs() <= 1e-12, "gamma = 1 makes these equal");
    }

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(format!("{prefix}_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["schema_version"], "tickbound-run/1");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["abs_tol"], 1e-10);
}

#[test]
fn simulate_dark_model_exits_two_with_flat_survival() {
    let dir = scratch("sim-dark");
    let model = write_dark_model(&dir);
    let prefix = dir.join("dark").display().to_string();
    let out = run(&["simulate", "--model", model.to_str().unwrap(), "--out", &prefix]);
    assert_eq!(code(&out), 2);

    let csv = fs::read_to_string(format!("{prefix}_timeseries.csv")).unwrap();
    let rows = parse_csv(&csv);
    assert!(rows.len() > 2);
    for row in &rows[1..] {
        assert_eq!(row[1], "1.00000000000e0", "survival must stay exactly flat");
    }
    assert!(Path::new(&format!("{prefix}_manifest.json")).exists());
}

#[test]
fn stats_reports_exponential_ground_truth() {
    let dir = scratch("stats-exp");
    let model = write_exponential_model(&dir);
    let out = run(&["stats", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let json = stdout_json(&out);
    assert!((json["N"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((json["Gamma"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((json["bound_ratio"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(json["converged"], true);
    assert_eq!(json["tail_bracket"].as_array().unwrap().len(), 2);
    assert_eq!(json["manifest"]["command"], "stats");
}

#[test]
fn stats_evaluates_oracle_documents_in_closed_form() {
    let dir = scratch("stats-oracle");
    let erlang = dir.join("erlang4.json");
    fs::write(
        &erlang,
        r#"{"schema_version":"tickbound-oracle/1","family":"erlang","gamma":1.0,"m":4}"#,
    )
    .unwrap();
    let out = run(&["stats", "--model", erlang.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let json = stdout_json(&out);
    assert_eq!(json["N"], 4.0);
    assert_eq!(json["classical_ratio"], 1.0);
    assert_eq!(json["nu"], 0.25);

    let heaviside = dir.join("heaviside.json");
    fs::write(
        &heaviside,
        r#"{"schema_version":"tickbound-oracle/1","family":"heaviside","gamma":1.0,"t0":3.5}"#,
    )
    .unwrap();
    let json = stdout_json(&run(&["stats", "--model", heaviside.to_str().unwrap()]));
    assert_eq!(json["mu"], 4.5);
    assert_eq!(json["N"], 20.25);
    assert_eq!(json["bound_ratio"], 1.0);

    let bad_schema = dir.join("bad.json");
    fs::write(&bad_schema, r#"{"schema_version":"tickbound-model/9","dim":1}"#).unwrap();
    assert_eq!(code(&run(&["stats", "--model", bad_schema.to_str().unwrap()])), 1);

    let bad_family = dir.join("family.json");
    fs::write(
        &bad_family,
        r#"{"schema_version":"tickbound-oracle/1","family":"gamma","gamma":1.0}"#,
    )
    .unwrap();
    assert_eq!(code(&run(&["stats", "--model", bad_family.to_str().unwrap()])), 1);
}

#[test]
fn stats_dark_model_prints_diagnostic_and_exits_two() {
    let dir = scratch("stats-dark");
    let model = write_dark_model(&dir);
    let out = run(&["stats", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let json = stdout_json(&out);
    assert_eq!(json["converged"], false);
    assert_eq!(json["reason"], "not_converged");
    assert_eq!(json["survival_at_horizon"], 1.0);
}

#[test]
fn sweep_heaviside_emits_points_and_reference_curves() {
    let dir = scratch("sweep-hs");
    let out_path = dir.join("hs.csv").display().to_string();
    let out = run(&["sweep", "heaviside", "--t0", "0..10", "--out", &out_path]);
    assert_eq!(code(&out), 0);

    let rows = parse_csv(&fs::read_to_string(&out_path).unwrap());
    assert_eq!(rows[0], ["t0", "N", "nu", "Gamma", "bound_ratio", "classical_ratio", "flag"]);
    let flagged = |flag: &str| rows[1..].iter().filter(|r| r[6] == flag).count();
    assert_eq!(flagged("ok"), 11);
    assert_eq!(flagged("bound"), 11);
    assert_eq!(flagged("classical"), 11);
    for row in rows[1..].iter().filter(|r| r[6] == "ok") {
        assert_eq!(row[4], "1.00000000000e0", "heaviside points sit on the bound");
    }

    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.join("hs_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["parameters"]["axes"]["t0"].as_array().unwrap().len(), 11);

    // grids and applicability are validated up front
    assert_eq!(code(&run(&["sweep", "heaviside", "--t0", "5..1", "--out", &out_path])), 1);
    assert_eq!(
        code(&run(&["sweep", "heaviside", "--beta-c", "1", "--t0", "1", "--out", &out_path])),
        1
    );
    assert_eq!(code(&run(&["sweep", "spiral", "--t0", "1", "--out", &out_path])), 1);
}

#[test]
fn sweep_erlang_rides_the_classical_line() {
    let dir = scratch("sweep-erlang");
    let out_path = dir.join("erlang.csv").display().to_string();
    let out = run(&["sweep", "erlang", "--m", "1..8", "--out", &out_path]);
    assert_eq!(code(&out), 0);
    let rows = parse_csv(&fs::read_to_string(&out_path).unwrap());
    let ok_rows: Vec<_> = rows[1..].iter().filter(|r| r[6] == "ok").collect();
    assert_eq!(ok_rows.len(), 8);
    for (i, row) in ok_rows.iter().enumerate() {
        assert_eq!(row[0], format!("{}", i + 1), "integer m column");
        assert_eq!(row[5], "1.00000000000e0", "classical ratio pinned at 1");
    }
}

#[test]
fn sweep_ladder_flags_unconverged_points_and_continues() {
    let dir = scratch("sweep-ladder");
    let out_path = dir.join("ladder.csv").display().to_string();
    let out = run(&[
        "sweep", "ladder", "--d", "2", "--gamma-tick", "0.01", "--max-horizon", "20", "--out",
        &out_path,
    ]);
    assert_eq!(code(&out), 0, "unconverged points do not fail the sweep");
    let rows = parse_csv(&fs::read_to_string(&out_path).unwrap());
    assert_eq!(rows[0][0], "d");
    assert_eq!(rows[0][1], "gamma_tick");
    assert_eq!(rows[1][7], "not_converged");
    assert_eq!(rows[1][2], "", "no accuracy for an unconverged point");
    assert_eq!(rows.len(), 2, "no reference rows without converged points");
}

#[test]
fn verify_passes_clean_and_fails_injected_bug() {
    let out = run(&["verify", "--n-models", "4"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let json = stdout_json(&out);
    assert_eq!(json["passed"], true);
    assert_eq!(json["n_models"], 4);
    assert_eq!(json["failures"].as_array().unwrap().len(), 0);
    assert_eq!(json["manifest"]["parameters"]["seed"], 7);

    let out = run(&["verify", "--n-models", "3", "--injected-bug"]);
    assert_eq!(code(&out), 3);
    let json = stdout_json(&out);
    assert_eq!(json["passed"], false);
    assert!(json["failures"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["property"] == "sandwich"));
}

#[test]
fn trajectories_writes_dump_estimates_and_reproducible_manifest() {
    let dir = scratch("traj");
    let model = write_recurrent_model(&dir);
    let model_arg = model.display().to_string();
    let prefix_a = dir.join("a").display().to_string();
    let prefix_b = dir.join("b").display().to_string();
    let base = [
        "trajectories", "--model", &model_arg, "--n-traj", "300", "--seed", "9", "--max-ticks",
        "2",
    ];

    let out = run(&[&base[..], &["--out", &prefix_a]].concat());
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[&base[..], &["--out", &prefix_b]].concat());
    assert_eq!(code(&out), 0);

    let dump_a = fs::read(format!("{prefix_a}_ticks.txt")).unwrap();
    let dump_b = fs::read(format!("{prefix_b}_ticks.txt")).unwrap();
    assert_eq!(dump_a, dump_b, "same seed, byte-identical dumps");
    let text_a = String::from_utf8(dump_a).unwrap();
    assert_eq!(text_a.lines().count(), 300);
    assert!(text_a.lines().all(|l| l.split(',').count() == 2), "two ticks per trajectory");

    let estimates: Value =
        serde_json::from_str(&fs::read_to_string(format!("{prefix_a}_estimates.json")).unwrap())
            .unwrap();
    assert_eq!(estimates["n_traj"], 300);
    assert_eq!(estimates["censored_count"], 0);
    assert_eq!(estimates["per_tick"].as_array().unwrap().len(), 2);
    assert_eq!(estimates["comparison"]["within_4_se"], true);
    assert!(estimates["per_tick"][0]["se_mu"].as_f64().unwrap() > 0.0);
    // per-tick estimates are of inter-tick waits; both waits of a unit
    // Poisson stream are Exp(1)
    let mu2 = estimates["per_tick"][1]["mu_hat"].as_f64().unwrap();
    assert!((0.75..1.25).contains(&mu2), "second wait of a unit Poisson stream, got {mu2}");

    // manifests agree once the timing fields are dropped
    let strip = |path: String| -> Value {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let map = v.as_object_mut().unwrap();
        map.remove("unix_time_s");
        map.remove("wall_time_s");
        map.remove("outputs");
        v["parameters"].as_object_mut().unwrap().remove("out");
        v
    };
    assert_eq!(
        strip(format!("{prefix_a}_manifest.json")),
        strip(format!("{prefix_b}_manifest.json"))
    );
}

#[test]
fn trajectories_rejects_zero_requests() {
    let dir = scratch("traj-zero");
    let model = write_exponential_model(&dir);
    let model_arg = model.display().to_string();
    let out = run(&[
        "trajectories", "--model", &model_arg, "--n-traj", "0", "--out",
        &dir.join("z").display().to_string(),
    ]);
    assert_eq!(code(&out), 1);
}
