//! Implementations of the five subcommands and their output plumbing.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Deserialize;
use serde_json::{json, Value};
use tickbound::{
    build_ladder_clock, check_tradeoff, erlang_statistics, evolve_no_tick, heaviside_statistics,
    parse_model, run_random_suite, sample_trajectories, suite_config, tick_statistics,
    top_level_population, ClockModel, ErlangOracle, EvolveError, HeavisideOracle,
    IntegrationConfig, LadderParams, ModelDocument, TickStatistics, TrajectoryError, VerifyError,
};

use crate::manifest::{self, fmt12, quantize};
use crate::{grid, SimulateArgs, StatsArgs, SweepArgs, TrajectoriesArgs, VerifyArgs};

/// Ladder points further off resonance than this get a stderr warning.
const RESONANCE_WARN: f64 = 1e-9;

/// Failure with the process exit code it maps to: 1 usage or parse, 2 not
/// converged or numeric failure, 3 invariant-suite failure.
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    /// Exit code only; used when the diagnostic already went to stdout.
    fn silent(code: i32) -> Self {
        Self { code, message: String::new() }
    }
}

fn map_evolve(err: EvolveError) -> CmdError {
    match err {
        EvolveError::BadConfig(_) => CmdError::usage(err.to_string()),
        other => CmdError::runtime(other.to_string()),
    }
}

fn read_text(path: &Path) -> Result<String, CmdError> {
    fs::read_to_string(path).map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ClockModel, CmdError> {
    let text = read_text(path)?;
    let doc: ModelDocument = serde_json::from_str(&text)
        .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?;
    parse_model(&doc).map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &str, contents: &str) -> Result<(), CmdError> {
    fs::write(path, contents).map_err(|e| CmdError::usage(format!("{path}: {e}")))
}

fn write_json(path: &str, value: &Value) -> Result<(), CmdError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_file(path, &text)
}

fn print_json(value: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    let mut stdout = std::io::stdout().lock();
    if writeln!(stdout, "{text}").is_err() {
        // downstream closed the pipe; die quietly with the conventional code
        std::process::exit(141);
    }
}

fn attach_manifest(out: &mut Value, manifest: Value) {
    out.as_object_mut().expect("object output").insert("manifest".into(), manifest);
}

fn file_provenance(path: &Path) -> Value {
    json!({ "file": path.display().to_string() })
}

pub fn simulate(args: &SimulateArgs, started: Instant) -> Result<(), CmdError> {
    let config = args.config.apply(IntegrationConfig::default())?;
    let model = load_model(&args.model)?;
    let evo = evolve_no_tick(&model, &config).map_err(map_evolve)?;
    let population = top_level_population(&evo, evo.gamma()).map_err(map_evolve)?;

    let series_path = format!("{}_timeseries.csv", args.out);
    let manifest_path = format!("{}_manifest.json", args.out);
    let mut csv = String::from("t,survival,tick_pdf,conditional_rate,top_level_population\n");
    for (i, &t) in evo.times().iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt12(t),
            fmt12(evo.survival()[i]),
            fmt12(evo.tick_pdf()[i]),
            fmt12(evo.conditional_rate()[i]),
            fmt12(population[i]),
        ));
    }
    write_file(&series_path, &csv)?;

    let manifest = manifest::build(
        "simulate",
        file_provenance(&args.model),
        json!({ "out": args.out }),
        &config,
        &[series_path.as_str(), manifest_path.as_str()],
        started,
    );
    write_json(&manifest_path, &manifest)?;

    if evo.converged() {
        Ok(())
    } else {
        Err(CmdError::runtime(format!(
            "not converged: survival {:.3e} at horizon {:.6e}; partial series written",
            evo.survival_at_horizon(),
            evo.horizon(),
        )))
    }
}

#[derive(Deserialize)]
struct SchemaProbe {
    schema_version: String,
}

/// Closed-form reference description; `stats` accepts these next to model
/// documents so analytic-only families stay available from the shell.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleDocument {
    #[allow(dead_code)]
    schema_version: String,
    family: String,
    gamma: f64,
    #[serde(default)]
    t0: Option<f64>,
    #[serde(default)]
    m: Option<u32>,
}

fn oracle_statistics(doc: &OracleDocument) -> Result<TickStatistics, CmdError> {
    match doc.family.as_str() {
        "heaviside" => {
            let t0 = doc.t0.ok_or_else(|| CmdError::usage("heaviside oracle needs t0"))?;
            if doc.m.is_some() {
                return Err(CmdError::usage("heaviside oracle does not take m"));
            }
            let oracle =
                HeavisideOracle::new(doc.gamma, t0).map_err(|e| CmdError::usage(e.to_string()))?;
            Ok(heaviside_statistics(&oracle))
        }
        "erlang" => {
            let m = doc.m.ok_or_else(|| CmdError::usage("erlang oracle needs m"))?;
            if doc.t0.is_some() {
                return Err(CmdError::usage("erlang oracle does not take t0"));
            }
            let oracle =
                ErlangOracle::new(doc.gamma, m).map_err(|e| CmdError::usage(e.to_string()))?;
            Ok(erlang_statistics(&oracle))
        }
        other => Err(CmdError::usage(format!(
            "unknown oracle family {other:?} (expected heaviside or erlang)"
        ))),
    }
}

pub fn stats(args: &StatsArgs, started: Instant) -> Result<(), CmdError> {
    let config = args.config.apply(IntegrationConfig::default())?;
    let text = read_text(&args.model)?;
    let probe: SchemaProbe = serde_json::from_str(&text)
        .map_err(|e| CmdError::usage(format!("{}: {e}", args.model.display())))?;
    let mk_manifest =
        || manifest::build("stats", file_provenance(&args.model), json!({}), &config, &[], started);

    let stats = match probe.schema_version.as_str() {
        "tickbound-model/1" => {
            let doc: ModelDocument = serde_json::from_str(&text)
                .map_err(|e| CmdError::usage(format!("{}: {e}", args.model.display())))?;
            let model =
                parse_model(&doc).map_err(|e| CmdError::usage(format!("{}: {e}", args.model.display())))?;
            let evo = evolve_no_tick(&model, &config).map_err(map_evolve)?;
            if !evo.converged() {
                let mut diag = json!({
                    "converged": false,
                    "reason": "not_converged",
                    "survival_at_horizon": evo.survival_at_horizon(),
                    "horizon": evo.horizon(),
                    "Gamma": evo.gamma(),
                });
                quantize(&mut diag);
                attach_manifest(&mut diag, mk_manifest());
                print_json(&diag);
                return Err(CmdError::silent(2));
            }
            match tick_statistics(&evo, &model) {
                Ok(stats) => stats,
                Err(err) => {
                    let mut diag = json!({
                        "converged": true,
                        "reason": err.to_string(),
                        "Gamma": evo.gamma(),
                    });
                    quantize(&mut diag);
                    attach_manifest(&mut diag, mk_manifest());
                    print_json(&diag);
                    return Err(CmdError::silent(2));
                }
            }
        }
        "tickbound-oracle/1" => {
            let doc: OracleDocument = serde_json::from_str(&text)
                .map_err(|e| CmdError::usage(format!("{}: {e}", args.model.display())))?;
            oracle_statistics(&doc)?
        }
        other => {
            return Err(CmdError::usage(format!(
                "{}: unsupported schema_version {other:?}",
                args.model.display()
            )))
        }
    };

    let check = check_tradeoff(&stats);
    let mut out = json!({
        "mu": stats.mu,
        "sigma2": stats.sigma2,
        "N": stats.accuracy_n,
        "nu": stats.resolution_nu,
        "Gamma": stats.gamma,
        "bound_ratio": check.ratio,
        "classical_ratio": check.classical_ratio,
        "tail_bracket": [stats.tail_bracket.0, stats.tail_bracket.1],
        "converged": true,
    });
    quantize(&mut out);
    attach_manifest(&mut out, mk_manifest());
    print_json(&out);
    Ok(())
}

struct Axis {
    name: &'static str,
    values: Vec<f64>,
}

/// Sweepable parameters in canonical (column) order per builder.
const LADDER_AXES: &[&str] = &[
    "d", "g", "omega_c", "omega_h", "omega_l", "gamma_c", "gamma_h", "gamma_tick", "beta_c",
    "beta_h",
];
const ERLANG_AXES: &[&str] = &["m", "gamma_tick"];
const HEAVISIDE_AXES: &[&str] = &["t0", "gamma_tick"];

fn axis_spec<'a>(args: &'a SweepArgs, name: &str) -> Option<&'a String> {
    match name {
        "d" => args.d.as_ref(),
        "m" => args.m.as_ref(),
        "t0" => args.t0.as_ref(),
        "g" => args.g.as_ref(),
        "omega_c" => args.omega_c.as_ref(),
        "omega_h" => args.omega_h.as_ref(),
        "omega_l" => args.omega_l.as_ref(),
        "gamma_c" => args.gamma_c.as_ref(),
        "gamma_h" => args.gamma_h.as_ref(),
        "gamma_tick" => args.gamma_tick.as_ref(),
        "beta_c" => args.beta_c.as_ref(),
        "beta_h" => args.beta_h.as_ref(),
        _ => None,
    }
}

const ALL_SWEEP_FLAGS: &[&str] = &[
    "d", "m", "t0", "g", "omega_c", "omega_h", "omega_l", "gamma_c", "gamma_h", "gamma_tick",
    "beta_c", "beta_h",
];

fn collect_axes(args: &SweepArgs, allowed: &[&'static str]) -> Result<Vec<Axis>, CmdError> {
    for flag in ALL_SWEEP_FLAGS {
        if axis_spec(args, flag).is_some() && !allowed.contains(flag) {
            return Err(CmdError::usage(format!(
                "--{} does not apply to builder {}",
                flag.replace('_', "-"),
                args.builder
            )));
        }
    }
    let mut axes = Vec::new();
    for name in allowed {
        if let Some(spec) = axis_spec(args, name) {
            let values =
                grid::parse(&name.replace('_', "-"), spec).map_err(CmdError::usage)?;
            axes.push(Axis { name, values });
        }
    }
    if axes.is_empty() {
        return Err(CmdError::usage(format!(
            "sweep {} needs at least one parameter grid",
            args.builder
        )));
    }
    Ok(axes)
}

/// Grid-point coordinates for `index` with the first axis slowest.
fn point_values(axes: &[Axis], index: usize) -> Vec<f64> {
    let mut values = vec![0.0; axes.len()];
    let mut rem = index;
    for (a, axis) in axes.iter().enumerate().rev() {
        let n = axis.values.len();
        values[a] = axis.values[rem % n];
        rem /= n;
    }
    values
}

fn integer_param(flag: &str, value: f64, min: f64) -> Result<u64, CmdError> {
    if value.fract() != 0.0 || value < min {
        return Err(CmdError::usage(format!("--{flag}: needs an integer >= {min}, got {value}")));
    }
    Ok(value as u64)
}

enum PointOutcome {
    Done(TickStatistics),
    NotConverged { gamma: f64 },
}

fn ladder_point(
    axes: &[Axis],
    values: &[f64],
    config: &IntegrationConfig,
) -> Result<PointOutcome, CmdError> {
    let mut params = LadderParams::default();
    for (axis, &v) in axes.iter().zip(values) {
        match axis.name {
            "d" => params.d = integer_param("d", v, 2.0)? as usize,
            "g" => params.g = v,
            "omega_c" => params.omega_c = v,
            "omega_h" => params.omega_h = v,
            "omega_l" => params.omega_l = v,
            "gamma_c" => params.gamma_c = v,
            "gamma_h" => params.gamma_h = v,
            "gamma_tick" => params.gamma_tick = v,
            "beta_c" => params.beta_c = v,
            "beta_h" => params.beta_h = v,
            other => unreachable!("not a ladder axis: {other}"),
        }
    }
    if params.resonance_mismatch() > RESONANCE_WARN {
        eprintln!(
            "warning: off-resonant ladder point (|omega_c + omega_l - omega_h| = {:.3e})",
            params.resonance_mismatch()
        );
    }
    let model = build_ladder_clock(&params).map_err(|e| CmdError::usage(e.to_string()))?;
    let evo = evolve_no_tick(&model, config).map_err(map_evolve)?;
    if !evo.converged() {
        return Ok(PointOutcome::NotConverged { gamma: evo.gamma() });
    }
    tick_statistics(&evo, &model)
        .map(PointOutcome::Done)
        .map_err(|e| CmdError::runtime(e.to_string()))
}

fn oracle_point(builder: &str, axes: &[Axis], values: &[f64]) -> Result<PointOutcome, CmdError> {
    let mut gamma = 1.0;
    let mut main = None;
    for (axis, &v) in axes.iter().zip(values) {
        match axis.name {
            "gamma_tick" => gamma = v,
            _ => main = Some(v),
        }
    }
    let main = main.expect("oracle sweeps require their main axis");
    let stats = match builder {
        "erlang" => {
            let m = integer_param("m", main, 1.0)?;
            let m = u32::try_from(m).map_err(|_| CmdError::usage("--m: too large"))?;
            let oracle =
                ErlangOracle::new(gamma, m).map_err(|e| CmdError::usage(e.to_string()))?;
            erlang_statistics(&oracle)
        }
        "heaviside" => {
            let oracle =
                HeavisideOracle::new(gamma, main).map_err(|e| CmdError::usage(e.to_string()))?;
            heaviside_statistics(&oracle)
        }
        other => unreachable!("not an oracle builder: {other}"),
    };
    Ok(PointOutcome::Done(stats))
}

pub fn sweep(args: &SweepArgs, started: Instant) -> Result<(), CmdError> {
    let config = args.config.apply(IntegrationConfig::default())?;
    let allowed: &[&'static str] = match args.builder.as_str() {
        "ladder" => LADDER_AXES,
        "erlang" => ERLANG_AXES,
        "heaviside" => HEAVISIDE_AXES,
        other => {
            return Err(CmdError::usage(format!(
                "unknown builder {other:?} (expected ladder, erlang, or heaviside)"
            )))
        }
    };
    let oracle_builder = args.builder != "ladder";
    if oracle_builder && axis_spec(args, allowed[0]).is_none() {
        return Err(CmdError::usage(format!(
            "sweep {} needs --{}",
            args.builder, allowed[0]
        )));
    }
    let axes = collect_axes(args, allowed)?;
    let n_points: usize = axes.iter().map(|a| a.values.len()).product();

    let mut outcomes = Vec::with_capacity(n_points);
    for index in 0..n_points {
        let values = point_values(&axes, index);
        let outcome = if oracle_builder {
            oracle_point(&args.builder, &axes, &values)?
        } else {
            ladder_point(&axes, &values, &config)?
        };
        outcomes.push((values, outcome));
    }

    // integer-valued axes print as integers, everything else at 12 digits
    let param_cells = |values: &[f64]| -> String {
        axes.iter()
            .zip(values)
            .map(|(axis, &v)| {
                if matches!(axis.name, "d" | "m") {
                    format!("{}", v as i64)
                } else {
                    fmt12(v)
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut csv = String::new();
    for axis in &axes {
        csv.push_str(axis.name);
        csv.push(',');
    }
    csv.push_str("N,nu,Gamma,bound_ratio,classical_ratio,flag\n");
    let mut push_row = |values: &[f64], cells: [String; 5], flag: &str| {
        csv.push_str(&param_cells(values));
        csv.push(',');
        csv.push_str(&cells.join(","));
        csv.push(',');
        csv.push_str(flag);
        csv.push('\n');
    };
    for (values, outcome) in &outcomes {
        match outcome {
            PointOutcome::Done(stats) => {
                let check = check_tradeoff(stats);
                let cells = [
                    fmt12(stats.accuracy_n),
                    fmt12(stats.resolution_nu),
                    fmt12(stats.gamma),
                    fmt12(check.ratio),
                    fmt12(check.classical_ratio),
                ];
                push_row(values, cells, "ok");
            }
            PointOutcome::NotConverged { gamma } => {
                let cells =
                    [String::new(), String::new(), fmt12(*gamma), String::new(), String::new()];
                push_row(values, cells, "not_converged");
            }
        }
    }
    // reference curves sampled at each converged point's resolution
    for classical_curve in [false, true] {
        for (values, outcome) in &outcomes {
            if let PointOutcome::Done(stats) = outcome {
                let (g, nu) = (stats.gamma, stats.resolution_nu);
                let (accuracy, ratios, flag) = if classical_curve {
                    (g / nu, (nu / g, 1.0), "classical")
                } else {
                    (g * g / (nu * nu), (1.0, g / nu), "bound")
                };
                let cells = [
                    fmt12(accuracy),
                    fmt12(nu),
                    fmt12(g),
                    fmt12(ratios.0),
                    fmt12(ratios.1),
                ];
                push_row(values, cells, flag);
            }
        }
    }
    drop(push_row);
    write_file(&args.out, &csv)?;

    let manifest_path = sibling_manifest(&args.out);
    let axes_echo: Value =
        axes.iter().map(|a| (a.name.to_string(), json!(a.values))).collect::<serde_json::Map<_, _>>().into();
    let manifest = manifest::build(
        "sweep",
        json!({ "builder": args.builder }),
        json!({ "axes": axes_echo }),
        &config,
        &[args.out.as_str(), manifest_path.as_str()],
        started,
    );
    write_json(&manifest_path, &manifest)
}

/// "runs/sweep.csv" -> "runs/sweep_manifest.json"
fn sibling_manifest(out: &str) -> String {
    let path = Path::new(out);
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    path.with_file_name(format!("{stem}_manifest.json")).display().to_string()
}

pub fn verify(args: &VerifyArgs, started: Instant) -> Result<(), CmdError> {
    if args.n_models == 0 {
        return Err(CmdError::usage("--n-models must be at least 1"));
    }
    let config = args.config.apply(suite_config())?;
    let report = run_random_suite(args.seed, args.n_models, args.injected_bug, &config)
        .map_err(|err| match err {
            VerifyError::ZeroModels => CmdError::usage(err.to_string()),
            other => CmdError::runtime(other.to_string()),
        })?;
    let passed = report.passed;
    let n_failures = report.failures.len();

    let mut out = serde_json::to_value(&report).expect("serializable report");
    quantize(&mut out);
    attach_manifest(
        &mut out,
        manifest::build(
            "verify",
            json!({ "builder": "random-ensemble" }),
            json!({
                "seed": args.seed,
                "n_models": args.n_models,
                "injected_bug": args.injected_bug,
            }),
            &config,
            &[],
            started,
        ),
    );
    print_json(&out);

    if passed {
        Ok(())
    } else {
        Err(CmdError {
            code: 3,
            message: format!("{n_failures} invariant failure(s); see the report above"),
        })
    }
}

fn map_trajectory(err: TrajectoryError) -> CmdError {
    match err {
        TrajectoryError::ZeroTrajectories
        | TrajectoryError::ZeroTicksRequested
        | TrajectoryError::BadTickIndex { .. }
        | TrajectoryError::Evolve(EvolveError::BadConfig(_)) => CmdError::usage(err.to_string()),
        other => CmdError::runtime(other.to_string()),
    }
}

pub fn trajectories(args: &TrajectoriesArgs, started: Instant) -> Result<(), CmdError> {
    let config = args.config.apply(IntegrationConfig::default())?;
    let model = load_model(&args.model)?;
    let batch = sample_trajectories(&model, args.n_traj, args.max_ticks, args.seed, &config)
        .map_err(map_trajectory)?;

    let dump_path = format!("{}_ticks.txt", args.out);
    let estimates_path = format!("{}_estimates.json", args.out);
    let manifest_path = format!("{}_manifest.json", args.out);
    write_file(&dump_path, &batch.raw_dump())?;

    // first-tick cross-check against the deterministic engine when it converges
    let comparison = match evolve_no_tick(&model, &config) {
        Ok(evo) if evo.converged() => match tick_statistics(&evo, &model) {
            Ok(det) => batch.estimated.iter().find(|e| e.tick_index == 1).map(|est| {
                let z_mu = (est.mu_hat - det.mu) / est.se_mu;
                let z_n = (est.n_hat - det.accuracy_n) / est.se_n;
                json!({
                    "deterministic": {
                        "mu": det.mu,
                        "sigma2": det.sigma2,
                        "N": det.accuracy_n,
                        "nu": det.resolution_nu,
                    },
                    "z_mu": z_mu,
                    "z_N": z_n,
                    "within_4_se": z_mu.abs() <= 4.0 && z_n.abs() <= 4.0,
                })
            }),
            Err(_) => None,
        },
        _ => None,
    };

    let per_tick: Vec<Value> = batch
        .estimated
        .iter()
        .map(|e| {
            json!({
                "tick_index": e.tick_index,
                "n_samples": e.n_samples,
                "mu_hat": e.mu_hat,
                "sigma2_hat": e.sigma2_hat,
                "N_hat": e.n_hat,
                "nu_hat": e.nu_hat,
                "se_mu": e.se_mu,
                "se_sigma2": e.se_sigma2,
                "se_N": e.se_n,
            })
        })
        .collect();
    let mut estimates = json!({
        "seed": batch.seed,
        "n_traj": batch.n_traj,
        "max_ticks": batch.max_ticks,
        "horizon": batch.horizon,
        "censored_count": batch.censored_count,
        "per_tick": per_tick,
        "comparison": comparison,
    });
    quantize(&mut estimates);
    write_json(&estimates_path, &estimates)?;

    let manifest = manifest::build(
        "trajectories",
        file_provenance(&args.model),
        json!({
            "seed": args.seed,
            "n_traj": args.n_traj,
            "max_ticks": args.max_ticks,
            "out": args.out,
        }),
        &config,
        &[dump_path.as_str(), estimates_path.as_str(), manifest_path.as_str()],
        started,
    );
    write_json(&manifest_path, &manifest)
}
