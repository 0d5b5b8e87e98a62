//! `sim`: run configured experiments, fit their traces and print operating-point
//! predictions.
//!
//! Exit codes: 0 success, 2 bad input (config, CSV, arguments), 3 simulation
//! failure, 4 I/O failure while writing outputs, 5 fit did not converge.

mod manifest;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hhsim::analysis::{dip_area, fit_damped_sinusoid, fit_exp_decay, fit_gaussians, fwhm, FitError, FitResult};
use hhsim::bath::BathSpec;
use hhsim::experiments::{cooling_budget, predict, run_experiment, ExperimentConfig, Execution, SignalTrace};
use hhsim::pulse::parse_sequence;
use hhsim::spin_models::{lac_field, p1_transition_frequencies, NvParams, P1Params};

use manifest::{normalize_newlines, sha256_hex, OutputFile, RunManifest, MANIFEST_SCHEMA};

#[derive(Parser)]
#[command(name = "sim", version, about = "NV–P1 Hartmann-Hahn simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override the bath seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; default is one per core. Never changes the output.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the number of realizations.
        #[arg(long)]
        realizations: Option<usize>,
        /// Also write plot.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Fit a trace CSV and print the report as JSON.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
        /// Number of Gaussian components for `--model gauss`.
        #[arg(long, default_value_t = 1)]
        components: usize,
    },
    /// Print calculator results as JSON.
    Predict {
        #[arg(long, default_value_t = 128.0)]
        b0: f64,
        #[arg(long, value_enum, default_value = "p1-lines")]
        what: Prediction,
        #[arg(long, default_value_t = 8.0)]
        omega_nv: f64,
        #[arg(long, default_value_t = 100.0)]
        density_ppm: f64,
        #[arg(long, default_value_t = 1000.0)]
        t1_us: f64,
        #[arg(long, default_value_t = 2.0)]
        transfer_us: f64,
        #[arg(long, default_value_t = 2.0)]
        init_us: f64,
    },
    /// Check a config (`.json`) or pulse program (`.seq`) without running it.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    /// Five Gaussian dips.
    Gauss5,
    /// `--components` Gaussian dips.
    Gauss,
    Exp,
    Sinusoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prediction {
    P1Lines,
    Lac,
    Budget,
    OperatingPoint,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Simulation(String),
    Io(String),
    NotConverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Simulation(_) => 3,
            Failure::Io(_) => 4,
            Failure::NotConverged(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Simulation(m) | Failure::Io(m) | Failure::NotConverged(m) => m,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn read_input(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> Res<()> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) -> Res<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))?;
    print_stdout(&text)
}

fn print_stdout(text: &str) -> Res<()> {
    use std::io::Write;
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| Failure::Io(format!("stdout: {e}")))
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn load_config(path: &Path) -> Res<(ExperimentConfig, String)> {
    let text = normalize_newlines(&read_input(path)?);
    let cfg = ExperimentConfig::from_json(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok((cfg, sha256_hex(text.as_bytes())))
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path, workers: Option<usize>, realizations: Option<usize>, plot: bool) -> Res<()> {
    let (mut cfg, hash) = load_config(config)?;
    if let Some(s) = seed {
        cfg.bath.seed = s;
    }
    if let Some(n) = realizations {
        cfg.n_realizations = n;
    }
    let exec = match workers {
        Some(0) => return Err(Failure::Input("--workers must be at least 1".into())),
        Some(w) => Execution::Workers(w),
        None => Execution::Parallel,
    };
    let started = now_utc();
    let clock = Instant::now();
    let traces = run_experiment(&cfg, exec).map_err(|e| match e {
        hhsim::Error::Config(m) => Failure::Input(m),
        other => Failure::Simulation(other.to_string()),
    })?;
    let wall = clock.elapsed().as_secs_f64();

    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let mut outputs = Vec::new();
    for (label, trace) in &traces {
        let file = if traces.len() == 1 { "trace.csv".to_string() } else { format!("trace_{label}.csv") };
        let csv = trace.to_csv();
        write_output(&out.join(&file), &csv)?;
        outputs.push(OutputFile { label: label.clone(), file, sha256: sha256_hex(csv.as_bytes()) });
    }
    if plot {
        let series: Vec<svg::Series> =
            traces.iter().map(|(label, t)| svg::Series { label: label.as_str(), x: &t.sweep, y: &t.mean }).collect();
        let title = if cfg.name.is_empty() { "signal" } else { cfg.name.as_str() };
        let chart = svg::line_chart(title, &cfg.sweep.parameter, &series);
        write_output(&out.join("plot.svg"), &chart)?;
        outputs.push(OutputFile { label: "plot".into(), file: "plot.svg".into(), sha256: sha256_hex(chart.as_bytes()) });
    }
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool: "sim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.name.clone(),
        config_path: config.display().to_string(),
        config_sha256: hash,
        seed: cfg.bath.seed,
        n_realizations: cfg.n_realizations,
        workers,
        started_utc: started,
        finished_utc: now_utc(),
        wall_time_s: wall,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
    write_output(&out.join("manifest.json"), &(text.clone() + "\n"))?;
    print_stdout(&text)
}

fn fit_failure(e: FitError) -> Failure {
    match e {
        FitError::Precondition(_) | FitError::MissingComponent { .. } => Failure::Input(e.to_string()),
        FitError::NotConverged { .. } | FitError::Degenerate(_) => Failure::NotConverged(e.to_string()),
    }
}

fn gaussian_report(fit: &FitResult) -> Res<Value> {
    let mut comps = Vec::new();
    for k in 1..=fit.components() {
        let mu = fit.param(&format!("mu{k}")).expect("component centre");
        let (w, dw) = fwhm(fit, k).map_err(fit_failure)?;
        let (a, da) = dip_area(fit, k).map_err(fit_failure)?;
        comps.push(json!({ "index": k, "center": mu.value, "center_sigma": mu.sigma, "fwhm": w, "fwhm_sigma": dw, "area": a, "area_sigma": da }));
    }
    Ok(json!({ "components": comps }))
}

fn cmd_fit(csv: &Path, model: FitModel, components: usize) -> Res<()> {
    let text = read_input(csv)?;
    let trace = SignalTrace::from_csv(&text, "x").map_err(|e| Failure::Input(format!("{}: {e}", csv.display())))?;
    let (x, y) = (&trace.sweep, &trace.mean);
    let (fit, derived) = match model {
        FitModel::Gauss5 | FitModel::Gauss => {
            let n = if matches!(model, FitModel::Gauss5) { 5 } else { components };
            let fit = fit_gaussians(x, y, n, None).map_err(fit_failure)?;
            let d = gaussian_report(&fit)?;
            (fit, d)
        }
        FitModel::Exp => {
            let fit = fit_exp_decay(x, y).map_err(fit_failure)?;
            let t = fit.param("T").expect("decay constant");
            let d = json!({ "decay_constant": t.value, "decay_constant_sigma": t.sigma });
            (fit, d)
        }
        FitModel::Sinusoid => {
            let fit = fit_damped_sinusoid(x, y).map_err(fit_failure)?;
            let f = fit.param("f").expect("frequency");
            let d = json!({ "frequency": f.value, "frequency_sigma": f.sigma });
            (fit, d)
        }
    };
    if !fit.converged {
        return Err(Failure::NotConverged(format!("{} fit did not converge", fit.model)));
    }
    print_json(&json!({ "fit": fit, "derived": derived }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(b0: f64, what: Prediction, omega_nv: f64, density_ppm: f64, t1: f64, transfer: f64, init: f64) -> Res<()> {
    let bad = |e: hhsim::Error| Failure::Input(e.to_string());
    let (nv, p1) = (NvParams::default(), P1Params::default());
    let v = match what {
        Prediction::P1Lines => json!({ "b0_gauss": b0, "lines": p1_transition_frequencies(&p1, b0).map_err(bad)? }),
        Prediction::Lac => json!({ "lac_field_gauss": lac_field(&nv, &p1).map_err(bad)? }),
        Prediction::Budget => json!({
            "t1_us": t1, "transfer_us": transfer, "init_us": init,
            "cycles": cooling_budget(t1, transfer, init).map_err(bad)?
        }),
        Prediction::OperatingPoint => {
            let bath = BathSpec { density_ppm, ..Default::default() };
            serde_json::to_value(predict(b0, omega_nv, &nv, &p1, &bath).map_err(bad)?).map_err(|e| Failure::Io(e.to_string()))?
        }
    };
    print_json(&v)
}

fn cmd_validate(path: &Path) -> Res<()> {
    if path.extension().is_some_and(|e| e == "seq") {
        let text = read_input(path)?;
        let seq = parse_sequence(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        return print_json(&json!({
            "valid": true, "channels": seq.channels.len(), "pulses": seq.pulses.len(), "duration_us": seq.total_us()
        }));
    }
    let (cfg, hash) = load_config(path)?;
    let points = cfg.sweep.points().map_err(|e| Failure::Input(e.to_string()))?;
    print_json(&json!({
        "valid": true, "name": cfg.name, "parameter": cfg.sweep.parameter, "points": points.len(),
        "n_realizations": cfg.n_realizations, "config_sha256": hash
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out, workers, realizations, plot } => cmd_run(&config, seed, &out, workers, realizations, plot),
        Command::Fit { csv, model, components } => cmd_fit(&csv, model, components),
        Command::Predict { b0, what, omega_nv, density_ppm, t1_us, transfer_us, init_us } => {
            cmd_predict(b0, what, omega_nv, density_ppm, t1_us, transfer_us, init_us)
        }
        Command::Validate { path } => cmd_validate(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
