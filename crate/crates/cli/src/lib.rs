//! Command-line front end: config loading, subcommands and output writers.

pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use etsim::harness::{gamma_sweep, lambda_sweep, simulate, Engine, Example};
use etsim::trigger::eta_lower_bound;
use etsim::{Outcome, TraceOptions};
use log::info;

use config::{emit, example_config, read_config, validate, ConfigFile, Loaded};
use output::{Format, Provenance};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error(transparent)]
    Simulation(#[from] etsim::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    NonConvergent(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } | CliError::Simulation(_) => 1,
            CliError::NonConvergent(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "etsim", version, about = "Event-triggered analytic neural network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and write events, trigger times, dense trace and summary.
    Run(RunArgs),
    /// Gamma sweep over seeded random initial states (one row per grid point).
    Sweep(RunArgs),
    /// Slope sweep of the limit outputs, snapped to binary vertices.
    LambdaSweep(RunArgs),
    /// Print the theoretical inter-event lower bound for every gamma of the config.
    Eta(RunArgs),
    /// Parse and validate a config without simulating.
    Validate(RunArgs),
    /// Print the config of a built-in example.
    EmitConfig(EmitArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file. Missing keys default to: c = 1 (trigger); engine = continuous,
    /// runs = 50, init_box = [-2, 2] per coordinate, seed = 0, max_time = 100,
    /// stop_residual = 1e-9 (experiment). m_bound and sigma default to the bounds
    /// computed from the model.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_engine)]
    pub engine: Option<Engine>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Format of the event log and dense trace; summaries are written in both.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub override_m_bound: Option<f64>,
    #[arg(long)]
    pub override_sigma: Option<f64>,
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long)]
    pub allow_inadmissible_gamma: bool,
    /// Dense samples per inter-event interval in the trace.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long, value_parser = parse_example)]
    pub example: Example,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: etsim::Error| e.to_string())
}

fn parse_example(s: &str) -> Result<Example, String> {
    s.parse().map_err(|e: etsim::Error| e.to_string())
}

fn apply_overrides(mut file: ConfigFile, a: &RunArgs) -> ConfigFile {
    if let Some(e) = a.engine {
        file.experiment.engine = e;
    }
    if let Some(s) = a.seed {
        file.experiment.seed = s;
    }
    if let Some(m) = a.override_m_bound {
        file.trigger.m_bound = Some(m);
    }
    if let Some(s) = a.override_sigma {
        file.trigger.sigma = Some(s);
    }
    if let Some(t) = a.max_time {
        file.experiment.max_time = t;
    }
    if a.allow_inadmissible_gamma {
        file.trigger.allow_inadmissible_gamma = true;
    }
    file
}

fn load(a: &RunArgs) -> Result<(Loaded, Provenance), CliError> {
    let loaded = validate(apply_overrides(read_config(&a.config)?, a))?;
    let prov = Provenance {
        config_hash: loaded.hash(),
        seed: loaded.experiment.seed,
    };
    Ok((loaded, prov))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        info!("wrote {}", p.display());
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::LambdaSweep(a) => cmd_lambda(&a),
        Command::Eta(a) => cmd_eta(&a),
        Command::Validate(a) => {
            let (l, prov) = load(&a)?;
            println!(
                "ok: n = {}, gamma = {}, T = {}, config_sha256 = {}",
                l.model.n(),
                l.trigger.gamma,
                l.trigger.compulsory_period,
                prov.config_hash
            );
            Ok(())
        }
        Command::EmitConfig(a) => {
            let text = emit(&example_config(a.example));
            match a.out {
                Some(p) => {
                    std::fs::write(&p, text).map_err(|e| CliError::Io { path: p, source: e })?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let (l, prov) = load(a)?;
    let x0 = l
        .file
        .experiment
        .x0
        .clone()
        .unwrap_or_else(|| l.experiment.initial_state(0));
    let opts = TraceOptions::dense(a.samples);
    let out = simulate(&l.model, &l.trigger, l.experiment.engine, &x0, &l.experiment.stop, &opts)?;
    let n = l.model.n();
    let dir = &a.out;
    let mut written = Vec::new();
    match a.format {
        Format::Csv => {
            written.push(output::write_file(dir, "events.csv", &output::events_csv(&prov, &out.events, n))?);
            written.push(output::write_file(dir, "trace.csv", &output::trace_csv(&prov, &out.trace.samples, n))?);
        }
        Format::Json => {
            written.push(output::write_file(dir, "events.json", &output::to_json(&prov, &out.events))?);
            written.push(output::write_file(dir, "trace.json", &output::to_json(&prov, &out.trace.samples))?);
        }
    }
    written.push(output::write_file(dir, "trigger_times.csv", &output::trigger_times_csv(&prov, &out, n))?);
    written.push(output::write_file(dir, "summary.csv", &output::summary_csv(&prov, &out.summary))?);
    written.push(output::write_file(dir, "summary.json", &output::to_json(&prov, &out.summary))?);
    report(&written);
    let s = &out.summary;
    println!(
        "{}: t = {:.6}, events = {}, x* = {:?}",
        s.outcome.as_str(),
        s.final_time,
        out.events.len(),
        s.x_star
    );
    if l.file.experiment.require_convergence && s.outcome != Outcome::Converged {
        return Err(CliError::NonConvergent(format!(
            "run ended with outcome `{}`",
            s.outcome.as_str()
        )));
    }
    Ok(())
}

fn cmd_sweep(a: &RunArgs) -> Result<(), CliError> {
    let (l, prov) = load(a)?;
    let res = gamma_sweep(&l.experiment)?;
    let n = l.model.n();
    let dir = &a.out;
    let written = vec![
        output::write_file(dir, "sweep.csv", &output::stat_rows_csv(&prov, &res.rows))?,
        output::write_file(dir, "sweep.json", &output::to_json(&prov, &res.rows))?,
        output::write_file(dir, "sweep_runs.csv", &output::run_stats_csv(&prov, &res.runs, n))?,
    ];
    report(&written);
    println!("gamma, eta_sim, eta, N, T_first");
    for r in &res.rows {
        println!(
            "{:.2}, {:.5}, {:.5}, {:.1}, {:.3}",
            r.gamma, r.eta_sim_mean, r.eta_theory, r.n_mean, r.t_first_mean
        );
    }
    let failed: usize = res.rows.iter().map(|r| r.non_converged).sum();
    if l.file.experiment.require_convergence && failed > 0 {
        return Err(CliError::NonConvergent(format!("{failed} runs did not converge")));
    }
    Ok(())
}

fn cmd_lambda(a: &RunArgs) -> Result<(), CliError> {
    let (l, prov) = load(a)?;
    let sweep = l.lambda.clone().ok_or_else(|| CliError::Validation {
        field: "lambda_sweep".into(),
        reason: "section required by lambda-sweep".into(),
    })?;
    let rows = lambda_sweep(&l.model, &l.settings, &sweep)?;
    let n = l.model.n();
    let written = vec![
        output::write_file(&a.out, "lambda_sweep.csv", &output::lambda_rows_csv(&prov, &rows, n))?,
        output::write_file(&a.out, "lambda_sweep.json", &output::to_json(&prov, &rows))?,
    ];
    report(&written);
    for &lambda in &sweep.lambda_grid {
        let mut counts = std::collections::BTreeMap::new();
        let mut worst: f64 = 0.0;
        for r in rows.iter().filter(|r| r.lambda == lambda) {
            let v: String = r.vertex.iter().map(|b| b.to_string()).collect();
            *counts.entry(v).or_insert(0usize) += 1;
            worst = worst.max(r.distance);
        }
        println!("lambda = {lambda:.4e}: max distance {worst:.3e}, vertices {counts:?}");
    }
    if l.file.experiment.require_convergence && rows.iter().any(|r| r.outcome != Outcome::Converged) {
        return Err(CliError::NonConvergent("some lambda-sweep trials did not converge".into()));
    }
    Ok(())
}

fn cmd_eta(a: &RunArgs) -> Result<(), CliError> {
    let (l, _) = load(a)?;
    println!(
        "m_bound = {}, sigma = {}, T = {}",
        output::num(l.trigger.m_bound),
        output::num(l.trigger.sigma),
        output::num(l.trigger.compulsory_period)
    );
    for &gamma in &l.experiment.gamma_grid {
        let cfg = etsim::TriggerConfig {
            gamma,
            ..l.trigger.clone()
        };
        println!("gamma = {}, eta = {}", output::num(gamma), output::num(eta_lower_bound(&cfg, &l.model)?));
    }
    Ok(())
}

/// Path of the shipped config for `which`.
pub fn shipped_config(which: Example) -> PathBuf {
    config::shipped_config_dir().join(format!("{}.toml", which.name()))
}
