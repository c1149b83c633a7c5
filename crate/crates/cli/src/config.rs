//! TOML configuration: model, trigger and experiment sections.

use std::fs;
use std::path::{Path, PathBuf};

use etsim::harness::{
    builtin_example, Engine, Example, ExperimentSpec, LambdaSweep,
};
use etsim::{CostFunction, NetworkModel, SquareMatrix, StopRule, TriggerConfig, TriggerSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub trigger: TriggerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sweep: Option<LambdaSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    pub d: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub cost: CostSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub c4: f64,
    pub c3: f64,
    /// Coupling matrix as a list of rows.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub gamma: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Compulsory sampling period.
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracketing_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bisection_tol: Option<f64>,
    #[serde(default)]
    pub allow_inadmissible_gamma: bool,
}

fn default_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub engine: Engine,
    /// Empty means "the trigger gamma only".
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Per-coordinate `[lo, hi]`; empty means `[-2, 2]` for every coordinate.
    #[serde(default)]
    pub init_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "default_residual")]
    pub stop_residual: f64,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    /// Initial state for `run`; drawn from `init_box` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub require_convergence: bool,
}

fn default_runs() -> usize {
    50
}

fn default_max_time() -> f64 {
    StopRule::default().max_time
}

fn default_residual() -> f64 {
    StopRule::default().residual
}

fn default_max_events() -> usize {
    StopRule::default().max_events
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            engine: Engine::Continuous,
            gamma_grid: Vec::new(),
            runs: default_runs(),
            init_box: Vec::new(),
            seed: 0,
            max_time: default_max_time(),
            stop_residual: default_residual(),
            max_events: default_max_events(),
            x0: None,
            require_convergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub init_box: Vec<[f64; 2]>,
}

fn default_trials() -> usize {
    100
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: ConfigFile,
    pub model: NetworkModel,
    pub settings: TriggerSettings,
    pub trigger: TriggerConfig,
    pub experiment: ExperimentSpec,
    pub lambda: Option<LambdaSweep>,
}

impl Loaded {
    /// SHA-256 of the canonical serialization of the effective configuration.
    pub fn hash(&self) -> String {
        let text = emit(&self.file);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_str(text: &str, origin: &Path) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_path_buf(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

pub fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_str(&text, path)
}

pub fn parse_config(path: &Path) -> Result<Loaded, CliError> {
    validate(read_config(path)?)
}

fn field(section: &str, e: etsim::Error) -> CliError {
    let (name, reason) = match &e {
        etsim::Error::InvalidParameter { name, reason } => (format!("{section}.{name}"), reason.clone()),
        other => (section.to_string(), other.to_string()),
    };
    CliError::Validation { field: name, reason }
}

fn check(cond: bool, field: &str, reason: impl Into<String>) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation {
            field: field.to_string(),
            reason: reason.into(),
        })
    }
}

fn check_len(field: &str, got: usize, n: usize) -> Result<(), CliError> {
    check(got == n, field, format!("expected {n} entries, got {got}"))
}

fn to_box(field: &str, raw: &[[f64; 2]], n: usize) -> Result<Vec<(f64, f64)>, CliError> {
    if raw.is_empty() {
        return Ok(vec![(-2.0, 2.0); n]);
    }
    check_len(field, raw.len(), n)?;
    for b in raw {
        check(
            b[0].is_finite() && b[1].is_finite() && b[0] <= b[1],
            field,
            "bounds must be finite with lo <= hi",
        )?;
    }
    Ok(raw.iter().map(|b| (b[0], b[1])).collect())
}

/// Builds and checks the simulation objects described by `file`.
pub fn validate(file: ConfigFile) -> Result<Loaded, CliError> {
    let m = &file.model;
    let n = m.n;
    check(n > 0, "model.n", "must be positive")?;
    check_len("model.d", m.d.len(), n)?;
    check_len("model.lambda", m.lambda.len(), n)?;
    check_len("model.theta", m.theta.len(), n)?;
    check_len("model.cost.w", m.cost.w.len(), n)?;
    for row in &m.cost.w {
        check_len("model.cost.w", row.len(), n)?;
    }
    check_len("model.cost.b", m.cost.b.len(), n)?;
    let w = SquareMatrix::from_rows(&m.cost.w).map_err(|e| field("model.cost.w", e))?;
    let cost = CostFunction::new(m.cost.c4, m.cost.c3, w, m.cost.b.clone()).map_err(|e| field("model.cost", e))?;
    let model = NetworkModel::new(m.d.clone(), m.lambda.clone(), m.theta.clone(), cost)
        .map_err(|e| field("model", e))?;

    let t = &file.trigger;
    let settings = TriggerSettings {
        gamma: t.gamma,
        c: t.c,
        compulsory_period: t.period,
        m_bound: t.m_bound,
        sigma: t.sigma,
        bracketing_step: t.bracketing_step,
        bisection_tol: t.bisection_tol,
        allow_inadmissible_gamma: t.allow_inadmissible_gamma,
    };
    let trigger = settings.resolve(&model).map_err(|e| field("trigger", e))?;

    let x = &file.experiment;
    check(x.runs > 0, "experiment.runs", "must be positive")?;
    check(x.max_time > 0.0 && x.max_time.is_finite(), "experiment.max_time", "must be finite and positive")?;
    check(x.stop_residual > 0.0, "experiment.stop_residual", "must be positive")?;
    check(x.max_events > 0, "experiment.max_events", "must be positive")?;
    if let Some(x0) = &x.x0 {
        check_len("experiment.x0", x0.len(), n)?;
        check(x0.iter().all(|v| v.is_finite()), "experiment.x0", "entries must be finite")?;
    }
    let gamma_grid = if x.gamma_grid.is_empty() {
        vec![t.gamma]
    } else {
        x.gamma_grid.clone()
    };
    let stop = StopRule {
        max_time: x.max_time,
        residual: x.stop_residual,
        max_events: x.max_events,
    };
    let mut experiment = ExperimentSpec::new(model.clone(), settings.clone(), gamma_grid);
    experiment.engine = x.engine;
    experiment.runs_per_point = x.runs;
    experiment.init_box = to_box("experiment.init_box", &x.init_box, n)?;
    experiment.seed = x.seed;
    experiment.stop = stop;
    experiment.validate().map_err(|e| field("experiment", e))?;

    let lambda = match &file.lambda_sweep {
        None => None,
        Some(l) => {
            check(!l.lambda_grid.is_empty(), "lambda_sweep.lambda_grid", "must not be empty")?;
            check(
                l.lambda_grid.iter().all(|v| *v > 0.0 && v.is_finite()),
                "lambda_sweep.lambda_grid",
                "slopes must be finite and positive",
            )?;
            check(l.trials > 0, "lambda_sweep.trials", "must be positive")?;
            Some(LambdaSweep {
                lambda_grid: l.lambda_grid.clone(),
                trials: l.trials,
                init_box: to_box("lambda_sweep.init_box", &l.init_box, n)?,
                seed: x.seed,
                stop,
            })
        }
    };

    Ok(Loaded {
        file,
        model,
        settings,
        trigger,
        experiment,
        lambda,
    })
}

pub fn emit(file: &ConfigFile) -> String {
    toml::to_string(file).expect("config serializes")
}

fn grid(lo: f64, step: f64, points: usize) -> Vec<f64> {
    // rounded to the decimal grid so the file shows 0.15 rather than 0.15000000000000002
    (0..points)
        .map(|k| ((lo + step * k as f64) * 1e6).round() / 1e6)
        .collect()
}

/// Configuration reproducing one of the built-in examples.
pub fn example_config(which: Example) -> ConfigFile {
    let model = builtin_example(which);
    let n = model.n();
    let c = model.cost();
    let model_section = ModelSection {
        n,
        d: model.self_inhibition().to_vec(),
        lambda: model.slopes().to_vec(),
        theta: model.input().to_vec(),
        cost: CostSection {
            c4: c.quartic(),
            c3: c.cubic(),
            w: c.coupling().rows(),
            b: c.linear().to_vec(),
        },
    };
    let (gamma, period, gamma_grid, init, x0) = match which {
        Example::Example1 => (
            0.3,
            0.03,
            grid(0.10, 0.05, 9),
            [-2.0, 2.0],
            Some(vec![0.728, -0.769, 1.770, -1.827, 0.315]),
        ),
        Example::Example2 => (0.5, 3.0, grid(0.1, 0.1, 5), [-2.0, 2.0], Some(vec![1.211, -0.772, -1.753])),
        Example::Example2SmallTheta => (0.5, 3.0, Vec::new(), [-5.0, 5.0], None),
    };
    let lambda_sweep = (which == Example::Example2SmallTheta).then(|| LambdaSection {
        lambda_grid: LambdaSweep::log_grid(0.01, 100.0, 9)
            .into_iter()
            .map(|v| (v * 1e8).round() / 1e8)
            .collect(),
        trials: 100,
        init_box: vec![init; n],
    });
    ConfigFile {
        model: model_section,
        trigger: TriggerSection {
            gamma,
            c: 1.0,
            period,
            m_bound: None,
            sigma: None,
            bracketing_step: None,
            bisection_tol: None,
            allow_inadmissible_gamma: true,
        },
        experiment: ExperimentSection {
            gamma_grid,
            init_box: vec![init; n],
            seed: 1,
            x0,
            ..ExperimentSection::default()
        },
        lambda_sweep,
    }
}

pub fn shipped_config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}
