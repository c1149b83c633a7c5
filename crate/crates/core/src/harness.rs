//! Built-in examples and batch experiments: gamma sweeps over seeded random initial
//! states and the slope sweep that snaps limit outputs to binary vertices.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{sigmoid, CostFunction, NetworkModel, SquareMatrix};
use crate::monitor::{run_discrete, DiscreteOptions};
use crate::trace::{RunOutput, TraceOptions};
use crate::trigger::{eta_lower_bound, run, Outcome, StopRule, TriggerConfig, TriggerSettings};

/// Seed of the input noise in [`Example::Example2SmallTheta`].
pub const SMALL_THETA_SEED: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    Example1,
    Example2,
    #[serde(rename = "example2_smalltheta")]
    Example2SmallTheta,
}

impl Example {
    pub fn name(self) -> &'static str {
        match self {
            Example::Example1 => "example1",
            Example::Example2 => "example2",
            Example::Example2SmallTheta => "example2_smalltheta",
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(Example::Example1),
            "example2" => Ok(Example::Example2),
            "example2_smalltheta" => Ok(Example::Example2SmallTheta),
            _ => Err(invalid("example", format!("unknown example `{s}`"))),
        }
    }
}

pub fn example1_coupling() -> SquareMatrix {
    SquareMatrix::from_rows(&[
        vec![3.919, 3.948, 2.564, 3.204, 0.156],
        vec![-4.672, 6.491, -4.117, -1.371, -0.501],
        vec![4.011, 1.370, 5.727, 5.411, 1.185],
        vec![-1.983, 1.656, -8.428, 7.652, -7.694],
        vec![1.282, 2.135, 5.559, 0.659, 9.569],
    ])
    .expect("square")
}

pub fn example2_coupling() -> SquareMatrix {
    SquareMatrix::from_rows(&[
        vec![3.0, 2.5, 2.0],
        vec![2.0, 2.0, 3.0],
        vec![3.0, 2.0, 2.5],
    ])
    .expect("square")
}

fn alternating(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

/// Example 2 with input drawn uniformly from `(-0.001, 0.001)^3`.
pub fn example2_small_theta(seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    builtin_example(Example::Example2)
        .with_input(theta)
        .expect("dimension 3")
}

pub fn builtin_example(which: Example) -> NetworkModel {
    let (quartic, coupling) = match which {
        Example::Example1 => (0.75, example1_coupling()),
        Example::Example2 => (0.5, example2_coupling()),
        Example::Example2SmallTheta => return example2_small_theta(SMALL_THETA_SEED),
    };
    let n = coupling.dim();
    let cost = CostFunction::new(quartic, -1.0, coupling, vec![1.0; n]).expect("valid cost");
    NetworkModel::with_unit_rates(alternating(n), cost).expect("valid model")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Continuous,
    Discrete,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Engine::Continuous),
            "discrete" => Ok(Engine::Discrete),
            _ => Err(invalid("engine", format!("expected `continuous` or `discrete`, got `{s}`"))),
        }
    }
}

pub fn simulate(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    engine: Engine,
    x0: &[f64],
    stop: &StopRule,
    trace: &TraceOptions,
) -> Result<RunOutput> {
    match engine {
        Engine::Continuous => run(model, cfg, x0, stop, trace),
        Engine::Discrete => run_discrete(model, cfg, x0, stop, trace, &DiscreteOptions::default()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: NetworkModel,
    pub engine: Engine,
    /// Template; `gamma` is replaced by each grid point.
    pub trigger: TriggerSettings,
    pub gamma_grid: Vec<f64>,
    pub runs_per_point: usize,
    pub init_box: Vec<(f64, f64)>,
    pub seed: u64,
    pub stop: StopRule,
}

impl ExperimentSpec {
    pub fn new(model: NetworkModel, trigger: TriggerSettings, gamma_grid: Vec<f64>) -> Self {
        let n = model.n();
        ExperimentSpec {
            model,
            engine: Engine::Continuous,
            trigger,
            gamma_grid,
            runs_per_point: 50,
            init_box: vec![(-2.0, 2.0); n],
            seed: 0,
            stop: StopRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() {
            return Err(invalid("gamma_grid", "must not be empty"));
        }
        if self.runs_per_point == 0 {
            return Err(invalid("runs_per_point", "must be positive"));
        }
        check_box_dim(self.model.n(), self.init_box.len())?;
        if self.init_box.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(invalid("init_box", "bounds must be finite and ordered"));
        }
        for &g in &self.gamma_grid {
            self.settings_for(g).resolve(&self.model)?;
        }
        Ok(())
    }

    fn settings_for(&self, gamma: f64) -> TriggerSettings {
        TriggerSettings {
            gamma,
            ..self.trigger.clone()
        }
    }

    /// Initial state of run `run`; shared by every grid point.
    pub fn initial_state(&self, run: usize) -> Vec<f64> {
        sample_box(&self.init_box, self.seed, run as u64)
    }
}

fn check_box_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Uniform sample from a box; stream `stream` of the generator seeded with `seed`.
pub fn sample_box(bounds: &[(f64, f64)], seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStat {
    pub gamma: f64,
    pub run: usize,
    pub x0: Vec<f64>,
    pub outcome: Outcome,
    pub eta_sim: Option<f64>,
    pub max_gap: Option<f64>,
    pub eta_theory: f64,
    /// Mean events per neuron up to `t_first`.
    pub n_events: f64,
    pub n_events_total: f64,
    pub t_first: Option<f64>,
    pub x_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub gamma: f64,
    pub eta_sim_mean: f64,
    pub eta_theory: f64,
    pub n_mean: f64,
    pub t_first_mean: f64,
    /// Mean events per neuron over the whole run.
    pub n_total_mean: f64,
    pub runs: usize,
    pub non_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SweepResult {
    pub rows: Vec<StatRow>,
    pub runs: Vec<RunStat>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

/// Runs `runs_per_point` simulations per grid point and aggregates over converged runs.
pub fn gamma_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut out = SweepResult::default();
    for &gamma in &spec.gamma_grid {
        let cfg = spec.settings_for(gamma).resolve(&spec.model)?;
        let eta_theory = eta_lower_bound(&cfg, &spec.model)?;
        let stats: Vec<RunStat> = (0..spec.runs_per_point)
            .into_par_iter()
            .map(|r| -> Result<RunStat> {
                let x0 = spec.initial_state(r);
                let o = simulate(&spec.model, &cfg, spec.engine, &x0, &spec.stop, &TraceOptions::default())?;
                let s = o.summary;
                Ok(RunStat {
                    gamma,
                    run: r,
                    x0,
                    outcome: s.outcome,
                    eta_sim: s.eta_sim,
                    max_gap: s.max_gap,
                    eta_theory,
                    n_events: s.mean_events_to_t_first(),
                    n_events_total: s.mean_events_per_neuron(),
                    t_first: s.t_first,
                    x_star: s.x_star,
                })
            })
            .collect::<Result<_>>()?;
        let ok: Vec<&RunStat> = stats.iter().filter(|s| s.outcome == Outcome::Converged).collect();
        out.rows.push(StatRow {
            gamma,
            eta_sim_mean: mean(ok.iter().filter_map(|s| s.eta_sim)),
            eta_theory,
            n_mean: mean(ok.iter().map(|s| s.n_events)),
            t_first_mean: mean(ok.iter().filter_map(|s| s.t_first)),
            n_total_mean: mean(ok.iter().map(|s| s.n_events_total)),
            runs: stats.len(),
            non_converged: stats.len() - ok.len(),
        });
        out.runs.extend(stats);
    }
    Ok(out)
}

/// Nearest vertex of `{0,1}^n` in Euclidean distance; a coordinate at exactly 0.5 goes to
/// 0, which is the lexicographically smaller choice.
pub fn nearest_vertex(y: &[f64]) -> (Vec<u8>, f64) {
    let v: Vec<u8> = y.iter().map(|&c| u8::from(c > 0.5)).collect();
    let d = y
        .iter()
        .zip(&v)
        .map(|(c, &b)| (c - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    (v, d)
}

fn vertex_of(bits: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((bits >> (n - 1 - i)) & 1) as f64).collect()
}

/// Every vertex of `{0,1}^n` with its cost value, in lexicographic order.
pub fn vertex_energies(cost: &CostFunction) -> Vec<(Vec<u8>, f64)> {
    let n = cost.dim();
    (0..1usize << n)
        .map(|b| {
            let y = vertex_of(b, n);
            let h = cost.value(&y).expect("dimension n");
            (y.iter().map(|&c| c as u8).collect(), h)
        })
        .collect()
}

/// Vertices whose cost does not decrease under any single bit flip.
pub fn vertex_local_minima(cost: &CostFunction) -> Vec<Vec<u8>> {
    let n = cost.dim();
    let table = vertex_energies(cost);
    (0..table.len())
        .filter(|&b| (0..n).all(|i| table[b ^ (1 << (n - 1 - i))].1 >= table[b].1))
        .map(|b| table[b].0.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub trial: usize,
    pub outcome: Outcome,
    pub y_bar: Vec<f64>,
    pub vertex: Vec<u8>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSweep {
    pub lambda_grid: Vec<f64>,
    pub trials: usize,
    pub init_box: Vec<(f64, f64)>,
    pub seed: u64,
    pub stop: StopRule,
}

impl LambdaSweep {
    pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![lo];
        }
        let (a, b) = (lo.ln(), hi.ln());
        (0..points)
            .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
            .collect()
    }
}

/// Limit outputs `g(lambda x*)` for uniform slopes over the grid, snapped to vertices.
pub fn lambda_sweep(
    model: &NetworkModel,
    trigger: &TriggerSettings,
    sweep: &LambdaSweep,
) -> Result<Vec<LambdaRow>> {
    if sweep.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(invalid("lambda_grid", "slopes must be finite and positive"));
    }
    check_box_dim(model.n(), sweep.init_box.len())?;
    let mut rows = Vec::with_capacity(sweep.lambda_grid.len() * sweep.trials);
    for &lambda in &sweep.lambda_grid {
        let m = model.with_uniform_slope(lambda)?;
        let cfg = trigger.resolve(&m)?;
        let batch: Vec<LambdaRow> = (0..sweep.trials)
            .into_par_iter()
            .map(|k| -> Result<LambdaRow> {
                let x0 = sample_box(&sweep.init_box, sweep.seed, k as u64);
                let out = run(&m, &cfg, &x0, &sweep.stop, &TraceOptions::default())?;
                let y_bar: Vec<f64> = out.summary.x_star.iter().map(|&x| sigmoid(lambda * x)).collect();
                let (vertex, distance) = nearest_vertex(&y_bar);
                Ok(LambdaRow {
                    lambda,
                    trial: k,
                    outcome: out.summary.outcome,
                    y_bar,
                    vertex,
                    distance,
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(batch);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parameters() {
        let e1 = builtin_example(Example::Example1);
        assert_eq!(e1.cost().coupling().get(0, 0), 3.919);
        assert_eq!(e1.cost().coupling().get(4, 4), 9.569);
        assert_eq!(e1.input(), &[1.0, -1.0, 1.0, -1.0, 1.0]);
        assert_eq!(e1.cost().quartic(), 0.75);
        let e2 = builtin_example(Example::Example2);
        assert_eq!(e2.cost().coupling().get(0, 0), 3.0);
        assert_eq!(e2.cost().coupling().get(1, 2), 3.0);
        assert_eq!(e2.input(), &[1.0, -1.0, 1.0]);
        assert_eq!(e2.self_inhibition(), &[1.0; 3]);
        let small = builtin_example(Example::Example2SmallTheta);
        assert!(small.input().iter().all(|t| t.abs() < 1e-3));
        assert_eq!(small, example2_small_theta(SMALL_THETA_SEED));
        assert_ne!(small.input(), example2_small_theta(SMALL_THETA_SEED + 1).input());
        for e in [Example::Example1, Example::Example2, Example::Example2SmallTheta] {
            assert_eq!(e.name().parse::<Example>().unwrap(), e);
        }
    }

    #[test]
    fn nearest_vertex_cases() {
        assert_eq!(nearest_vertex(&[0.9, 0.1, 0.2]).0, vec![1, 0, 0]);
        assert_eq!(nearest_vertex(&[0.5, 0.5]).0, vec![0, 0]);
        let (_, d) = nearest_vertex(&[0.5, 0.5, 0.5]);
        assert!((d - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vertex_enumeration_matches_hand_values() {
        let e2 = builtin_example(Example::Example2);
        let table = vertex_energies(e2.cost());
        assert_eq!(table.len(), 8);
        // (1,0,0): 1/2 - 1 - 3/2 + 1
        assert_eq!(table[4], (vec![1, 0, 0], -1.0));
        // (1,1,1): 3(1/2 - 1) - 22/2 + 3
        assert_eq!(table[7], (vec![1, 1, 1], -9.5));
        assert_eq!(table[0].1, 0.0);
        assert_eq!(vertex_local_minima(e2.cost()), vec![vec![1, 1, 1]]);
    }

    #[test]
    fn small_slope_outputs_sit_at_the_centre() {
        let m = builtin_example(Example::Example2SmallTheta);
        let sweep = LambdaSweep {
            lambda_grid: vec![1e-4],
            trials: 3,
            init_box: vec![(-5.0, 5.0); 3],
            seed: 9,
            stop: StopRule {
                max_time: 40.0,
                ..StopRule::default()
            },
        };
        let trig = TriggerSettings::new(0.5, 3.0).allowing_inadmissible_gamma();
        for row in lambda_sweep(&m, &trig, &sweep).unwrap() {
            assert!(row.y_bar.iter().all(|y| (y - 0.5).abs() < 1e-2));
        }
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let model = builtin_example(Example::Example2);
        let trig = TriggerSettings::new(0.5, 3.0).allowing_inadmissible_gamma();
        let mut spec = ExperimentSpec::new(model, trig, vec![0.3]);
        spec.runs_per_point = 1;
        spec.seed = 17;
        let a = gamma_sweep(&spec).unwrap();
        let b = gamma_sweep(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 1);
        spec.init_box[0] = (1.0, -1.0);
        assert!(gamma_sweep(&spec).is_err());
        spec.init_box[0] = (-1.0, 1.0);
        spec.gamma_grid.clear();
        assert!(gamma_sweep(&spec).is_err());
    }

    #[test]
    fn box_samples_respect_bounds_and_streams() {
        let b = vec![(-2.0, 2.0); 5];
        let x = sample_box(&b, 1, 0);
        assert!(x.iter().all(|v| (-2.0..2.0).contains(v)));
        assert_eq!(x, sample_box(&b, 1, 0));
        assert_ne!(x, sample_box(&b, 1, 1));
    }
}
