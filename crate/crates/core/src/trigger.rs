//! The event engine: autonomy criterion plus compulsory sampling period, exact event
//! localization, the admissibility constants and the inter-event lower bound.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_unchecked, HybridState, Observation};
use crate::error::{invalid, Error, Result};
use crate::model::{sigmoid_derivative, NetworkModel};
use crate::trace::{RunOutput, RunRecorder, TraceOptions};

/// Which branch of the updating rule fired an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    /// `|e_i|` reached `gamma Psi_i`.
    Autonomy,
    /// `T` elapsed since the neuron's previous trigger.
    Compulsory,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Autonomy => "autonomy",
            Cause::Compulsory => "compulsory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub neuron: usize,
    pub time: f64,
    pub cause: Cause,
    pub state_snapshot: Vec<f64>,
    pub new_sampled_grad_component: f64,
}

/// User-facing trigger parameters; unset fields get their defaults from the model in
/// [`TriggerSettings::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSettings {
    pub gamma: f64,
    pub c: f64,
    pub compulsory_period: f64,
    pub m_bound: Option<f64>,
    pub sigma: Option<f64>,
    pub bracketing_step: Option<f64>,
    pub bisection_tol: Option<f64>,
    pub allow_inadmissible_gamma: bool,
}

impl TriggerSettings {
    pub fn new(gamma: f64, compulsory_period: f64) -> Self {
        TriggerSettings {
            gamma,
            c: 1.0,
            compulsory_period,
            m_bound: None,
            sigma: None,
            bracketing_step: None,
            bisection_tol: None,
            allow_inadmissible_gamma: false,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_m_bound(mut self, m: f64) -> Self {
        self.m_bound = Some(m);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_bracketing_step(mut self, h: f64) -> Self {
        self.bracketing_step = Some(h);
        self
    }

    pub fn allowing_inadmissible_gamma(mut self) -> Self {
        self.allow_inadmissible_gamma = true;
        self
    }

    pub fn resolve(&self, model: &NetworkModel) -> Result<TriggerConfig> {
        check_positive("gamma", self.gamma)?;
        check_c(self.c)?;
        check_positive("compulsory_period", self.compulsory_period)?;
        let m_bound = match self.m_bound {
            Some(m) => check_positive("m_bound", m)?,
            None => model.error_rate_bound(),
        };
        let sigma = match self.sigma {
            Some(s) => check_positive("sigma", s)?,
            None => (2.0 * model.d_max() * self.compulsory_period).exp(),
        };
        let bisection_tol = match self.bisection_tol {
            Some(t) => check_positive("bisection_tol", t)?,
            None => 1e-12,
        };
        let mut cfg = TriggerConfig {
            gamma: self.gamma,
            c: self.c,
            compulsory_period: self.compulsory_period,
            m_bound,
            sigma,
            bracketing_step: 0.0,
            bisection_tol,
            allow_inadmissible_gamma: self.allow_inadmissible_gamma,
        };
        cfg.bracketing_step = match self.bracketing_step {
            Some(h) => check_positive("bracketing_step", h)?,
            None => cfg.compulsory_period.min(eta_lower_bound(&cfg, model)?) / 50.0,
        };
        Ok(cfg)
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(name, format!("must be a finite positive number, got {v}")))
    }
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c < 2.0 {
        Ok(())
    } else {
        Err(invalid("c", format!("must lie in the open interval (0, 2), got {c}")))
    }
}

/// Fully resolved trigger parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerConfig {
    pub gamma: f64,
    pub c: f64,
    pub compulsory_period: f64,
    pub m_bound: f64,
    pub sigma: f64,
    pub bracketing_step: f64,
    pub bisection_tol: f64,
    pub allow_inadmissible_gamma: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_max: f64,
}

impl AlphaBeta {
    /// Constants from the range `[w_min, w_max]` of `lambda_i g'(lambda_i x_i)`.
    pub fn from_gain_range(c: f64, w_min: f64, w_max: f64) -> Result<Self> {
        check_c(c)?;
        let alpha = (1.0 - c / 2.0) * w_min;
        let beta = w_max / (2.0 * c);
        Ok(AlphaBeta {
            alpha,
            beta,
            gamma_max: (alpha / beta).sqrt(),
        })
    }
}

/// A-priori admissibility constants on the invariant box `|x_i| <= state_box`:
/// `beta` uses the global maximum `g' = 1/4`, `alpha` the worst derivative on the box.
pub fn compute_alpha_beta(model: &NetworkModel, c: f64, state_box: f64) -> Result<AlphaBeta> {
    if !(state_box >= 0.0) {
        return Err(invalid("state_box", "must be nonnegative"));
    }
    let lambda = model.slopes();
    let w_max = lambda.iter().map(|l| 0.25 * l).fold(0.0, f64::max);
    let w_min = lambda
        .iter()
        .map(|&l| l * sigmoid_derivative(l * state_box))
        .fold(f64::INFINITY, f64::min);
    AlphaBeta::from_gain_range(c, w_min, w_max)
}

/// Unique positive root of `K e^{-d eta} = eta` on `(0, K]`, by bisection.
pub fn eta_fixed_point(k: f64, d: f64) -> f64 {
    let h = |eta: f64| k * (-d * eta).exp() - eta;
    let (mut lo, mut hi) = (0.0, k);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if v == 0.0 {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Common lower bound on inter-event times,
/// `min_i { eta_i : gamma e^{-d_i eta_i} / (M sqrt(sigma) e^{d_max T}) = eta_i }`.
pub fn eta_lower_bound(cfg: &TriggerConfig, model: &NetworkModel) -> Result<f64> {
    check_positive("gamma", cfg.gamma)?;
    check_positive("m_bound", cfg.m_bound)?;
    check_positive("sigma", cfg.sigma)?;
    check_positive("compulsory_period", cfg.compulsory_period)?;
    let k = cfg.gamma
        / (cfg.m_bound * cfg.sigma.sqrt() * (model.d_max() * cfg.compulsory_period).exp());
    Ok(model
        .self_inhibition()
        .iter()
        .map(|&d| eta_fixed_point(k, d))
        .fold(f64::INFINITY, f64::min))
}

/// Halting rule for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_time: f64,
    /// Stop once the equilibrium residual drops below this.
    pub residual: f64,
    /// Safety cap on the number of individual trigger events.
    pub max_events: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_time: 100.0,
            residual: 1e-9,
            max_events: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    MaxTime,
    EventBudgetExhausted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::MaxTime => "max_time",
            Outcome::EventBudgetExhausted => "event_budget_exhausted",
        }
    }
}

/// Sample-and-hold update: neuron `neuron` refreshes its feedback from the current outputs.
pub fn fire(model: &NetworkModel, state: &HybridState, neuron: usize) -> Result<HybridState> {
    state.check_index(neuron)?;
    let mut next = state.clone();
    fire_in_place(model, &mut next, neuron);
    Ok(next)
}

pub(crate) fn fire_in_place(model: &NetworkModel, state: &mut HybridState, neuron: usize) -> f64 {
    let y = model.outputs(&state.x);
    let g = model.cost().gradient_component(&y, neuron);
    state.last_trigger[neuron] = state.t;
    state.sampled_grad[neuron] = g;
    g
}

/// Per-neuron Lipschitz constants of the trigger function on an event-free window of
/// length `window` starting at `state`. Between events `|F_j|` only decays, so
/// `|de_i/dt| <= sum_j |H_ij| lambda_j/4 |F_j(t0)|`, and `ln Psi_i` changes at rate at most
/// `d_max - d_min + d_i`.
pub(crate) fn trigger_lipschitz(
    model: &NetworkModel,
    gamma: f64,
    obs: &Observation,
    window: f64,
) -> Vec<f64> {
    let n = model.n();
    let cost = model.cost();
    let s = cost.symmetric_coupling();
    let curv = cost.diagonal_curvature_bound();
    let lambda = model.slopes();
    let d = model.self_inhibition();
    let (d_max, d_min) = (model.d_max(), model.d_min());
    (0..n)
        .map(|i| {
            let err_rate: f64 = (0..n)
                .map(|j| {
                    let h = s.get(i, j).abs() + if i == j { curv } else { 0.0 };
                    h * 0.25 * lambda[j] * obs.drift[j].abs()
                })
                .sum();
            let spread = d_max - d_min;
            let growth = ((spread - d[i]).max(0.0) * window).exp();
            err_rate + gamma * (spread + d[i]) * obs.psi(i) * growth
        })
        .collect()
}

/// Step that cannot skip over a zero of a function with value `value <= 0` and
/// Lipschitz constant `lip`, never shorter than `floor`.
#[inline]
pub(crate) fn safe_stride(value: f64, lip: f64, floor: f64) -> f64 {
    if !(lip > 0.0) || !lip.is_finite() {
        return f64::INFINITY;
    }
    (-value / lip).max(floor)
}

/// Bisection on `(lo, hi]` for the first point where `f > 0`, given `f(lo) <= 0 < f(hi)`.
/// Bisection for a sign change of `f` in `(lo, hi]`, assuming `f(lo) <= 0 < f(hi)`.
///
/// Interior probes sit on the dyadic lattice of spacing `2^floor(log2 tol)`, so two callers
/// holding different brackets around the same crossing land on the same point.
pub(crate) fn bisect_crossing(lo: f64, hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = 2f64.powi(tol.log2().floor() as i32);
    let mut a = (lo / h).floor();
    let mut b = (hi / h).ceil();
    if b * h > hi && f(b * h) <= 0.0 {
        return bisect_plain(lo, hi, tol, &f);
    }
    while b - a > 1.0 {
        let mid = (0.5 * (a + b)).floor();
        if f(mid * h) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    (b * h).min(hi).max(lo)
}

fn bisect_plain(mut lo: f64, mut hi: f64, tol: f64, f: &impl Fn(f64) -> f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The earliest pending event(s) after the current instant.
#[derive(Debug, Clone, PartialEq)]
pub struct NextEvent {
    pub time: f64,
    pub neurons: Vec<(usize, Cause)>,
}

pub(crate) enum Scan {
    Event(NextEvent),
    /// Reached the time limit with nothing due.
    Limit(f64),
}

/// Earliest event over all neurons: the first zero crossing of any trigger function, or
/// the earliest compulsory deadline. Uses a single marching probe that monitors the whole
/// state; crossings are localized by bisection.
pub fn next_event(model: &NetworkModel, cfg: &TriggerConfig, state: &HybridState) -> NextEvent {
    match scan_continuous(model, cfg, state, f64::INFINITY) {
        Scan::Event(ev) => ev,
        Scan::Limit(_) => unreachable!("an unbounded scan always ends at a deadline"),
    }
}

pub(crate) fn scan_continuous(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    state: &HybridState,
    time_limit: f64,
) -> Scan {
    let n = state.n();
    let t0 = state.t;
    let tol = cfg.bisection_tol;
    let deadlines: Vec<f64> = state
        .last_trigger
        .iter()
        .map(|tk| tk + cfg.compulsory_period - t0)
        .collect();
    let horizon = deadlines.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let limit = (time_limit - t0).max(0.0);
    let end = horizon.min(limit);

    // every probe is a single closed-form flow from the anchor, so both engines see the
    // same trigger function bit for bit
    let mut obs = Observation::new(model, state);
    let lips = trigger_lipschitz(model, cfg.gamma, &obs, end);
    let mut offset = 0.0;
    loop {
        let mut stride = f64::INFINITY;
        for i in 0..n {
            stride = stride.min(safe_stride(obs.trigger_value(i, cfg.gamma), lips[i], cfg.bracketing_step));
        }
        let last = offset + stride >= end;
        let next_offset = if last { end } else { offset + stride };
        let next_obs = Observation::new(model, &flow_unchecked(model, state, next_offset));
        let crossed: Vec<usize> = (0..n)
            .filter(|&i| next_obs.trigger_value(i, cfg.gamma) > 0.0)
            .collect();
        if !crossed.is_empty() {
            let roots: Vec<(usize, f64)> = crossed
                .into_iter()
                .map(|i| (i, anchored_root(model, cfg, state, i, offset, next_offset)))
                .collect();
            let first = roots.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            return Scan::Event(collect_due(first, &roots, state, cfg.compulsory_period, tol));
        }
        if last {
            if horizon <= limit {
                return Scan::Event(collect_due(horizon, &[], state, cfg.compulsory_period, tol));
            }
            return Scan::Limit(t0 + limit);
        }
        offset = next_offset;
        obs = next_obs;
    }
}

/// Crossing of neuron `i` inside `(lo, hi]` (offsets from the anchor `state`).
pub(crate) fn anchored_root(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    state: &HybridState,
    i: usize,
    lo: f64,
    hi: f64,
) -> f64 {
    bisect_crossing(lo, hi, cfg.bisection_tol, |s| {
        Observation::new(model, &flow_unchecked(model, state, s)).trigger_value(i, cfg.gamma)
    })
}

/// Everything due within `tol` of `first` (offsets relative to `t0`), ascending by neuron.
/// A purely compulsory instant lands exactly on `t_k^i + T`.
fn collect_due(
    first: f64,
    roots: &[(usize, f64)],
    state: &HybridState,
    period: f64,
    tol: f64,
) -> NextEvent {
    let t0 = state.t;
    let deadlines: Vec<f64> = state.last_trigger.iter().map(|tk| tk + period - t0).collect();
    let mut neurons: Vec<(usize, Cause)> = Vec::new();
    for (i, &dl) in deadlines.iter().enumerate() {
        let root = roots.iter().find(|r| r.0 == i).map(|r| r.1);
        let cause = match root {
            Some(r) if r <= first + tol && r < dl => Some(Cause::Autonomy),
            _ if dl <= first + tol => Some(Cause::Compulsory),
            Some(r) if r <= first + tol => Some(Cause::Autonomy),
            _ => None,
        };
        if let Some(c) = cause {
            neurons.push((i, c));
        }
    }
    let time = if first <= 0.0 {
        t0
    } else if neurons.iter().all(|n| n.1 == Cause::Compulsory) {
        neurons
            .iter()
            .map(|&(i, _)| state.last_trigger[i] + period)
            .fold(f64::INFINITY, f64::min)
            .max(t0)
    } else {
        t0 + first
    };
    NextEvent { time, neurons }
}

/// Fires `due` at the current instant and then every neuron the jump in `delta` pushed
/// over its threshold, until the instant is consistent. Each neuron fires at most once.
pub(crate) fn fire_instant(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    state: &mut HybridState,
    due: &[(usize, Cause)],
    recorder: &mut RunRecorder,
) {
    let n = state.n();
    let mut fired = vec![false; n];
    let mut batch: Vec<(usize, Cause)> = due.to_vec();
    while !batch.is_empty() {
        for &(i, cause) in &batch {
            if fired[i] {
                continue;
            }
            fired[i] = true;
            let g = fire_in_place(model, state, i);
            recorder.event(EventRecord {
                neuron: i,
                time: state.t,
                cause,
                state_snapshot: state.x.clone(),
                new_sampled_grad_component: g,
            });
        }
        let obs = Observation::new(model, state);
        batch = (0..n)
            .filter(|&k| !fired[k] && obs.trigger_value(k, cfg.gamma) > 0.0)
            .map(|k| (k, Cause::Autonomy))
            .collect();
    }
}

/// Checks `gamma` against the a-priori admissibility bound for a run from `x0`.
pub(crate) fn admissibility(model: &NetworkModel, cfg: &TriggerConfig, x0: &[f64]) -> Result<AlphaBeta> {
    let x_inf = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let state_box = model.invariant_radius().max(x_inf);
    let ab = compute_alpha_beta(model, cfg.c, state_box)?;
    if cfg.gamma >= ab.gamma_max {
        if !cfg.allow_inadmissible_gamma {
            return Err(Error::GammaInadmissible {
                gamma: cfg.gamma,
                gamma_max: ab.gamma_max,
            });
        }
        warn!(
            "gamma = {} exceeds the a-priori bound {:.3e}; proceeding on override",
            cfg.gamma, ab.gamma_max
        );
    }
    Ok(ab)
}

/// Continuous-monitoring simulation: alternate exact flow to the next event and fire.
pub fn run(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    x0: &[f64],
    stop: &StopRule,
    trace: &TraceOptions,
) -> Result<RunOutput> {
    model.check_dim(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "initial state must be finite"));
    }
    let apriori = admissibility(model, cfg, x0)?;
    let mut state = HybridState::initial(model, x0)?;
    let mut recorder = RunRecorder::new(&state);
    let outcome = loop {
        if model.residual(&state.x) < stop.residual {
            break Outcome::Converged;
        }
        if recorder.event_count() >= stop.max_events {
            break Outcome::EventBudgetExhausted;
        }
        if state.t >= stop.max_time {
            break Outcome::MaxTime;
        }
        match scan_continuous(model, cfg, &state, stop.max_time) {
            Scan::Event(ev) => {
                state = flow_unchecked(model, &state, ev.time - state.t);
                state.t = ev.time;
                fire_instant(model, cfg, &mut state, &ev.neurons, &mut recorder);
                recorder.anchor(&state);
            }
            Scan::Limit(t) => {
                state = flow_unchecked(model, &state, t - state.t);
                state.t = t;
                break Outcome::MaxTime;
            }
        }
    };
    Ok(recorder.finish(model, cfg, apriori, state, outcome, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{delta, drift, exact_flow, measurement_error, trigger_value};
    use crate::harness::{builtin_example, Example};
    use crate::model::{CostFunction, SquareMatrix};
    use approx::assert_relative_eq;

    fn ex1_x0() -> Vec<f64> {
        vec![0.728, -0.769, 1.770, -1.827, 0.315]
    }

    #[test]
    fn alpha_beta_cases() {
        let m = NetworkModel::with_unit_rates(vec![0.0; 3], CostFunction::zero(3)).unwrap();
        let ab = compute_alpha_beta(&m, 1.0, 0.0).unwrap();
        assert_relative_eq!(ab.alpha, 0.125);
        assert_relative_eq!(ab.beta, 0.125);
        assert_relative_eq!(ab.gamma_max, 1.0);
        let m2 = m.with_uniform_slope(2.0).unwrap();
        let ab2 = compute_alpha_beta(&m2, 1.0, 0.0).unwrap();
        assert_relative_eq!(ab2.beta, 2.0 * ab.beta);
        assert!(matches!(
            compute_alpha_beta(&m, 2.0, 0.0),
            Err(Error::InvalidParameter { name: "c", .. })
        ));
        assert!(compute_alpha_beta(&m, 0.0, 0.0).is_err());
    }

    #[test]
    fn eta_fixed_point_cases() {
        let eta = eta_fixed_point(1.0, 1.0);
        assert!((eta - 0.567_143_290_409_783_8).abs() < 1e-12);
        assert!((eta * eta.exp() - 1.0).abs() < 1e-12);
        for &k in &[0.001, 0.01, 0.05] {
            let eta = eta_fixed_point(k, 1.0);
            assert!((eta - k).abs() <= 0.05 * k);
            assert!((eta - k * (1.0 - k)).abs() <= 2.0 * k * k * k);
        }
    }

    #[test]
    fn eta_monotonicity() {
        let model = builtin_example(Example::Example1);
        let eta = |g: f64, m: f64, s: f64, t: f64| {
            let cfg = TriggerSettings::new(g, t)
                .with_m_bound(m)
                .with_sigma(s)
                .allowing_inadmissible_gamma()
                .resolve(&model)
                .unwrap();
            eta_lower_bound(&cfg, &model).unwrap()
        };
        let grid = [0.1, 0.5, 1.0, 3.0];
        for w in grid.windows(2) {
            assert!(eta(w[0], 1.0, 1.0, 0.1) < eta(w[1], 1.0, 1.0, 0.1));
            assert!(eta(0.3, w[0], 1.0, 0.1) > eta(0.3, w[1], 1.0, 0.1));
            assert!(eta(0.3, 1.0, w[0], 0.1) > eta(0.3, 1.0, w[1], 0.1));
            assert!(eta(0.3, 1.0, 1.0, w[0]) > eta(0.3, 1.0, 1.0, w[1]));
        }
    }

    #[test]
    fn settings_validation() {
        let model = builtin_example(Example::Example2);
        assert!(TriggerSettings::new(0.5, 3.0).with_c(2.5).resolve(&model).is_err());
        assert!(TriggerSettings::new(-0.5, 3.0).resolve(&model).is_err());
        assert!(TriggerSettings::new(0.5, 0.0).resolve(&model).is_err());
        let cfg = TriggerSettings::new(0.5, 3.0).resolve(&model).unwrap();
        assert_relative_eq!(cfg.sigma, 6f64.exp());
        assert_relative_eq!(cfg.m_bound, 3f64.sqrt() * model.cost().hessian_sup_bound());
        let eta = eta_lower_bound(&cfg, &model).unwrap();
        assert_relative_eq!(cfg.bracketing_step, eta.min(3.0) / 50.0);
    }

    #[test]
    fn fire_cases() {
        let model = builtin_example(Example::Example1);
        let s0 = HybridState::initial(&model, &ex1_x0()).unwrap();
        let s = exact_flow(&model, &s0, 0.07).unwrap();
        let mut all = s.clone();
        for i in 0..5 {
            all = fire(&model, &all, i).unwrap();
        }
        assert!(measurement_error(&model, &all).iter().all(|&e| e == 0.0));
        let f = drift(&model, &all);
        assert_relative_eq!(delta(&model, &all), f.iter().map(|v| v * v).sum::<f64>() / 5.0);
        let twice = fire(&model, &fire(&model, &s, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, fire(&model, &s, 2).unwrap());

        let before = drift(&model, &s);
        let after = drift(&model, &fire(&model, &s, 3).unwrap());
        let jump = model.feedback(&s.x)[3] - s.sampled_grad[3];
        assert_relative_eq!(before[3] - after[3], jump, epsilon = 1e-13);
        for i in [0, 1, 2, 4] {
            assert_eq!(before[i], after[i]);
        }
        assert!(fire(&model, &s, 9).is_err());
    }

    #[test]
    fn lone_neuron_without_feedback_variation_is_compulsory() {
        // linear cost: grad f is constant, so e stays zero and only the timeout fires
        let cost = CostFunction::new(0.0, 0.0, SquareMatrix::zeros(1), vec![0.4]).unwrap();
        let model = NetworkModel::with_unit_rates(vec![1.0], cost).unwrap();
        let cfg = TriggerSettings::new(0.5, 0.25)
            .with_m_bound(1.0)
            .allowing_inadmissible_gamma()
            .resolve(&model)
            .unwrap();
        let state = HybridState::initial(&model, &[2.0]).unwrap();
        let ev = next_event(&model, &cfg, &state);
        assert_eq!(ev.neurons, vec![(0, Cause::Compulsory)]);
        assert_eq!(ev.time, 0.25);
    }

    #[test]
    fn next_event_matches_dense_oracle() {
        let model = builtin_example(Example::Example1);
        let cfg = TriggerSettings::new(0.3, 0.03)
            .allowing_inadmissible_gamma()
            .resolve(&model)
            .unwrap();
        let s = HybridState::initial(&model, &ex1_x0()).unwrap();
        let ev = next_event(&model, &cfg, &s);
        assert!(ev.time > 0.0);

        // dense grid oracle with step 1e-6, refined by bisection on the bracketing cell
        let h = 1e-6;
        let value = |t: f64, i: usize| trigger_value(&model, &exact_flow(&model, &s, t).unwrap(), i, 0.3).unwrap();
        let mut oracle = cfg.compulsory_period;
        let mut who = None;
        'grid: for k in 1..=(0.03 / h) as usize {
            let t = k as f64 * h;
            for i in 0..5 {
                if value(t, i) > 0.0 {
                    let mut lo = t - h;
                    let mut hi = t;
                    while hi - lo > 1e-13 {
                        let mid = 0.5 * (lo + hi);
                        if value(mid, i) > 0.0 { hi = mid } else { lo = mid }
                    }
                    oracle = hi;
                    who = Some(i);
                    break 'grid;
                }
            }
        }
        assert!((ev.time - oracle).abs() <= 1e-8, "engine {} oracle {}", ev.time, oracle);
        match who {
            Some(i) => assert_eq!(ev.neurons[0], (i, Cause::Autonomy)),
            None => assert!(ev.neurons.iter().all(|e| e.1 == Cause::Compulsory)),
        }
    }

    #[test]
    fn neuron_one_first_crossing_matches_bracketing() {
        let model = builtin_example(Example::Example1);
        let cfg = TriggerSettings::new(0.3, 10.0)
            .allowing_inadmissible_gamma()
            .resolve(&model)
            .unwrap();
        let s = HybridState::initial(&model, &ex1_x0()).unwrap();
        // single-neuron crossing along the closed-form flow, engine scan vs 1e-5 grid
        let value = |t: f64| trigger_value(&model, &exact_flow(&model, &s, t).unwrap(), 0, 0.3).unwrap();
        let engine = crate::monitor::predict_next(&model, &cfg, &s, 0).unwrap();
        let h = 1e-5;
        let mut k = 1;
        while value(k as f64 * h) <= 0.0 {
            k += 1;
        }
        let (mut lo, mut hi) = ((k - 1) as f64 * h, k as f64 * h);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if value(mid) > 0.0 { hi = mid } else { lo = mid }
        }
        assert!((engine.0 - hi).abs() <= 1e-9);
        assert_eq!(engine.1, Cause::Autonomy);
    }

    #[test]
    fn equilibrium_start_terminates_immediately() {
        let ex = builtin_example(Example::Example2);
        let xs = vec![0.3, -0.2, 0.1];
        let fb = ex.feedback(&xs);
        let theta: Vec<f64> = xs.iter().zip(&fb).map(|(x, g)| x + g).collect();
        let m = ex.with_input(theta).unwrap();
        let cfg = TriggerSettings::new(0.5, 3.0)
            .allowing_inadmissible_gamma()
            .resolve(&m)
            .unwrap();
        let out = run(&m, &cfg, &xs, &StopRule::default(), &TraceOptions::default()).unwrap();
        assert_eq!(out.summary.outcome, Outcome::Converged);
        assert!(out.events.is_empty());
        assert_eq!(out.summary.final_time, 0.0);
        assert_eq!(out.summary.trajectory_length, 0.0);
    }

    #[test]
    fn inadmissible_gamma_is_rejected_without_override() {
        let model = builtin_example(Example::Example1);
        let cfg = TriggerSettings::new(0.3, 0.03).resolve(&model).unwrap();
        let err = run(&model, &cfg, &ex1_x0(), &StopRule::default(), &TraceOptions::default());
        assert!(matches!(err, Err(Error::GammaInadmissible { .. })));
    }

    #[test]
    fn max_time_is_a_distinct_outcome() {
        let model = builtin_example(Example::Example1);
        let cfg = TriggerSettings::new(0.3, 0.03)
            .allowing_inadmissible_gamma()
            .resolve(&model)
            .unwrap();
        let stop = StopRule {
            max_time: 0.5,
            ..StopRule::default()
        };
        let out = run(&model, &cfg, &ex1_x0(), &stop, &TraceOptions::default()).unwrap();
        assert_eq!(out.summary.outcome, Outcome::MaxTime);
        assert!((out.summary.final_time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bisection_is_independent_of_the_bracket() {
        let root = 0.123456789012345;
        let f = |s: f64| s - root;
        let a = bisect_crossing(0.0, 0.5, 1e-12, f);
        let b = bisect_crossing(0.1, 0.13, 1e-12, f);
        assert_eq!(a, b);
        assert!(a >= root && a - root <= 1e-12);
        // crossing in the final partial cell
        let c = bisect_crossing(0.0, root + 1e-14, 1e-12, f);
        assert!(c >= root && c <= root + 1e-14);
    }
}
