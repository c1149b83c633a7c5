//! Run records shared by both engines: event log, piecewise trajectory, dense
//! diagnostic samples and the per-run summary statistics.

use serde::Serialize;

use crate::dynamics::{flow_unchecked, lyapunov, lyapunov_rate_from, HybridState, Observation};
use crate::model::{sigmoid_derivative, NetworkModel};
use crate::trigger::{eta_lower_bound, AlphaBeta, EventRecord, Outcome, TriggerConfig};

/// Distance to the final state that counts as "arrived" for `t_first`.
pub const ARRIVAL_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceOptions {
    /// Interior samples per inter-event interval; zero disables dense diagnostics.
    pub samples_per_interval: usize,
    /// Keep the samples in the output (otherwise only their aggregate checks are kept).
    pub keep_samples: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            samples_per_interval: 0,
            keep_samples: false,
        }
    }
}

impl TraceOptions {
    pub fn dense(samples_per_interval: usize) -> Self {
        TraceOptions {
            samples_per_interval,
            keep_samples: true,
        }
    }

    /// Dense checks without retaining the samples.
    pub fn audit(samples_per_interval: usize) -> Self {
        TraceOptions {
            samples_per_interval,
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub lyapunov: f64,
    pub lyapunov_rate: f64,
    pub drift_energy: f64,
    /// `max_i (|e_i| - gamma Psi_i)`
    pub max_trigger_excess: f64,
    /// Sample taken right after an event instant.
    pub event: bool,
}

/// Aggregated dense-sample checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub samples: usize,
    /// Largest increase of `L` between consecutive samples.
    pub max_lyapunov_increase: f64,
    /// Largest `|e_i| - gamma Psi_i` strictly inside inter-event intervals.
    pub max_trigger_excess: f64,
    /// Largest `dL/dt + (alpha - beta gamma^2) sum |F_i|^2`, with trajectory constants.
    pub max_decrease_slack: f64,
    /// Interior samples where the trigger function was positive beyond `1e-9`.
    pub missed_crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LyapunovTrace {
    pub samples: Vec<TraceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub final_time: f64,
    pub x_star: Vec<f64>,
    pub residual: f64,
    pub event_counts: Vec<usize>,
    /// Events per neuron up to and including `t_first`.
    pub events_to_t_first: Vec<usize>,
    /// Smallest per-neuron gap between consecutive triggers (the start counts as one).
    pub eta_sim: Option<f64>,
    /// Largest per-neuron gap between consecutive triggers.
    pub max_gap: Option<f64>,
    pub eta_theory: f64,
    /// First time with `||x(t) - x_star|| <= ARRIVAL_RADIUS`.
    pub t_first: Option<f64>,
    pub trajectory_length: f64,
    pub apriori: AlphaBeta,
    /// Constants recomputed from the range of `lambda_i g'(lambda_i x_i(t))` actually visited.
    pub posthoc: AlphaBeta,
    pub diagnostics: Option<Diagnostics>,
    /// Predictions that failed re-verification before firing (discrete engine only).
    pub audit_failures: usize,
}

impl RunSummary {
    pub fn mean_events_per_neuron(&self) -> f64 {
        mean_usize(&self.event_counts)
    }

    pub fn mean_events_to_t_first(&self) -> f64 {
        mean_usize(&self.events_to_t_first)
    }
}

fn mean_usize(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

/// Complete record of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub events: Vec<EventRecord>,
    /// Hybrid state right after each event instant, preceded by the initial state and
    /// followed by the terminal state when the run ended between events.
    pub anchors: Vec<HybridState>,
    pub trace: LyapunovTrace,
    pub summary: RunSummary,
}

impl RunOutput {
    /// Trigger times of each neuron, including the initial sample at `t = 0`.
    pub fn trigger_times(&self) -> Vec<Vec<f64>> {
        let n = self.summary.x_star.len();
        let mut times = vec![vec![0.0]; n];
        for ev in &self.events {
            times[ev.neuron].push(ev.time);
        }
        times
    }

    /// State at time `t` reconstructed from the piecewise closed form.
    pub fn state_at(&self, model: &NetworkModel, t: f64) -> Vec<f64> {
        let k = self
            .anchors
            .partition_point(|a| a.t <= t)
            .saturating_sub(1)
            .min(self.anchors.len() - 1);
        let a = &self.anchors[k];
        flow_unchecked(model, a, (t - a.t).max(0.0)).x
    }
}

pub(crate) struct RunRecorder {
    events: Vec<EventRecord>,
    anchors: Vec<HybridState>,
    audit_failures: usize,
}

impl RunRecorder {
    pub(crate) fn new(initial: &HybridState) -> Self {
        RunRecorder {
            events: Vec::new(),
            anchors: vec![initial.clone()],
            audit_failures: 0,
        }
    }

    pub(crate) fn event(&mut self, ev: EventRecord) {
        self.events.push(ev);
    }

    pub(crate) fn anchor(&mut self, state: &HybridState) {
        self.anchors.push(state.clone());
    }

    pub(crate) fn event_count(&self) -> usize {
        self.events.len()
    }

    pub(crate) fn fired_since(&self, start: usize) -> Vec<usize> {
        self.events[start..].iter().map(|e| e.neuron).collect()
    }

    pub(crate) fn audit_failure(&mut self) {
        self.audit_failures += 1;
    }

    pub(crate) fn finish(
        mut self,
        model: &NetworkModel,
        cfg: &TriggerConfig,
        apriori: AlphaBeta,
        terminal: HybridState,
        outcome: Outcome,
        options: &TraceOptions,
    ) -> RunOutput {
        let last_t = self.anchors.last().map(|a| a.t).unwrap_or(0.0);
        if terminal.t > last_t {
            self.anchors.push(terminal.clone());
        } else if let Some(last) = self.anchors.last_mut() {
            *last = terminal.clone();
        }
        let n = model.n();
        let x_star = terminal.x.clone();

        let mut event_counts = vec![0usize; n];
        let mut last_fire = vec![0.0f64; n];
        let mut eta_sim: Option<f64> = None;
        let mut max_gap: Option<f64> = None;
        for ev in &self.events {
            let gap = ev.time - last_fire[ev.neuron];
            last_fire[ev.neuron] = ev.time;
            event_counts[ev.neuron] += 1;
            eta_sim = Some(eta_sim.map_or(gap, |m| m.min(gap)));
            max_gap = Some(max_gap.map_or(gap, |m| m.max(gap)));
        }

        let t_first = first_arrival(model, &self.anchors, &x_star, ARRIVAL_RADIUS);
        let mut events_to_t_first = vec![0usize; n];
        if let Some(tf) = t_first {
            for ev in self.events.iter().take_while(|e| e.time <= tf) {
                events_to_t_first[ev.neuron] += 1;
            }
        }

        let posthoc = posthoc_alpha_beta(model, cfg.c, &self.anchors);
        let (trace, diagnostics) = if options.samples_per_interval > 0 {
            let (t, d) = dense_samples(model, cfg, &posthoc, &self.anchors, options);
            (t, Some(d))
        } else {
            (LyapunovTrace::default(), None)
        };

        let summary = RunSummary {
            outcome,
            final_time: terminal.t,
            residual: model.residual(&x_star),
            x_star,
            event_counts,
            events_to_t_first,
            eta_sim,
            max_gap,
            eta_theory: eta_lower_bound(cfg, model).unwrap_or(f64::NAN),
            t_first,
            trajectory_length: trajectory_length(model, &self.anchors),
            apriori,
            posthoc,
            diagnostics,
            audit_failures: self.audit_failures,
        };
        RunOutput {
            events: self.events,
            anchors: self.anchors,
            trace,
            summary,
        }
    }
}

fn segments(anchors: &[HybridState]) -> impl Iterator<Item = (&HybridState, f64)> {
    anchors.windows(2).map(|w| (&w[0], w[1].t - w[0].t))
}

/// `int ||x'|| dt` over the run. Between events `F_i(t) = F_i(t_k) e^{-d_i (t - t_k)}`,
/// which integrates in closed form when all `d_i` agree and by adaptive Simpson otherwise.
pub fn trajectory_length(model: &NetworkModel, anchors: &[HybridState]) -> f64 {
    let d = model.self_inhibition();
    let uniform = d.iter().all(|&v| v == d[0]);
    segments(anchors)
        .filter(|(_, dt)| *dt > 0.0)
        .map(|(a, dt)| {
            let f = crate::dynamics::drift(model, a);
            if uniform {
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                -norm * (-d[0] * dt).exp_m1() / d[0]
            } else {
                let speed = |s: f64| {
                    f.iter()
                        .zip(d)
                        .map(|(fi, di)| {
                            let v = fi * (-di * s).exp();
                            v * v
                        })
                        .sum::<f64>()
                        .sqrt()
                };
                adaptive_simpson(&speed, 0.0, dt, 1e-13, 40)
            }
        })
        .sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// First time the trajectory enters the ball of `radius` around `target`.
pub fn first_arrival(
    model: &NetworkModel,
    anchors: &[HybridState],
    target: &[f64],
    radius: f64,
) -> Option<f64> {
    const PROBES: usize = 16;
    let first = anchors.first()?;
    if distance(&first.x, target) <= radius {
        return Some(first.t);
    }
    for (a, dt) in segments(anchors) {
        let dist = |s: f64| distance(&flow_unchecked(model, a, s).x, target);
        let mut prev = 0.0;
        for k in 1..=PROBES {
            let s = dt * k as f64 / PROBES as f64;
            if dist(s) <= radius {
                let (mut lo, mut hi) = (prev, s);
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if dist(mid) <= radius {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(a.t + hi);
            }
            prev = s;
        }
    }
    None
}

/// Trajectory-based `alpha`, `beta`. Each `x_i` is monotone between events and `g'` is
/// unimodal, so the extremes of `lambda_i g'(lambda_i x_i)` sit at segment endpoints, or
/// at `lambda_i / 4` when a segment crosses zero.
pub fn posthoc_alpha_beta(model: &NetworkModel, c: f64, anchors: &[HybridState]) -> AlphaBeta {
    let lambda = model.slopes();
    let mut w_min = f64::INFINITY;
    let mut w_max: f64 = 0.0;
    let mut visit = |i: usize, x: f64| {
        let w = lambda[i] * sigmoid_derivative(lambda[i] * x);
        w_min = w_min.min(w);
        w_max = w_max.max(w);
    };
    for a in anchors {
        for (i, &x) in a.x.iter().enumerate() {
            visit(i, x);
        }
    }
    for (a, dt) in segments(anchors) {
        let end = flow_unchecked(model, a, dt);
        for i in 0..a.x.len() {
            visit(i, end.x[i]);
            if a.x[i].signum() != end.x[i].signum() {
                visit(i, 0.0);
            }
        }
    }
    AlphaBeta::from_gain_range(c, w_min, w_max).expect("c validated by the trigger config")
}

fn dense_samples(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    ab: &AlphaBeta,
    anchors: &[HybridState],
    options: &TraceOptions,
) -> (LyapunovTrace, Diagnostics) {
    let per = options.samples_per_interval;
    let margin = ab.alpha - ab.beta * cfg.gamma * cfg.gamma;
    let mut diag = Diagnostics {
        samples: 0,
        max_lyapunov_increase: f64::NEG_INFINITY,
        max_trigger_excess: f64::NEG_INFINITY,
        max_decrease_slack: f64::NEG_INFINITY,
        missed_crossings: 0,
    };
    let mut trace = LyapunovTrace::default();
    let mut prev_l: Option<f64> = None;
    let mut last_t = f64::NEG_INFINITY;

    let mut sample = |state: &HybridState, event: bool, interior: bool, trace: &mut LyapunovTrace| {
        let obs = Observation::new(model, state);
        let l = lyapunov(model, &state.x).expect("dimension checked");
        let rate = lyapunov_rate_from(model, state, &obs);
        let energy = obs.drift_energy();
        let excess = (0..state.n())
            .map(|i| obs.trigger_value(i, cfg.gamma))
            .fold(f64::NEG_INFINITY, f64::max);
        diag.samples += 1;
        if let Some(p) = prev_l {
            diag.max_lyapunov_increase = diag.max_lyapunov_increase.max(l - p);
        }
        prev_l = Some(l);
        diag.max_decrease_slack = diag.max_decrease_slack.max(rate + margin * energy);
        if interior {
            diag.max_trigger_excess = diag.max_trigger_excess.max(excess);
            if excess > 1e-9 {
                diag.missed_crossings += 1;
            }
        }
        if options.keep_samples && state.t > last_t {
            last_t = state.t;
            trace.samples.push(TraceSample {
                t: state.t,
                x: state.x.clone(),
                lyapunov: l,
                lyapunov_rate: rate,
                drift_energy: energy,
                max_trigger_excess: excess,
                event,
            });
        }
    };

    for (k, a) in anchors.iter().enumerate() {
        sample(a, k > 0 && k + 1 < anchors.len(), false, &mut trace);
        if let Some(next) = anchors.get(k + 1) {
            let dt = next.t - a.t;
            if dt <= 0.0 {
                continue;
            }
            for j in 1..=per {
                let s = dt * j as f64 / (per + 1) as f64;
                sample(&flow_unchecked(model, a, s), false, true, &mut trace);
            }
        }
    }
    (trace, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostFunction;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_arc_length_closed_form() {
        let model =
            NetworkModel::new(vec![2.0], vec![1.0], vec![0.5], CostFunction::zero(1)).unwrap();
        let start = HybridState::initial(&model, &[3.0]).unwrap();
        let end = flow_unchecked(&model, &start, 1.7);
        let len = trajectory_length(&model, &[start.clone(), end]);
        let f0 = (0.5f64 - 6.0).abs();
        assert_relative_eq!(len, f0 / 2.0 * (1.0 - (-3.4f64).exp()), max_relative = 1e-14);
        assert_eq!(trajectory_length(&model, &[start]), 0.0);
    }

    #[test]
    fn simpson_path_matches_closed_form_for_equal_rates() {
        let model =
            NetworkModel::new(vec![1.0, 1.0 + 1e-15], vec![1.0; 2], vec![0.5, -0.2], CostFunction::zero(2))
                .unwrap();
        let start = HybridState::initial(&model, &[3.0, 1.0]).unwrap();
        let end = flow_unchecked(&model, &start, 2.0);
        let len = trajectory_length(&model, &[start.clone(), end]);
        let f = crate::dynamics::drift(&model, &start);
        let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
        assert_relative_eq!(len, norm * (1.0 - (-2f64).exp()), max_relative = 1e-10);
    }

    #[test]
    fn first_arrival_scalar() {
        let model =
            NetworkModel::new(vec![1.0], vec![1.0], vec![0.0], CostFunction::zero(1)).unwrap();
        let start = HybridState::initial(&model, &[1.0]).unwrap();
        let end = flow_unchecked(&model, &start, 20.0);
        // x(t) = e^{-t}, target 0: arrival at t = ln(1000)
        let t = first_arrival(&model, &[start, end], &[0.0], 1e-3).unwrap();
        assert_relative_eq!(t, 1000f64.ln(), epsilon = 1e-10);
    }
}
