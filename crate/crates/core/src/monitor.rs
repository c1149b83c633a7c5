//! Discrete-time monitoring: each neuron predicts its own next trigger from the
//! closed-form flow and re-predicts whenever a neuron it depends on fires.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_unchecked, HybridState, Observation};
use crate::error::{invalid, Result};
use crate::model::NetworkModel;
use crate::trace::{RunOutput, RunRecorder, TraceOptions};
use crate::trigger::{
    admissibility, anchored_root, fire_instant, safe_stride, trigger_lipschitz, Cause, Outcome,
    StopRule, TriggerConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invalidation {
    /// Every pending prediction is recomputed after each event instant.
    #[default]
    All,
    /// Only the fired neurons and their synaptic neighbours re-predict. Ignores the
    /// coupling through `delta`, so it is an approximation.
    LinkedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiscreteOptions {
    pub invalidation: Invalidation,
}

/// Pending predictions of the discrete engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionContext {
    /// Newest trigger time over all neurons.
    pub t_star: f64,
    pub pending: Vec<Option<(f64, Cause)>>,
    /// Earliest compulsory deadline.
    pub horizon: f64,
}

impl PredictionContext {
    fn new(n: usize) -> Self {
        PredictionContext {
            t_star: 0.0,
            pending: vec![None; n],
            horizon: f64::INFINITY,
        }
    }
}

/// Next trigger time of neuron `i` assuming nobody else fires first: first violation of
/// `|e_i| <= gamma Psi_i` along the closed-form flow, capped at `t_k^i + T`.
pub fn predict_next(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    state: &HybridState,
    i: usize,
) -> Result<(f64, Cause)> {
    state.check_index(i)?;
    Ok(predict_until(model, cfg, state, i, f64::INFINITY).expect("unbounded prediction"))
}

/// `None` when neither a crossing nor the deadline occurs before `time_limit`.
fn predict_until(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    state: &HybridState,
    i: usize,
    time_limit: f64,
) -> Option<(f64, Cause)> {
    let t0 = state.t;
    let abs_deadline = state.last_trigger[i] + cfg.compulsory_period;
    let deadline = (abs_deadline - t0).max(0.0);
    let end = deadline.min((time_limit - t0).max(0.0));
    let mut obs = Observation::new(model, state);
    let lip = trigger_lipschitz(model, cfg.gamma, &obs, end)[i];
    let mut offset = 0.0;
    loop {
        let stride = safe_stride(obs.trigger_value(i, cfg.gamma), lip, cfg.bracketing_step);
        let last = offset + stride >= end;
        let next_offset = if last { end } else { offset + stride };
        let next_obs = Observation::new(model, &flow_unchecked(model, state, next_offset));
        if next_obs.trigger_value(i, cfg.gamma) > 0.0 {
            let r = anchored_root(model, cfg, state, i, offset, next_offset);
            let cause = if r < deadline {
                Cause::Autonomy
            } else {
                Cause::Compulsory
            };
            let time = match cause {
                Cause::Autonomy => t0 + r,
                Cause::Compulsory => abs_deadline.max(t0),
            };
            return Some((time, cause));
        }
        if last {
            return (deadline <= end).then_some((abs_deadline.max(t0), Cause::Compulsory));
        }
        offset = next_offset;
        obs = next_obs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    neuron: usize,
    generation: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed for a min-heap on (time, neuron)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.neuron.cmp(&self.neuron))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Queue {
    heap: BinaryHeap<Entry>,
    generation: Vec<u64>,
    ctx: PredictionContext,
}

impl Queue {
    fn new(n: usize) -> Self {
        Queue {
            heap: BinaryHeap::new(),
            generation: vec![0; n],
            ctx: PredictionContext::new(n),
        }
    }

    fn repredict(
        &mut self,
        model: &NetworkModel,
        cfg: &TriggerConfig,
        state: &HybridState,
        i: usize,
        limit: f64,
    ) {
        self.generation[i] += 1;
        let p = predict_until(model, cfg, state, i, limit);
        self.ctx.pending[i] = p;
        if let Some((time, _)) = p {
            self.heap.push(Entry {
                time,
                neuron: i,
                generation: self.generation[i],
            });
        }
    }

    fn pop_valid(&mut self) -> Option<Entry> {
        while let Some(e) = self.heap.pop() {
            if e.generation == self.generation[e.neuron] {
                return Some(e);
            }
        }
        None
    }

    fn peek_valid(&mut self) -> Option<Entry> {
        while let Some(&e) = self.heap.peek() {
            if e.generation == self.generation[e.neuron] {
                return Some(e);
            }
            self.heap.pop();
        }
        None
    }
}

fn audit_ok(obs: &Observation, cfg: &TriggerConfig, i: usize, cause: Cause) -> bool {
    match cause {
        Cause::Compulsory => true,
        Cause::Autonomy => {
            let scale = (cfg.gamma * obs.psi(i)).max(obs.error[i].abs()).max(1.0);
            obs.trigger_value(i, cfg.gamma) >= -1e-8 * scale
        }
    }
}

/// Discrete-monitoring simulation with a priority queue of per-neuron predictions.
pub fn run_discrete(
    model: &NetworkModel,
    cfg: &TriggerConfig,
    x0: &[f64],
    stop: &StopRule,
    trace: &TraceOptions,
    options: &DiscreteOptions,
) -> Result<RunOutput> {
    model.check_dim(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "initial state must be finite"));
    }
    let apriori = admissibility(model, cfg, x0)?;
    let n = model.n();
    let tol = cfg.bisection_tol;
    let mut state = HybridState::initial(model, x0)?;
    let mut recorder = RunRecorder::new(&state);
    let mut queue = Queue::new(n);
    for i in 0..n {
        queue.repredict(model, cfg, &state, i, stop.max_time);
    }

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
        queue.ctx.horizon = state
            .last_trigger
            .iter()
            .fold(f64::INFINITY, |m, &t| m.min(t + cfg.compulsory_period));
        let Some(head) = queue.pop_valid() else {
            state = flow_unchecked(model, &state, stop.max_time - state.t);
            state.t = stop.max_time;
            break Outcome::MaxTime;
        };
        let mut popped = vec![head];
        while let Some(e) = queue.peek_valid() {
            if e.time > head.time + tol {
                break;
            }
            popped.push(queue.pop_valid().expect("peeked"));
        }

        let t = head.time.max(state.t);
        state = flow_unchecked(model, &state, t - state.t);
        state.t = t;
        let obs = Observation::new(model, &state);
        let mut due = Vec::with_capacity(popped.len());
        let mut stale = Vec::new();
        for e in &popped {
            let (_, cause) = queue.ctx.pending[e.neuron].expect("valid entry has a prediction");
            if audit_ok(&obs, cfg, e.neuron, cause) {
                due.push((e.neuron, cause));
            } else {
                recorder.audit_failure();
                stale.push(e.neuron);
            }
        }
        due.sort_by_key(|d| d.0);
        if due.is_empty() {
            for i in stale {
                queue.repredict(model, cfg, &state, i, stop.max_time);
            }
            continue;
        }

        let before = recorder.event_count();
        fire_instant(model, cfg, &mut state, &due, &mut recorder);
        recorder.anchor(&state);
        queue.ctx.t_star = t;
        let fired = recorder.fired_since(before);
        let targets: Vec<usize> = match options.invalidation {
            Invalidation::All => (0..n).collect(),
            Invalidation::LinkedOnly => (0..n)
                .filter(|&k| {
                    stale.contains(&k)
                        || fired
                            .iter()
                            .any(|&j| j == k || model.cost().linked(k, j))
                })
                .collect(),
        };
        for k in targets {
            queue.repredict(model, cfg, &state, k, stop.max_time);
        }
    };
    Ok(recorder.finish(model, cfg, apriori, state, outcome, trace))
}
