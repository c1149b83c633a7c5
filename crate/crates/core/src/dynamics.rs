//! Hybrid state of the event-triggered network and the exact piecewise-exponential
//! flow between events, together with the quantities the trigger rule is built from.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sigmoid, sigmoid_derivative, NetworkModel};

/// Continuous state plus the per-neuron sample-and-hold registers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridState {
    pub t: f64,
    pub x: Vec<f64>,
    /// Time of each neuron's most recent trigger.
    pub last_trigger: Vec<f64>,
    /// `[grad f(y(last_trigger[i]))]_i`, the feedback neuron `i` currently holds.
    pub sampled_grad: Vec<f64>,
}

impl HybridState {
    /// State at `t = 0` with every neuron sampled at the initial point, so `e(0) = 0`.
    pub fn initial(model: &NetworkModel, x0: &[f64]) -> Result<Self> {
        model.check_dim(x0)?;
        Ok(HybridState {
            t: 0.0,
            x: x0.to_vec(),
            last_trigger: vec![0.0; x0.len()],
            sampled_grad: model.feedback(x0),
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        Ok(())
    }
}

/// Right-hand side `F_i = -d_i x_i - sampled_grad_i + theta_i`; this is `x_i'` between events.
pub fn drift(model: &NetworkModel, state: &HybridState) -> Vec<f64> {
    let d = model.self_inhibition();
    let theta = model.input();
    (0..state.n())
        .map(|i| -d[i] * state.x[i] - state.sampled_grad[i] + theta[i])
        .collect()
}

/// Closed-form solution of `x_i' = -d_i x_i + I_i` over `dt`, valid as long as no
/// neuron triggers inside `(t, t + dt]`.
pub fn exact_flow(model: &NetworkModel, state: &HybridState, dt: f64) -> Result<HybridState> {
    if dt < 0.0 || dt.is_nan() {
        return Err(Error::NegativeDuration(dt));
    }
    Ok(flow_unchecked(model, state, dt))
}

pub(crate) fn flow_unchecked(model: &NetworkModel, state: &HybridState, dt: f64) -> HybridState {
    if dt == 0.0 {
        return state.clone();
    }
    let d = model.self_inhibition();
    let f = drift(model, state);
    let x = state
        .x
        .iter()
        .zip(d)
        .zip(&f)
        .map(|((&xi, &di), &fi)| xi - fi / di * (-di * dt).exp_m1())
        .collect();
    HybridState {
        t: state.t + dt,
        x,
        last_trigger: state.last_trigger.clone(),
        sampled_grad: state.sampled_grad.clone(),
    }
}

/// `e_i = [grad f(y(t))]_i - sampled_grad_i`
pub fn measurement_error(model: &NetworkModel, state: &HybridState) -> Vec<f64> {
    model
        .feedback(&state.x)
        .into_iter()
        .zip(&state.sampled_grad)
        .map(|(g, s)| g - s)
        .collect()
}

fn hold_decay(model: &NetworkModel, state: &HybridState) -> Vec<f64> {
    model
        .self_inhibition()
        .iter()
        .zip(&state.last_trigger)
        .map(|(&d, &tk)| (-d * (state.t - tk)).exp())
        .collect()
}

/// Normalization `sum |F_i|^2 / sum e^{-2 d_i (t - t_k^i)}`.
pub fn delta(model: &NetworkModel, state: &HybridState) -> f64 {
    let f = drift(model, state);
    let decay = hold_decay(model, state);
    normalized_energy(&f, &decay)
}

fn normalized_energy(f: &[f64], decay: &[f64]) -> f64 {
    let num: f64 = f.iter().map(|v| v * v).sum();
    let den: f64 = decay.iter().map(|v| v * v).sum();
    num / den
}

/// Threshold profile `Psi_i = sqrt(delta) e^{-d_i (t - t_k^i)}`.
pub fn psi(model: &NetworkModel, state: &HybridState, i: usize) -> Result<f64> {
    state.check_index(i)?;
    let decay = hold_decay(model, state);
    Ok(delta(model, state).sqrt() * decay[i])
}

/// `|e_i| - gamma Psi_i`; neuron `i` is due once this becomes positive.
pub fn trigger_value(model: &NetworkModel, state: &HybridState, i: usize, gamma: f64) -> Result<f64> {
    state.check_index(i)?;
    Ok(Observation::new(model, state).trigger_value(i, gamma))
}

/// Everything the trigger rule and the diagnostics need at one instant, computed once.
#[derive(Debug, Clone)]
pub struct Observation {
    pub outputs: Vec<f64>,
    pub drift: Vec<f64>,
    pub error: Vec<f64>,
    pub decay: Vec<f64>,
    pub delta: f64,
}

impl Observation {
    pub fn new(model: &NetworkModel, state: &HybridState) -> Self {
        let outputs = model.outputs(&state.x);
        let cost = model.cost();
        let error = (0..state.n())
            .map(|i| cost.gradient_component(&outputs, i) - state.sampled_grad[i])
            .collect();
        let drift = drift(model, state);
        let decay = hold_decay(model, state);
        let delta = normalized_energy(&drift, &decay);
        Observation {
            outputs,
            drift,
            error,
            decay,
            delta,
        }
    }

    #[inline]
    pub fn psi(&self, i: usize) -> f64 {
        self.delta.sqrt() * self.decay[i]
    }

    #[inline]
    pub fn trigger_value(&self, i: usize, gamma: f64) -> f64 {
        self.error[i].abs() - gamma * self.psi(i)
    }

    pub fn drift_energy(&self) -> f64 {
        self.drift.iter().map(|v| v * v).sum()
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `y ln y + (1 - y) ln(1 - y)` at `y = g(u)`, accurate in the saturated tails.
fn entropy_at(u: f64) -> f64 {
    let y = sigmoid(u);
    let one_minus = sigmoid(-u);
    -(y * softplus(-u) + one_minus * softplus(u))
}

/// Energy `L(x) = f(y) + sum_i (d_i / lambda_i) int_0^{y_i} g^{-1}(s) ds - theta^T y`.
pub fn lyapunov(model: &NetworkModel, x: &[f64]) -> Result<f64> {
    model.check_dim(x)?;
    let y = model.outputs(x);
    let f = model.cost().value(&y)?;
    let d = model.self_inhibition();
    let lambda = model.slopes();
    let entropy: f64 = (0..x.len())
        .map(|i| d[i] / lambda[i] * entropy_at(lambda[i] * x[i]))
        .sum();
    let input: f64 = model.input().iter().zip(&y).map(|(a, b)| a * b).sum();
    Ok(f + entropy - input)
}

/// Exact `dL/dt = -sum_i lambda_i g'(lambda_i x_i) (F_i - e_i) F_i` along the hybrid flow.
pub fn lyapunov_rate(model: &NetworkModel, state: &HybridState) -> f64 {
    lyapunov_rate_from(model, state, &Observation::new(model, state))
}

pub(crate) fn lyapunov_rate_from(model: &NetworkModel, state: &HybridState, obs: &Observation) -> f64 {
    let lambda = model.slopes();
    -(0..state.n())
        .map(|i| {
            let w = lambda[i] * sigmoid_derivative(lambda[i] * state.x[i]);
            w * (obs.drift[i] - obs.error[i]) * obs.drift[i]
        })
        .sum::<f64>()
}
