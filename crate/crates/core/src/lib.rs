//! Event-triggered simulation of analytic (Hopfield-type) neural networks
//! `x' = -D x - grad f(g(Lambda x))|_{sampled} + theta` with per-neuron sample-and-hold
//! feedback, exact piecewise flows and exact event localization.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model;
pub mod monitor;
pub mod trace;
pub mod trigger;

pub use dynamics::{HybridState, Observation};
pub use error::{Error, Result};
pub use harness::{builtin_example, Engine, Example, ExperimentSpec, StatRow};
pub use model::{CostFunction, NetworkModel, SquareMatrix};
pub use monitor::{predict_next, run_discrete, DiscreteOptions, Invalidation};
pub use trace::{RunOutput, RunSummary, TraceOptions};
pub use trigger::{run, Cause, EventRecord, Outcome, StopRule, TriggerConfig, TriggerSettings};
