use etsim::dynamics::{lyapunov, HybridState};
use etsim::harness::{builtin_example, gamma_sweep, Example, ExperimentSpec};
use etsim::trace::{first_arrival, trajectory_length};
use etsim::{run, run_discrete, DiscreteOptions, Invalidation, Outcome, StopRule, TraceOptions, TriggerSettings};
use proptest::prelude::*;

fn ex2_settings(gamma: f64) -> TriggerSettings {
    TriggerSettings::new(gamma, 3.0).allowing_inadmissible_gamma()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn example2_runs_keep_every_invariant(
        x0 in prop::collection::vec(-4.0f64..4.0, 3),
        gamma in 0.05f64..0.6,
    ) {
        let m = builtin_example(Example::Example2);
        let cfg = ex2_settings(gamma).resolve(&m).unwrap();
        let out = run(&m, &cfg, &x0, &StopRule::default(), &TraceOptions::audit(30)).unwrap();
        let s = &out.summary;
        prop_assert_eq!(s.outcome, Outcome::Converged);
        prop_assert!(s.residual <= 1e-6);
        let d = s.diagnostics.unwrap();
        prop_assert!(d.max_lyapunov_increase <= 1e-9);
        prop_assert!(d.max_trigger_excess <= 1e-9);
        prop_assert!(s.eta_sim.unwrap() >= s.eta_theory);
        prop_assert!(s.max_gap.unwrap() <= cfg.compulsory_period + 1e-9);
        // anchors are the jump instants, each no later than its successor
        prop_assert!(out.anchors.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert!(s.trajectory_length.is_finite());
    }

    #[test]
    fn discrete_engine_reproduces_the_continuous_one(
        x0 in prop::collection::vec(-3.0f64..3.0, 3),
        gamma in 0.1f64..0.5,
    ) {
        let m = builtin_example(Example::Example2);
        let cfg = ex2_settings(gamma).resolve(&m).unwrap();
        let stop = StopRule::default();
        let a = run(&m, &cfg, &x0, &stop, &TraceOptions::default()).unwrap();
        let b = run_discrete(&m, &cfg, &x0, &stop, &TraceOptions::default(), &DiscreteOptions::default()).unwrap();
        prop_assert_eq!(a.events.len(), b.events.len());
        for (p, q) in a.events.iter().zip(&b.events) {
            prop_assert_eq!(p.neuron, q.neuron);
            prop_assert_eq!(p.cause, q.cause);
            prop_assert!((p.time - q.time).abs() <= 10.0 * cfg.bisection_tol);
        }
        let diff = a.summary.x_star.iter().zip(&b.summary.x_star).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        prop_assert!(diff <= 1e-6);
    }

    #[test]
    fn lyapunov_is_monotone_across_event_instants(x0 in prop::collection::vec(-2.0f64..2.0, 5)) {
        let m = builtin_example(Example::Example1);
        let cfg = TriggerSettings::new(0.3, 0.03).allowing_inadmissible_gamma().resolve(&m).unwrap();
        let stop = StopRule { max_time: 3.0, ..StopRule::default() };
        let out = run(&m, &cfg, &x0, &stop, &TraceOptions::default()).unwrap();
        let l: Vec<f64> = out.anchors.iter().map(|a| lyapunov(&m, &a.x).unwrap()).collect();
        prop_assert!(l.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}

#[test]
fn tail_length_vanishes_as_runs_extend() {
    let m = builtin_example(Example::Example2);
    let cfg = ex2_settings(0.5).resolve(&m).unwrap();
    let x0 = [1.211, -0.772, -1.753];
    let full = run(&m, &cfg, &x0, &StopRule::default(), &TraceOptions::default()).unwrap();
    let total = full.summary.trajectory_length;
    let mut tails = Vec::new();
    for t in [2.0, 5.0, 10.0, 20.0] {
        let k = full.anchors.partition_point(|a| a.t <= t);
        let head: Vec<HybridState> = full.anchors[..k].to_vec();
        let mut cut = head.clone();
        let last = head.last().unwrap();
        cut.push(etsim::dynamics::exact_flow(&m, last, t - last.t).unwrap());
        tails.push(total - trajectory_length(&m, &cut));
    }
    assert!(tails.windows(2).all(|w| w[1] < w[0]), "{tails:?}");
    assert!(*tails.last().unwrap() < 1e-3 * total);
    assert!(*tails.last().unwrap() >= -1e-9);
}

#[test]
fn first_arrival_is_within_the_run() {
    let m = builtin_example(Example::Example2);
    let cfg = ex2_settings(0.5).resolve(&m).unwrap();
    let out = run(&m, &cfg, &[1.211, -0.772, -1.753], &StopRule::default(), &TraceOptions::default()).unwrap();
    let tf = out.summary.t_first.unwrap();
    assert!(tf > 0.0 && tf < out.summary.final_time);
    let again = first_arrival(&m, &out.anchors, &out.summary.x_star, 1e-3).unwrap();
    assert_eq!(tf, again);
    let x = out.state_at(&m, tf);
    let d: f64 = x.iter().zip(&out.summary.x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((d - 1e-3).abs() < 1e-9);
}

#[test]
fn linked_only_invalidation_is_audited() {
    let m = builtin_example(Example::Example2);
    let cfg = ex2_settings(0.5).resolve(&m).unwrap();
    let opts = DiscreteOptions { invalidation: Invalidation::LinkedOnly };
    let out = run_discrete(&m, &cfg, &[1.211, -0.772, -1.753], &StopRule::default(), &TraceOptions::audit(20), &opts).unwrap();
    assert_eq!(out.summary.outcome, Outcome::Converged);
    // fully coupled network: every neuron is linked, so nothing goes stale
    assert_eq!(out.summary.audit_failures, 0);
    assert!(out.summary.diagnostics.unwrap().max_trigger_excess <= 1e-9);
}

#[test]
fn sweeps_are_reproducible_and_respect_the_bound() {
    let m = builtin_example(Example::Example2);
    let mut spec = ExperimentSpec::new(m, ex2_settings(0.3), vec![0.1, 0.5]);
    spec.runs_per_point = 4;
    spec.seed = 5;
    let a = gamma_sweep(&spec).unwrap();
    assert_eq!(a, gamma_sweep(&spec).unwrap());
    for r in &a.runs {
        assert!(r.eta_sim.unwrap() >= r.eta_theory);
    }
    let row = &a.rows[0];
    assert!(row.eta_sim_mean >= 0.0 && row.n_mean >= 0.0);
    spec.seed = 6;
    assert_ne!(a.runs[0].x0, gamma_sweep(&spec).unwrap().runs[0].x0);
}
