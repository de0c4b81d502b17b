mod common;

use std::f64::consts::SQRT_2;

use nalgebra::DVector;
use ogdlds_core::certificate::{lemma_bound_check, proof_inequality_diagnostics, LEMMA_CHECK};
use ogdlds_core::cost::setpoint_from_input;
use ogdlds_core::sim::{experiment_tracking, write_schedule_csv, CostSpec, SetpointSpec};
use ogdlds_core::system::DEFAULT_RANK_TOL;
use ogdlds_core::{
    reference_system, run_closed_loop, simulate, CostSequence, Error, LinearSystem,
    LogCoshTrackingCost, Moduli, RandomSetpoints, RunConfig, RunRecord, SetpointSchedule,
    SimOptions, StageCost, TheoremMode,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 16,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Step sizes placed at fractions `fv`, `fx` of the certified ranges.
fn step_sizes(sys: &LinearSystem, moduli: &Moduli, fv: f64, fx: f64) -> (f64, f64) {
    let a_norm = ogdlds_core::linalg::spectral_norm(sys.a());
    let v_lo = (2.0 - SQRT_2) / (2.0 * moduli.alpha_u);
    let v_hi = 2.0 / (moduli.l_u + moduli.alpha_u);
    let x_lo = ((2.0 * a_norm - 1.0) / (2.0 * a_norm * moduli.alpha_x)).max(0.0);
    let x_hi = 2.0 / (moduli.l_x + moduli.alpha_x);
    (v_lo + fv * (v_hi - v_lo), x_lo + fx * (x_hi - x_lo))
}

fn check_run(sys: &LinearSystem, rec: &RunRecord) -> Result<(), TestCaseError> {
    let ctrb = sys.build_controllability(DEFAULT_RANK_TOL).unwrap();
    let scale = rec
        .trace
        .x
        .iter()
        .chain(&rec.trace.x_hat)
        .map(|x| x.amax())
        .fold(1.0, f64::max);
    prop_assert!(rec.trace.dynamics_residual(sys) <= 1e-12 * scale);
    prop_assert!(rec.trace.recursion_residual(sys, &ctrb).unwrap() <= 1e-9 * scale);
    prop_assert!(rec.trace.stacked_identity_residual(&ctrb).unwrap() <= 1e-9 * scale);
    prop_assert!(rec.regret <= rec.comparator_regret + 1e-9 * rec.total_cost.max(1.0));
    prop_assert!(rec.regret >= -1e-9 * rec.total_cost.max(1.0));
    let cert = rec.certificate.as_ref().expect("assumptions hold");
    prop_assert!(rec.bound_ok(), "bound {:?}", rec.bound);
    let lemma = lemma_bound_check(rec, cert).unwrap();
    prop_assert!(lemma.passed(), "{}", lemma);
    let chains = proof_inequality_diagnostics(rec, cert).unwrap();
    prop_assert!(chains.passed(), "{}", chains);
    Ok(())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn certificate_holds_for_quadratic_costs(
        seed in any::<u64>(),
        n in 1usize..=3,
        m in 1usize..=2,
        fv in 0.01f64..=1.0,
        fx in 0.01f64..=1.0,
    ) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, m, 1.2);
        let seq = common::random_quadratic_costs(&mut rng, &sys, 60);
        let (gamma_v, gamma_x) = step_sizes(&sys, &seq.moduli(), fv, fx);
        let opts = SimOptions {
            gamma_v,
            gamma_x,
            x0: DVector::from_fn(n, |_, _| common::uniform(&mut rng, -2.0, 2.0)),
            v0: DVector::from_fn(m, |_, _| common::uniform(&mut rng, -2.0, 2.0)),
            mode: TheoremMode::Strict,
            record_predictions: true,
        };
        let rec = simulate(&sys, &seq, &opts).unwrap();
        check_run(&sys, &rec)?;
        prop_assert!(rec.comparator_regret.to_bits() == rec.total_cost.to_bits());
    }

    #[test]
    fn certificate_holds_for_log_cosh_costs(
        seed in any::<u64>(),
        n in 1usize..=3,
        fv in 0.01f64..=1.0,
        fx in 0.01f64..=1.0,
    ) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, 1, 0.6);
        let schedule = common::random_schedule(&mut rng, &sys, 25, 0.3);
        let (q, r) = (common::uniform(&mut rng, 0.5, 2.0), common::uniform(&mut rng, 0.5, 2.0));
        let c = common::uniform(&mut rng, 0.0, 0.5) * q.min(r);
        let costs = schedule
            .theta
            .iter()
            .zip(&schedule.eta)
            .map(|(th, et)| LogCoshTrackingCost::new(th.clone(), et.clone(), q, r, c).unwrap())
            .collect();
        let seq = CostSequence::new(costs).unwrap();
        let (gamma_v, gamma_x) = step_sizes(&sys, &seq.moduli(), fv, fx);
        let opts = SimOptions {
            gamma_v,
            gamma_x,
            x0: DVector::zeros(n),
            v0: DVector::zeros(1),
            mode: TheoremMode::Advisory,
            record_predictions: true,
        };
        let rec = simulate(&sys, &seq, &opts).unwrap();
        prop_assume!(rec.assumptions.passed());
        check_run(&sys, &rec)?;
    }
}

#[test]
fn single_jump_satisfies_lemma_at_every_prefix() {
    let sys = reference_system();
    let eta: Vec<DVector<f64>> = (1..=40)
        .map(|t| DVector::from_element(1, if t < 15 { 1.0 } else { -2.0 }))
        .collect();
    let theta = eta.iter().map(|e| setpoint_from_input(&sys, e).unwrap()).collect();
    let schedule = SetpointSchedule::new(theta, eta).unwrap();
    let rec = simulate(&sys, &common::unit_costs(&schedule), &reference_options()).unwrap();
    let report = lemma_bound_check(&rec, rec.certificate.as_ref().unwrap()).unwrap();
    let check = report.get(LEMMA_CHECK).unwrap();
    assert!(check.passed);
    assert_eq!(check.evaluated, 40);
}

fn reference_options() -> SimOptions {
    SimOptions {
        gamma_v: 0.98,
        gamma_x: 0.995,
        x0: DVector::zeros(3),
        v0: DVector::zeros(1),
        mode: TheoremMode::Strict,
        record_predictions: true,
    }
}

#[test]
fn tracking_runs_satisfy_every_chain() {
    for seed in 0..20 {
        let rec = experiment_tracking(seed).unwrap();
        let cert = rec.certificate.as_ref().unwrap();
        let report = proof_inequality_diagnostics(&rec, cert).unwrap();
        assert!(report.passed(), "seed {seed}\n{report}");
        assert_eq!(report.checks.len(), 6);
        assert!(rec.comparator_regret.to_bits() == rec.total_cost.to_bits());
    }
}

#[test]
fn frozen_setpoints_give_horizon_independent_bound() {
    let sys = reference_system();
    let base = RandomSetpoints::REFERENCE
        .generate(&sys, 400, &mut ogdlds_core::cost::setpoint_rng(3, 0))
        .unwrap()
        .frozen_after(20);
    let mut bounds = Vec::new();
    let mut c_mu = Vec::new();
    for horizon in [50, 100, 200, 400] {
        let schedule = SetpointSchedule::new(
            base.theta[..horizon].to_vec(),
            base.eta[..horizon].to_vec(),
        )
        .unwrap();
        let rec = simulate(&sys, &common::unit_costs(&schedule), &reference_options()).unwrap();
        assert!(rec.bound_ok());
        bounds.push(rec.bound.unwrap().bound);
        c_mu.push(rec.certificate.unwrap().c_mu.unwrap());
    }
    assert!(bounds.windows(2).all(|w| w[0] == w[1]), "{bounds:?}");
    assert!(c_mu.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn causality_of_closed_loop_inputs() {
    let sys = reference_system();
    let rec = experiment_tracking(5).unwrap();
    let base = common::unit_costs(&SetpointSchedule::new(rec.theta.clone(), rec.eta.clone()).unwrap());
    let a = simulate(&sys, &base, &reference_options()).unwrap();
    for t in [3, 12, 25] {
        let mut eta = rec.eta.clone();
        let mut theta = rec.theta.clone();
        for k in t..eta.len() {
            eta[k] = &eta[k] * -0.5;
            theta[k] = setpoint_from_input(&sys, &eta[k]).unwrap();
        }
        let seq = common::unit_costs(&SetpointSchedule::new(theta, eta).unwrap());
        let b = simulate(&sys, &seq, &reference_options()).unwrap();
        // L_{t+1} onwards differ; u_1..u_{t+1} only see L_0..L_t
        assert_eq!(a.trace.u[..=t], b.trace.u[..=t]);
    }
}

fn write_config(dir: &std::path::Path, config: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn schedule_config(sys: &LinearSystem, horizon: usize) -> RunConfig {
    RunConfig {
        system: sys.to_spec(),
        cost: CostSpec { q: 1.0, r: 1.0 },
        horizon,
        gamma_v: 0.98,
        gamma_x: 0.995,
        x0: vec![0.0; sys.n()],
        v0: vec![0.0; sys.m()],
        setpoints: SetpointSpec::Schedule {
            schedule_file: "schedule.csv".into(),
        },
        seed: None,
        strict: true,
        record_predictions: true,
    }
}

#[test]
fn schedule_file_resolves_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let sys = reference_system();
    let rec = experiment_tracking(6).unwrap();
    let schedule = SetpointSchedule::new(rec.theta.clone(), rec.eta.clone()).unwrap();
    write_schedule_csv(&schedule, dir.path().join("schedule.csv")).unwrap();
    let path = write_config(dir.path(), &schedule_config(&sys, 30));
    let loaded = RunConfig::load(&path).unwrap();
    let again = run_closed_loop(&loaded).unwrap();
    assert_eq!(again.trace.u, rec.trace.u);
    assert_eq!(again.total_cost.to_bits(), rec.total_cost.to_bits());

    let short = write_config(dir.path(), &schedule_config(&sys, 31));
    let err = run_closed_loop(&RunConfig::load(&short).unwrap()).unwrap_err();
    assert!(matches!(err, Error::HorizonMismatch { expected: 31, found: 30 }));
}

#[test]
fn strict_config_refuses_uncertified_step_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let sys = reference_system();
    let schedule = experiment_tracking(6).unwrap();
    write_schedule_csv(
        &SetpointSchedule::new(schedule.theta, schedule.eta).unwrap(),
        dir.path().join("schedule.csv"),
    )
    .unwrap();
    let mut config = schedule_config(&sys, 30);
    config.gamma_x = 0.5;
    let path = write_config(dir.path(), &config);
    let err = run_closed_loop(&RunConfig::load(&path).unwrap()).unwrap_err();
    assert!(matches!(err, Error::AssumptionViolated(_)));
    assert!(err.is_assumption());
}

#[test]
fn runaway_state_is_a_numerical_failure() {
    let sys = reference_system();
    let schedule = RandomSetpoints::REFERENCE
        .generate(&sys, 1000, &mut ogdlds_core::cost::setpoint_rng(1, 0))
        .unwrap();
    let opts = SimOptions {
        gamma_x: 1e-3,
        mode: TheoremMode::Advisory,
        ..reference_options()
    };
    let err = simulate(&sys, &common::unit_costs(&schedule), &opts).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn moduli_of_log_cosh_costs() {
    let c = LogCoshTrackingCost::new(DVector::zeros(1), DVector::zeros(1), 1.0, 2.0, 0.5).unwrap();
    let m = c.moduli();
    assert_eq!((m.alpha_x, m.l_x, m.alpha_u, m.l_u), (1.0, 1.5, 2.0, 2.5));
}
