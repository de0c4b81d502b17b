//! Closed-loop simulation, the two simulation-study experiments, and
//! file persistence.

mod config;
mod experiment;
mod export;

pub use config::{CostSpec, RunConfig, SetpointSpec};
pub use experiment::{
    experiment_pathlength, experiment_tracking, linear_fit, sweep_change_prob, sweep_run, LinearFit,
    SweepRecord, SweepRow, REFERENCE_GAMMA_V, REFERENCE_GAMMA_X, TRACKING_HORIZON,
};
pub use export::{
    read_json, read_schedule_csv, read_sweep_csv, read_trajectory_csv, sweep_csv_string,
    trajectory_csv_string, write_json, write_schedule_csv, write_sweep_csv, write_trajectory_csv,
    RunSummary, TrajectoryTable,
};

use log::warn;
use nalgebra::DVector;

use crate::certificate::{compute_constants, verify_bound, BoundReport, RegretCertificate};
use crate::controller::{validate_step_sizes, ClosedLoopTrace, OgdController, TheoremMode};
use crate::cost::{CostSequence, Moduli, PathMetrics, SetpointSchedule, StageCost};
use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{comparator_regret, optimal_trajectory, regret};
use crate::report::{CheckReport, Condition, Relation};
use crate::system::{ControllabilityData, LinearSystem, DEFAULT_RANK_TOL};

/// Setpoints must be steady states within this tolerance, relative to
/// `max(1, largest setpoint norm)`.
pub const STEADY_STATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub gamma_v: f64,
    pub gamma_x: f64,
    pub x0: DVector<f64>,
    pub v0: DVector<f64>,
    pub mode: TheoremMode,
    /// Keep `g_t` and `x_hat_{t+mu-1}`; needed by the diagnostic checks.
    pub record_predictions: bool,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub trace: ClosedLoopTrace,
    pub theta: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    /// `x_hat_mu`, the prediction made at `t = 1`.
    pub theta0: DVector<f64>,
    pub eta0: DVector<f64>,
    pub cost_x: Vec<f64>,
    pub cost_u: Vec<f64>,
    pub total_cost: f64,
    pub optimal_cost: f64,
    pub regret: f64,
    pub comparator_regret: f64,
    pub path: PathMetrics,
    pub mu: usize,
    pub moduli: Moduli,
    pub assumptions: CheckReport,
    pub certificate: Option<RegretCertificate>,
    pub bound: Option<BoundReport>,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.trace.horizon()
    }

    pub fn bound_ok(&self) -> bool {
        self.bound.as_ref().is_some_and(|b| b.passed)
    }
}

/// Step-size ranges, the norm condition on `A`, and steady-state setpoints.
pub fn assumption_report(
    sys: &LinearSystem,
    ctrb: &ControllabilityData,
    moduli: &Moduli,
    gamma_v: f64,
    gamma_x: f64,
    schedule: &SetpointSchedule,
) -> CheckReport {
    let mut report = validate_step_sizes(gamma_v, gamma_x, moduli, ctrb.a_norm);
    report.extend(ctrb.check_norm_bound(moduli.alpha_x, moduli.l_x));
    let scale = schedule
        .theta
        .iter()
        .chain(&schedule.eta)
        .map(|v| v.norm())
        .fold(1.0, f64::max);
    report.push(Condition::new(
        "max |(I - A) theta_t - B eta_t|",
        schedule.max_steady_state_residual(sys),
        Relation::LessEq,
        STEADY_STATE_TOL * scale,
    ));
    report
}

/// Runs the controller against a cost sequence revealed one step at a time:
/// `u_t` is computed from `x_{t-1}` and `L_{t-1}`, then `x_t` is reached and
/// `L_t(x_t, u_t)` is charged.
pub fn simulate<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    opts: &SimOptions,
) -> Result<RunRecord> {
    linalg::ensure_len(&opts.x0, sys.n(), "x0")?;
    linalg::ensure_len(&opts.v0, sys.m(), "v0")?;
    let ctrb = sys.build_controllability(DEFAULT_RANK_TOL)?;
    let moduli = seq.moduli();
    let schedule = seq.schedule();
    let assumptions = assumption_report(sys, &ctrb, &moduli, opts.gamma_v, opts.gamma_x, &schedule);
    if !assumptions.passed() {
        if opts.mode == TheoremMode::Strict {
            return Err(Error::AssumptionViolated(assumptions));
        }
        warn!("assumptions fail, the regret certificate is skipped:\n{assumptions}");
    }

    let big_t = seq.horizon();
    let mut ctrl = OgdController::new(sys, &ctrb, opts.gamma_v, opts.gamma_x, opts.v0.clone())?;
    let mut trace = ClosedLoopTrace {
        x0: opts.x0.clone(),
        v0: opts.v0.clone(),
        x: Vec::with_capacity(big_t),
        u: Vec::with_capacity(big_t),
        v: Vec::with_capacity(big_t),
        g: Vec::new(),
        x_hat: Vec::new(),
    };
    let mut cost_x = Vec::with_capacity(big_t);
    let mut cost_u = Vec::with_capacity(big_t);
    let mut theta0 = None;
    let mut x = opts.x0.clone();
    for t in 1..=big_t {
        let revealed = (t > 1).then(|| seq.at(t - 1));
        let out = ctrl.step(&x, revealed)?;
        x = sys.step(&x, &out.u)?;
        linalg::ensure_finite(&x, "state")?;
        let cost = seq.at(t);
        cost_x.push(cost.eval_x(&x));
        cost_u.push(cost.eval_u(&out.u));
        theta0.get_or_insert_with(|| out.x_hat.clone());
        if opts.record_predictions {
            trace.g.push(out.g);
            trace.x_hat.push(out.x_hat);
        }
        trace.x.push(x.clone());
        trace.u.push(out.u);
        trace.v.push(out.v);
    }
    let theta0 = theta0.expect("horizon is at least 1");

    let stage: Vec<f64> = cost_x.iter().zip(&cost_u).map(|(a, b)| a + b).collect();
    let total_cost = stage.iter().sum();
    let benchmark = optimal_trajectory(sys, seq, &opts.x0)?;
    let regret = regret(&stage, &benchmark)?;
    let comparator_regret = comparator_regret(&stage, seq)?;
    let path = seq.path_metrics(&theta0, &opts.v0);

    let (certificate, bound) = if assumptions.passed() {
        let cert = compute_constants(&ctrb, &moduli, opts.gamma_v, opts.gamma_x)?
            .attach(&trace.x, &schedule.theta, path);
        let bound = verify_bound(&cert, regret, comparator_regret)?;
        (Some(cert), Some(bound))
    } else {
        (None, None)
    };

    Ok(RunRecord {
        trace,
        theta: schedule.theta,
        eta: schedule.eta,
        theta0,
        eta0: opts.v0.clone(),
        cost_x,
        cost_u,
        total_cost,
        optimal_cost: benchmark.total_cost,
        regret,
        comparator_regret,
        path,
        mu: ctrb.mu,
        moduli,
        assumptions,
        certificate,
        bound,
    })
}

pub fn run_closed_loop(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let sys = config.linear_system()?;
    let opts = config.options(&sys)?;
    let schedule = config.schedule(&sys)?;
    simulate(&sys, &config.costs(&schedule)?, &opts)
}
