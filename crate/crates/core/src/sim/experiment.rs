use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::TheoremMode;
use crate::cost::{setpoint_rng, CostSequence, RandomSetpoints};
use crate::error::{Error, Result};
use crate::system::reference_system;

use super::{simulate, RunRecord, SimOptions};

pub const TRACKING_HORIZON: usize = 30;
pub const REFERENCE_GAMMA_V: f64 = 0.98;
pub const REFERENCE_GAMMA_X: f64 = 0.995;

fn reference_run(process: RandomSetpoints, horizon: usize, seed: u64, stream: u64) -> Result<RunRecord> {
    let sys = reference_system();
    let schedule = process.generate(&sys, horizon, &mut setpoint_rng(seed, stream))?;
    let seq = CostSequence::quadratic(&schedule, 1.0, 1.0)?;
    let opts = SimOptions {
        gamma_v: REFERENCE_GAMMA_V,
        gamma_x: REFERENCE_GAMMA_X,
        x0: DVector::zeros(sys.n()),
        v0: DVector::zeros(sys.m()),
        mode: TheoremMode::Advisory,
        record_predictions: true,
    };
    simulate(&sys, &seq, &opts)
}

/// Setpoint tracking on the reference system: `T = 30`, `q = r = 1`,
/// start at rest, setpoints redrawn from `[-5, 5)` with probability 0.1.
pub fn experiment_tracking(seed: u64) -> Result<RunRecord> {
    reference_run(RandomSetpoints::REFERENCE, TRACKING_HORIZON, seed, 0)
}

/// Change probability of sweep run `j` (1-based): `0.25 j / num_runs`.
pub fn sweep_change_prob(j: usize, num_runs: usize) -> f64 {
    0.25 * j as f64 / num_runs as f64
}

/// Run `j` of the path-length sweep, drawing setpoints from stream `j` of `seed`.
pub fn sweep_run(j: usize, num_runs: usize, horizon: usize, seed: u64) -> Result<RunRecord> {
    let process = RandomSetpoints {
        change_prob: sweep_change_prob(j, num_runs),
        ..RandomSetpoints::REFERENCE
    };
    reference_run(process, horizon, seed, j as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: usize,
    pub change_prob: f64,
    pub path_length: f64,
    #[serde(rename = "Theta_T")]
    pub theta_sq: f64,
    #[serde(rename = "H_T")]
    pub eta_sq: f64,
    pub total_cost: f64,
    pub regret: f64,
    pub comparator_regret: f64,
    /// NaN when no certificate could be issued.
    pub bound: f64,
    pub bound_ok: bool,
}

impl SweepRow {
    pub fn from_run(run: usize, change_prob: f64, rec: &RunRecord) -> Self {
        SweepRow {
            run,
            change_prob,
            path_length: rec.path.path_length,
            theta_sq: rec.path.theta_sq,
            eta_sq: rec.path.eta_sq,
            total_cost: rec.total_cost,
            regret: rec.regret,
            comparator_regret: rec.comparator_regret,
            bound: rec.bound.as_ref().map_or(f64::NAN, |b| b.bound),
            bound_ok: rec.bound_ok(),
        }
    }

    /// Bitwise equality, so NaN bounds compare equal.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let bits = |r: &Self| {
            [
                r.change_prob,
                r.path_length,
                r.theta_sq,
                r.eta_sq,
                r.total_cost,
                r.regret,
                r.comparator_regret,
                r.bound,
            ]
            .map(f64::to_bits)
        };
        self.run == other.run && self.bound_ok == other.bound_ok && bits(self) == bits(other)
    }
}

/// Least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` when fewer than two points or all `x` are equal.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub num_runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Total cost against path length.
    pub fit: Option<LinearFit>,
}

impl SweepRecord {
    pub fn all_bounds_ok(&self) -> bool {
        self.rows.iter().all(|r| r.bound_ok)
    }
}

/// Runs `1..=num_runs` in parallel; rows come back ordered by run index.
pub fn experiment_pathlength(num_runs: usize, horizon: usize, seed: u64) -> Result<SweepRecord> {
    if num_runs < 2 {
        return Err(Error::InvalidArgument(format!(
            "a sweep needs at least 2 runs, got {num_runs}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let rows = (1..=num_runs)
        .into_par_iter()
        .map(|j| {
            let rec = sweep_run(j, num_runs, horizon, seed)?;
            Ok(SweepRow::from_run(j, sweep_change_prob(j, num_runs), &rec))
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.path_length).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.total_cost).collect();
    Ok(SweepRecord {
        num_runs,
        horizon,
        seed,
        fit: linear_fit(&xs, &ys),
        rows,
    })
}
