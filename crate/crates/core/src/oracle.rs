//! Hindsight benchmarks: the dynamics-feasible optimal trajectory and the
//! pointwise minimizers, plus the two regret figures measured against them.
//!
//! Quadratic costs are solved exactly by a backward Riccati recursion on
//! the value function, which stays well conditioned for unstable `A`. The
//! batch solve over the stacked input vector is kept as a second, fully
//! independent route for short horizons. General costs are handled by
//! majorize-minimize: each iteration replaces every stage cost with its
//! `l`-smooth quadratic upper model and solves that tracking problem
//! exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{CostSequence, StageCost};
use crate::error::{Error, Result};
use crate::linalg;
use crate::system::LinearSystem;

pub const MAX_ITERATIONS: usize = 1_000_000;
pub const ITERATIVE_TOL: f64 = 1e-9;
/// Largest matrix-power entry the batch solve will accept.
pub const POWER_GROWTH_LIMIT: f64 = 1e150;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTrajectory {
    pub x_star: Vec<DVector<f64>>,
    pub u_star: Vec<DVector<f64>>,
    pub total_cost: f64,
}

impl OptimalTrajectory {
    pub fn horizon(&self) -> usize {
        self.u_star.len()
    }

    fn from_inputs<C: StageCost>(
        sys: &LinearSystem,
        seq: &CostSequence<C>,
        x0: &DVector<f64>,
        u_star: Vec<DVector<f64>>,
    ) -> Self {
        let mut x = x0.clone();
        let x_star: Vec<_> = u_star
            .iter()
            .map(|u| {
                x = sys.a() * &x + sys.b() * u;
                x.clone()
            })
            .collect();
        Self::from_pairs(seq, x_star, u_star)
    }

    fn from_pairs<C: StageCost>(
        seq: &CostSequence<C>,
        x_star: Vec<DVector<f64>>,
        u_star: Vec<DVector<f64>>,
    ) -> Self {
        let total_cost = seq
            .iter()
            .zip(x_star.iter().zip(&u_star))
            .map(|(c, (x, u))| c.eval(x, u))
            .sum();
        OptimalTrajectory {
            x_star,
            u_star,
            total_cost,
        }
    }

    /// Largest `|x*_t - A x*_{t-1} - B u*_t|` with `x*_0 = x0`.
    pub fn feasibility_residual(&self, sys: &LinearSystem, x0: &DVector<f64>) -> f64 {
        let mut prev = x0;
        let mut worst: f64 = 0.0;
        for (x, u) in self.x_star.iter().zip(&self.u_star) {
            worst = worst.max((x - sys.a() * prev - sys.b() * u).amax());
            prev = x;
        }
        worst
    }

    /// Norm of the gradient of the reduced cost (states eliminated) with
    /// respect to the stacked inputs, computed by the adjoint recursion.
    ///
    /// Only informative when `A^T` does not amplify rounding errors over the
    /// horizon, i.e. for short horizons or stable `A`.
    pub fn stationarity_residual<C: StageCost>(&self, sys: &LinearSystem, seq: &CostSequence<C>) -> f64 {
        let mut costate = DVector::zeros(sys.n());
        let mut sq = 0.0;
        for t in (1..=self.horizon()).rev() {
            let c = seq.at(t);
            costate = c.grad_x(&self.x_star[t - 1]) + sys.a().transpose() * costate;
            let g = c.grad_u(&self.u_star[t - 1]) + sys.b().transpose() * &costate;
            sq += g.norm_squared();
        }
        sq.sqrt()
    }

    /// `|U*|`, the norm of the stacked input vector.
    pub fn stacked_input_norm(&self) -> f64 {
        self.u_star.iter().map(|u| u.norm_squared()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Riccati for quadratic costs, majorize-minimize otherwise.
    #[default]
    Auto,
    Riccati,
    ReducedQp,
    Iterative,
}

pub fn optimal_trajectory<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
) -> Result<OptimalTrajectory> {
    optimal_trajectory_with(sys, seq, x0, OracleMethod::Auto)
}

pub fn optimal_trajectory_with<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
    method: OracleMethod,
) -> Result<OptimalTrajectory> {
    linalg::ensure_len(x0, sys.n(), "x0")?;
    linalg::ensure_len(seq.at(1).theta(), sys.n(), "theta")?;
    linalg::ensure_len(seq.at(1).eta(), sys.m(), "eta")?;
    let weights = seq.quadratic_weights();
    match (method, weights) {
        (OracleMethod::Auto | OracleMethod::Riccati, Some(w)) => {
            let schedule = seq.schedule();
            let (wx, wu): (Vec<f64>, Vec<f64>) = w.into_iter().unzip();
            let plan = LqTracking::solve(sys, &schedule.theta, &schedule.eta, &wx, &wu)?;
            let (x, u) = plan.rollout(sys, x0);
            Ok(OptimalTrajectory::from_pairs(seq, x, u))
        }
        (OracleMethod::ReducedQp, Some(w)) => reduced_qp(sys, seq, x0, &w),
        (OracleMethod::Auto | OracleMethod::Iterative, _) => majorize_minimize(sys, seq, x0),
        (OracleMethod::Riccati | OracleMethod::ReducedQp, None) => Err(Error::InvalidArgument(
            "exact oracle methods require quadratic tracking costs".into(),
        )),
    }
}

/// Affine feedback policy `u_t = K_t x_{t-1} + k_t` minimizing
/// `sum_t (q_t/2)|x_t - a_t|^2 + (r_t/2)|u_t - b_t|^2`.
struct LqTracking {
    gains: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl LqTracking {
    fn solve(
        sys: &LinearSystem,
        x_target: &[DVector<f64>],
        u_target: &[DVector<f64>],
        wx: &[f64],
        wu: &[f64],
    ) -> Result<Self> {
        let (a, b) = (sys.a(), sys.b());
        let (n, m) = (sys.n(), sys.m());
        let horizon = x_target.len();
        // Value of reaching state x after step t: (1/2) x^T P x - p^T x + const.
        let mut p_mat = DMatrix::<f64>::zeros(n, n);
        let mut p_vec = DVector::<f64>::zeros(n);
        let mut gains = Vec::with_capacity(horizon);
        for t in (0..horizon).rev() {
            let (q, r) = (wx[t], wu[t]);
            let m_mat = &p_mat + DMatrix::identity(n, n) * q;
            let m_vec = &x_target[t] * q + &p_vec;
            let mb = &m_mat * b;
            let g = b.transpose() * &mb + DMatrix::identity(m, m) * r;
            let chol = g.cholesky().ok_or_else(|| {
                Error::NumericalFailure(format!("Riccati step {} lost positive definiteness", t + 1))
            })?;
            let k_mat = -chol.solve(&(mb.transpose() * a));
            let k_vec = chol.solve(&(b.transpose() * &m_vec + &u_target[t] * r));
            let a_cl = a + b * &k_mat;
            let next_p = a_cl.transpose() * &m_mat * &a_cl + k_mat.transpose() * &k_mat * r;
            p_vec = a_cl.transpose() * (&m_vec - &mb * &k_vec) - k_mat.transpose() * (&k_vec - &u_target[t]) * r;
            p_mat = (&next_p + next_p.transpose()) * 0.5;
            if !linalg::all_finite(p_mat.as_slice()) || !linalg::all_finite(p_vec.as_slice()) {
                return Err(Error::NumericalFailure(format!(
                    "Riccati recursion diverged at step {}",
                    t + 1
                )));
            }
            gains.push((k_mat, k_vec));
        }
        gains.reverse();
        Ok(LqTracking { gains })
    }

    fn rollout(&self, sys: &LinearSystem, x0: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut x = x0.clone();
        let mut xs = Vec::with_capacity(self.gains.len());
        let mut us = Vec::with_capacity(self.gains.len());
        for (k_mat, k_vec) in &self.gains {
            let u = k_mat * &x + k_vec;
            x = sys.a() * &x + sys.b() * &u;
            xs.push(x.clone());
            us.push(u);
        }
        (xs, us)
    }
}

/// Eliminates the states through `x_t = A^t x0 + sum_{j<=t} A^{t-j} B u_j`
/// and solves the resulting `Tm x Tm` positive-definite system.
fn reduced_qp<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
    weights: &[(f64, f64)],
) -> Result<OptimalTrajectory> {
    let (n, m, horizon) = (sys.n(), sys.m(), seq.horizon());
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..=horizon {
        let next = sys.a() * &powers[k - 1];
        let bounded = next.amax() <= POWER_GROWTH_LIMIT;
        if !bounded {
            return Err(Error::NumericalFailure(format!(
                "A^{k} exceeds {POWER_GROWTH_LIMIT:e}; the reduced problem is not representable"
            )));
        }
        powers.push(next);
    }

    let mut gamma = DMatrix::<f64>::zeros(n * horizon, m * horizon);
    for t in 1..=horizon {
        for j in 1..=t {
            let block = &powers[t - j] * sys.b();
            gamma.view_mut(((t - 1) * n, (j - 1) * m), (n, m)).copy_from(&block);
        }
    }
    let mut target = DVector::<f64>::zeros(n * horizon);
    let mut qdiag = DVector::<f64>::zeros(n * horizon);
    let mut rdiag = DVector::<f64>::zeros(m * horizon);
    let mut r_eta = DVector::<f64>::zeros(m * horizon);
    for t in 1..=horizon {
        let c = seq.at(t);
        let (q, r) = weights[t - 1];
        let free = &powers[t] * x0;
        target.rows_mut((t - 1) * n, n).copy_from(&(c.theta() - free));
        qdiag.rows_mut((t - 1) * n, n).fill(q);
        rdiag.rows_mut((t - 1) * m, m).fill(r);
        r_eta.rows_mut((t - 1) * m, m).copy_from(&(c.eta() * r));
    }
    let q_gamma = DMatrix::from_fn(n * horizon, m * horizon, |i, j| qdiag[i] * gamma[(i, j)]);
    let hessian = gamma.transpose() * &q_gamma + DMatrix::from_diagonal(&rdiag);
    let rhs = q_gamma.transpose() * &target + r_eta;
    let stacked = hessian
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("reduced Hessian is not positive definite".into()))?
        .solve(&rhs);
    let u_star = (0..horizon)
        .map(|t| stacked.rows(t * m, m).into_owned())
        .collect();
    Ok(OptimalTrajectory::from_inputs(sys, seq, x0, u_star))
}

fn majorize_minimize<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
) -> Result<OptimalTrajectory> {
    let moduli = seq.moduli();
    let horizon = seq.horizon();
    let wx = vec![moduli.l_x; horizon];
    let wu = vec![moduli.l_u; horizon];
    let schedule = seq.schedule();
    let (mut xs, mut us) = LqTracking::solve(sys, &schedule.theta, &schedule.eta, &wx, &wu)?.rollout(sys, x0);

    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let xt: Vec<_> = seq
            .iter()
            .zip(&xs)
            .map(|(c, x)| x - c.grad_x(x) / moduli.l_x)
            .collect();
        let ut: Vec<_> = seq
            .iter()
            .zip(&us)
            .map(|(c, u)| u - c.grad_u(u) / moduli.l_u)
            .collect();
        let (nx, nu) = LqTracking::solve(sys, &xt, &ut, &wx, &wu)?.rollout(sys, x0);

        let mut step = 0.0;
        let mut scale = 0.0;
        for t in 0..horizon {
            step += moduli.l_x * (&nx[t] - &xs[t]).norm_squared() + moduli.l_u * (&nu[t] - &us[t]).norm_squared();
            scale += moduli.l_x * nx[t].norm_squared() + moduli.l_u * nu[t].norm_squared();
        }
        residual = step.sqrt();
        xs = nx;
        us = nu;
        if !residual.is_finite() {
            break;
        }
        if residual <= ITERATIVE_TOL * (1.0 + scale.sqrt()) {
            return Ok(OptimalTrajectory::from_pairs(seq, xs, us));
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

fn check_horizon(found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::HorizonMismatch { expected, found })
    }
}

/// `sum_t L_t(x_t, u_t) - sum_t L_t(x*_t, u*_t)`.
pub fn regret(run_costs: &[f64], benchmark: &OptimalTrajectory) -> Result<f64> {
    check_horizon(run_costs.len(), benchmark.horizon())?;
    Ok(run_costs.iter().sum::<f64>() - benchmark.total_cost)
}

/// Regret against the pointwise minimizers `(theta_t, eta_t)`.
pub fn comparator_regret<C: StageCost>(run_costs: &[f64], seq: &CostSequence<C>) -> Result<f64> {
    check_horizon(run_costs.len(), seq.horizon())?;
    Ok(run_costs.iter().sum::<f64>() - seq.pointwise_optimum())
}
