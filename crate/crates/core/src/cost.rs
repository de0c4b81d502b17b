//! Separable stage costs `L_t(x, u) = f_t^x(x) + f_t^u(u)`, setpoint
//! schedules, and path-length metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, singular_values};
use crate::system::LinearSystem;

/// Strong-convexity and smoothness moduli of the state and input costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moduli {
    pub alpha_x: f64,
    pub l_x: f64,
    pub alpha_u: f64,
    pub l_u: f64,
}

impl Moduli {
    pub fn new(alpha_x: f64, l_x: f64, alpha_u: f64, l_u: f64) -> Result<Self> {
        let m = Moduli {
            alpha_x,
            l_x,
            alpha_u,
            l_u,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64, l: f64| a.is_finite() && l.is_finite() && 0.0 < a && a <= l;
        if ok(self.alpha_x, self.l_x) && ok(self.alpha_u, self.l_u) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "moduli must satisfy 0 < alpha <= l, got {self:?}"
            )))
        }
    }

    fn approx_eq(&self, other: &Moduli) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        close(self.alpha_x, other.alpha_x)
            && close(self.l_x, other.l_x)
            && close(self.alpha_u, other.alpha_u)
            && close(self.l_u, other.l_u)
    }
}

/// A stage cost with known minimizers and uniform moduli.
///
/// Implementors guarantee `grad_x(theta) = 0`, `grad_u(eta) = 0`, and that
/// `f^x` (resp. `f^u`) is `alpha_x`-strongly convex and `l_x`-smooth
/// (resp. `alpha_u`, `l_u`).
pub trait StageCost {
    fn eval_x(&self, x: &DVector<f64>) -> f64;
    fn eval_u(&self, u: &DVector<f64>) -> f64;
    fn grad_x(&self, x: &DVector<f64>) -> DVector<f64>;
    fn grad_u(&self, u: &DVector<f64>) -> DVector<f64>;
    /// State minimizer.
    fn theta(&self) -> &DVector<f64>;
    /// Input minimizer.
    fn eta(&self) -> &DVector<f64>;
    fn moduli(&self) -> Moduli;

    /// `(q, r)` if the cost is exactly `(q/2)|x - theta|^2 + (r/2)|u - eta|^2`.
    fn quadratic_weights(&self) -> Option<(f64, f64)> {
        None
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.eval_x(x) + self.eval_u(u)
    }
}

/// `(q/2)|x - theta|^2 + (r/2)|u - eta|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTrackingCost {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub q: f64,
    pub r: f64,
}

impl QuadraticTrackingCost {
    pub fn new(theta: DVector<f64>, eta: DVector<f64>, q: f64, r: f64) -> Result<Self> {
        Moduli::new(q, q, r, r)?;
        Ok(QuadraticTrackingCost { theta, eta, q, r })
    }
}

impl StageCost for QuadraticTrackingCost {
    fn eval_x(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.q * (x - &self.theta).norm_squared()
    }

    fn eval_u(&self, u: &DVector<f64>) -> f64 {
        0.5 * self.r * (u - &self.eta).norm_squared()
    }

    fn grad_x(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.theta) * self.q
    }

    fn grad_u(&self, u: &DVector<f64>) -> DVector<f64> {
        (u - &self.eta) * self.r
    }

    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    fn moduli(&self) -> Moduli {
        Moduli {
            alpha_x: self.q,
            l_x: self.q,
            alpha_u: self.r,
            l_u: self.r,
        }
    }

    fn quadratic_weights(&self) -> Option<(f64, f64)> {
        Some((self.q, self.r))
    }
}

/// A non-quadratic tracking cost: `(q/2)|z|^2 + c * sum_i log cosh(z_i)` on
/// `z = x - theta` (and likewise with `r` on the input). Since
/// `0 < log cosh'' <= 1`, the moduli are `alpha = q`, `l = q + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCoshTrackingCost {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub q: f64,
    pub r: f64,
    pub c: f64,
}

impl LogCoshTrackingCost {
    pub fn new(theta: DVector<f64>, eta: DVector<f64>, q: f64, r: f64, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("curvature c must be >= 0, got {c}")));
        }
        Moduli::new(q, q + c, r, r + c)?;
        Ok(LogCoshTrackingCost { theta, eta, q, r, c })
    }

    fn value(z: &DVector<f64>, w: f64, c: f64) -> f64 {
        let lc: f64 = z
            .iter()
            .map(|&zi| {
                let a = zi.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            })
            .sum();
        0.5 * w * z.norm_squared() + c * lc
    }

    fn gradient(z: DVector<f64>, w: f64, c: f64) -> DVector<f64> {
        z.map(|zi| w * zi + c * zi.tanh())
    }
}

impl StageCost for LogCoshTrackingCost {
    fn eval_x(&self, x: &DVector<f64>) -> f64 {
        Self::value(&(x - &self.theta), self.q, self.c)
    }

    fn eval_u(&self, u: &DVector<f64>) -> f64 {
        Self::value(&(u - &self.eta), self.r, self.c)
    }

    fn grad_x(&self, x: &DVector<f64>) -> DVector<f64> {
        Self::gradient(x - &self.theta, self.q, self.c)
    }

    fn grad_u(&self, u: &DVector<f64>) -> DVector<f64> {
        Self::gradient(u - &self.eta, self.r, self.c)
    }

    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    fn moduli(&self) -> Moduli {
        Moduli {
            alpha_x: self.q,
            l_x: self.q + self.c,
            alpha_u: self.r,
            l_u: self.r + self.c,
        }
    }
}

/// Costs `L_1, ..., L_T` sharing one set of moduli.
#[derive(Debug, Clone)]
pub struct CostSequence<C = QuadraticTrackingCost> {
    costs: Vec<C>,
    moduli: Moduli,
}

impl<C: StageCost> CostSequence<C> {
    pub fn new(costs: Vec<C>) -> Result<Self> {
        let first = costs
            .first()
            .ok_or_else(|| Error::InvalidArgument("cost sequence must be nonempty".into()))?;
        let moduli = first.moduli();
        moduli.validate()?;
        let (n, m) = (first.theta().len(), first.eta().len());
        for (t, c) in costs.iter().enumerate() {
            if !c.moduli().approx_eq(&moduli) {
                return Err(Error::InvalidArgument(format!(
                    "cost at t={} has moduli {:?}, expected uniform {:?}",
                    t + 1,
                    c.moduli(),
                    moduli
                )));
            }
            linalg::ensure_len(c.theta(), n, "theta")?;
            linalg::ensure_len(c.eta(), m, "eta")?;
        }
        Ok(CostSequence { costs, moduli })
    }

    pub fn horizon(&self) -> usize {
        self.costs.len()
    }

    pub fn moduli(&self) -> Moduli {
        self.moduli
    }

    /// `L_t` for `t` in `1..=T`.
    pub fn at(&self, t: usize) -> &C {
        &self.costs[t - 1]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C> {
        self.costs.iter()
    }

    pub fn as_slice(&self) -> &[C] {
        &self.costs
    }

    /// Minimizers as a schedule.
    pub fn schedule(&self) -> SetpointSchedule {
        SetpointSchedule {
            theta: self.costs.iter().map(|c| c.theta().clone()).collect(),
            eta: self.costs.iter().map(|c| c.eta().clone()).collect(),
        }
    }

    /// `sum_t L_t(theta_t, eta_t)`.
    pub fn pointwise_optimum(&self) -> f64 {
        self.costs.iter().map(|c| c.eval(c.theta(), c.eta())).sum()
    }

    /// Per-step `(q, r)` when every cost is a quadratic tracking cost.
    pub fn quadratic_weights(&self) -> Option<Vec<(f64, f64)>> {
        self.costs.iter().map(|c| c.quadratic_weights()).collect()
    }

    pub fn path_metrics(&self, theta0: &DVector<f64>, eta0: &DVector<f64>) -> PathMetrics {
        path_metrics(
            self.costs.iter().map(|c| c.theta()),
            self.costs.iter().map(|c| c.eta()),
            theta0,
            eta0,
        )
    }
}

impl CostSequence<QuadraticTrackingCost> {
    /// Quadratic tracking costs with weights `q`, `r` around a schedule.
    pub fn quadratic(schedule: &SetpointSchedule, q: f64, r: f64) -> Result<Self> {
        let costs = schedule
            .theta
            .iter()
            .zip(&schedule.eta)
            .map(|(th, et)| QuadraticTrackingCost::new(th.clone(), et.clone(), q, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(costs)
    }
}

impl<'a, C> IntoIterator for &'a CostSequence<C> {
    type Item = &'a C;
    type IntoIter = std::slice::Iter<'a, C>;

    fn into_iter(self) -> Self::IntoIter {
        self.costs.iter()
    }
}

/// Setpoints `(theta_t, eta_t)` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointSchedule {
    pub theta: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
}

impl SetpointSchedule {
    pub fn new(theta: Vec<DVector<f64>>, eta: Vec<DVector<f64>>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidArgument("setpoint schedule must be nonempty".into()));
        }
        if theta.len() != eta.len() {
            return Err(Error::HorizonMismatch {
                expected: theta.len(),
                found: eta.len(),
            });
        }
        let (n, m) = (theta[0].len(), eta[0].len());
        for (th, et) in theta.iter().zip(&eta) {
            linalg::ensure_len(th, n, "theta")?;
            linalg::ensure_len(et, m, "eta")?;
        }
        Ok(SetpointSchedule { theta, eta })
    }

    pub fn horizon(&self) -> usize {
        self.theta.len()
    }

    pub fn n(&self) -> usize {
        self.theta[0].len()
    }

    pub fn m(&self) -> usize {
        self.eta[0].len()
    }

    /// Largest steady-state residual `|(I - A) theta_t - B eta_t|` over the schedule.
    pub fn max_steady_state_residual(&self, sys: &LinearSystem) -> f64 {
        self.theta
            .iter()
            .zip(&self.eta)
            .map(|(th, et)| steady_state_residual(sys, th, et))
            .fold(0.0, f64::max)
    }

    /// Keeps the first `t_freeze` setpoints and holds the last of them for
    /// the rest of the horizon.
    pub fn frozen_after(&self, t_freeze: usize) -> SetpointSchedule {
        let k = t_freeze.clamp(1, self.horizon()) - 1;
        let theta = (0..self.horizon()).map(|i| self.theta[i.min(k)].clone()).collect();
        let eta = (0..self.horizon()).map(|i| self.eta[i.min(k)].clone()).collect();
        SetpointSchedule { theta, eta }
    }
}

/// Path length and squared variations of the minimizer sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub path_length: f64,
    #[serde(rename = "Theta_T")]
    pub theta_sq: f64,
    #[serde(rename = "H_T")]
    pub eta_sq: f64,
}

/// `|s_t - s_{t-1}|^2` for `t = 1..T`, with `s_0 = start`.
pub fn squared_steps<'a>(
    seq: impl IntoIterator<Item = &'a DVector<f64>>,
    start: &DVector<f64>,
) -> Vec<f64> {
    let mut prev = start;
    seq.into_iter()
        .map(|cur| {
            let d = (cur - prev).norm_squared();
            prev = cur;
            d
        })
        .collect()
}

/// Sums start at `t = 1` against the supplied `(theta_0, eta_0)`.
pub fn path_metrics<'a>(
    theta: impl IntoIterator<Item = &'a DVector<f64>>,
    eta: impl IntoIterator<Item = &'a DVector<f64>>,
    theta0: &DVector<f64>,
    eta0: &DVector<f64>,
) -> PathMetrics {
    let th = squared_steps(theta, theta0);
    let et = squared_steps(eta, eta0);
    PathMetrics {
        path_length: th.iter().chain(&et).map(|d| d.sqrt()).sum(),
        theta_sq: th.iter().sum(),
        eta_sq: et.iter().sum(),
    }
}

pub fn steady_state_residual(sys: &LinearSystem, theta: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    (theta - sys.a() * theta - sys.b() * eta).norm()
}

/// `|(I - A) theta - B eta| <= tol`.
pub fn check_steady_state(
    sys: &LinearSystem,
    theta: &DVector<f64>,
    eta: &DVector<f64>,
    tol: f64,
) -> bool {
    theta.len() == sys.n() && eta.len() == sys.m() && steady_state_residual(sys, theta, eta) <= tol
}

/// Solves `(I - A) theta = B eta` for the state setpoint matching `eta`.
pub fn setpoint_from_input(sys: &LinearSystem, eta: &DVector<f64>) -> Result<DVector<f64>> {
    SteadyStateMap::new(sys)?.theta_for(eta)
}

/// Factorization of `I - A` reused across many setpoints.
#[derive(Debug, Clone)]
pub struct SteadyStateMap {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    b: DMatrix<f64>,
}

impl SteadyStateMap {
    pub fn new(sys: &LinearSystem) -> Result<Self> {
        let i_minus_a = DMatrix::identity(sys.n(), sys.n()) - sys.a();
        let s = singular_values(&i_minus_a);
        let (smax, smin) = (s[0], *s.last().unwrap());
        let well_posed = smin > 1e-12 * smax;
        if !well_posed {
            return Err(Error::SteadyStateUnderdetermined { sigma_min: smin });
        }
        Ok(SteadyStateMap {
            lu: i_minus_a.lu(),
            b: sys.b().clone(),
        })
    }

    pub fn theta_for(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len(eta, self.b.ncols(), "eta")?;
        self.lu
            .solve(&(&self.b * eta))
            .ok_or_else(|| Error::NumericalFailure("I - A factorization is singular".into()))
    }
}

/// Random setpoint process: `eta_1` uniform on `eta_range`, and at each
/// `t >= 2` an independent Bernoulli(`change_prob`) trial decides whether
/// a fresh `eta_t` is drawn. `theta_t` is the matching steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSetpoints {
    pub change_prob: f64,
    /// Half-open `[lo, hi)`; `lo == hi` gives a constant.
    pub eta_range: [f64; 2],
}

impl RandomSetpoints {
    /// The tracking experiment's process: 10% change probability, `[-5, 5)`.
    pub const REFERENCE: RandomSetpoints = RandomSetpoints {
        change_prob: 0.1,
        eta_range: [-5.0, 5.0],
    };

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.eta_range;
        if !(0.0..=1.0).contains(&self.change_prob) {
            return Err(Error::InvalidArgument(format!(
                "change probability must lie in [0, 1], got {}",
                self.change_prob
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "eta range must be a finite interval, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    fn draw_eta<R: Rng>(&self, m: usize, rng: &mut R) -> DVector<f64> {
        let [lo, hi] = self.eta_range;
        DVector::from_fn(m, |_, _| {
            let u: f64 = rng.random();
            lo + (hi - lo) * u
        })
    }

    pub fn generate<R: Rng>(
        &self,
        sys: &LinearSystem,
        horizon: usize,
        rng: &mut R,
    ) -> Result<SetpointSchedule> {
        self.validate()?;
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let map = SteadyStateMap::new(sys)?;
        let mut eta = Vec::with_capacity(horizon);
        let mut theta = Vec::with_capacity(horizon);
        let first = self.draw_eta(sys.m(), rng);
        theta.push(map.theta_for(&first)?);
        eta.push(first);
        for _ in 1..horizon {
            let change: f64 = rng.random();
            if change < self.change_prob {
                let e = self.draw_eta(sys.m(), rng);
                theta.push(map.theta_for(&e)?);
                eta.push(e);
            } else {
                theta.push(theta.last().unwrap().clone());
                eta.push(eta.last().unwrap().clone());
            }
        }
        Ok(SetpointSchedule { theta, eta })
    }
}

/// ChaCha8 generator for stream `stream` of `seed`. Distinct streams are
/// independent, so per-run streams make sweeps order-independent.
pub fn setpoint_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_random_setpoints(
    sys: &LinearSystem,
    horizon: usize,
    change_prob: f64,
    eta_range: [f64; 2],
    seed: u64,
) -> Result<SetpointSchedule> {
    RandomSetpoints {
        change_prob,
        eta_range,
    }
    .generate(sys, horizon, &mut setpoint_rng(seed, 0))
}
