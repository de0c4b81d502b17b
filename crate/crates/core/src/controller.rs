//! Online gradient descent for a linear plant.
//!
//! Each step runs two gradient descents on the previously revealed cost:
//! one on the input iterate `v_t`, and one on the state predicted `mu`
//! steps ahead. The state step is realized as the minimum-norm stacked
//! input correction `g_t` with `S_c g_t = -gamma_x grad f^x`, which is then
//! spread over the next `mu` inputs.
//!
//! Buffer bookkeeping: `g_buffer[i]` holds `g_{t-i}`. The prediction at
//! time `t` reads `g_{t-1}, ..., g_{t-mu+1}` before `g_t` is pushed; the
//! output reads `g_t, ..., g_{t-mu+1}` after.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{Moduli, StageCost};
use crate::error::{Error, Result};
use crate::linalg::{self, stack_copies};
use crate::report::{CheckReport, Condition, Relation};
use crate::system::{ControllabilityData, LinearSystem};

/// Whether failed step-size conditions only warn or refuse to certify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TheoremMode {
    #[default]
    Advisory,
    Strict,
}

/// Checks the step-size ranges under which the regret bound holds, and the
/// positivity of the denominators they imply.
pub fn validate_step_sizes(gamma_v: f64, gamma_x: f64, moduli: &Moduli, a_norm: f64) -> CheckReport {
    let Moduli {
        alpha_x,
        l_x,
        alpha_u,
        l_u,
    } = *moduli;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut report = CheckReport::new();

    report.push(Condition::new(
        "alpha_u > (2 - sqrt2)/(2 + sqrt2) l_u",
        alpha_u,
        Relation::Greater,
        (2.0 - sqrt2) / (2.0 + sqrt2) * l_u,
    ));
    report.push(Condition::new(
        "gamma_v > (2 - sqrt2)/(2 alpha_u)",
        gamma_v,
        Relation::Greater,
        (2.0 - sqrt2) / (2.0 * alpha_u),
    ));
    report.push(Condition::new(
        "gamma_v <= 2/(l_u + alpha_u)",
        gamma_v,
        Relation::LessEq,
        2.0 / (l_u + alpha_u),
    ));

    let name = "gamma_x > (2||A|| - 1)/(2||A|| alpha_x)";
    if a_norm > 0.0 {
        report.push(Condition::new(
            name,
            gamma_x,
            Relation::Greater,
            (2.0 * a_norm - 1.0) / (2.0 * a_norm * alpha_x),
        ));
    } else {
        report.push(Condition::vacuous(name, gamma_x, Relation::Greater, f64::NEG_INFINITY));
    }
    report.push(Condition::new(
        "gamma_x <= 2/(l_x + alpha_x)",
        gamma_x,
        Relation::LessEq,
        2.0 / (l_x + alpha_x),
    ));

    let kappa_v = 1.0 - alpha_u * gamma_v;
    let kappa_x = 1.0 - alpha_x * gamma_x;
    report.push(Condition::new(
        "1 - 2 kappa_v^2 > 0",
        1.0 - 2.0 * kappa_v * kappa_v,
        Relation::Greater,
        0.0,
    ));
    report.push(Condition::new(
        "1 - 4 ||A||^2 kappa_x^2 > 0",
        1.0 - 4.0 * a_norm * a_norm * kappa_x * kappa_x,
        Relation::Greater,
        0.0,
    ));
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Input iterate `v_t`.
    pub v: DVector<f64>,
    /// `g_t, g_{t-1}, ..., g_{t-mu+1}`; zero before the first step.
    pub g_buffer: VecDeque<DVector<f64>>,
    pub gamma_v: f64,
    pub gamma_x: f64,
    /// Number of completed steps; the next call computes `u_{t+1}`.
    pub t: usize,
    /// Most recent prediction `x_hat_{t+mu-1}`.
    pub x_hat_last: Option<DVector<f64>>,
}

/// Everything produced at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub g: DVector<f64>,
    pub x_hat: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct OgdController {
    sys: LinearSystem,
    ctrb: ControllabilityData,
    /// `S_c W^i` for `i = 0..mu`.
    sc_w: Vec<DMatrix<f64>>,
    /// `e W^i` for `i = 0..mu`.
    e_w: Vec<DMatrix<f64>>,
    state: ControllerState,
}

impl OgdController {
    pub fn new(
        sys: &LinearSystem,
        ctrb: &ControllabilityData,
        gamma_v: f64,
        gamma_x: f64,
        v0: DVector<f64>,
    ) -> Result<Self> {
        for (name, g) in [("gamma_v", gamma_v), ("gamma_x", gamma_x)] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {g}"
                )));
            }
        }
        linalg::ensure_len(&v0, sys.m(), "v0")?;
        if ctrb.s_c.nrows() != sys.n() || ctrb.m != sys.m() {
            return Err(Error::InvalidArgument(
                "controllability data does not belong to this system".into(),
            ));
        }
        let w_pows = ctrb.w_powers();
        let sc_w = w_pows.iter().map(|w| &ctrb.s_c * w).collect();
        let e_w = w_pows.iter().map(|w| &ctrb.e * w).collect();
        let dim = ctrb.stacked_dim();
        Ok(OgdController {
            sys: sys.clone(),
            ctrb: ctrb.clone(),
            sc_w,
            e_w,
            state: ControllerState {
                v: v0,
                g_buffer: std::iter::repeat_n(DVector::zeros(dim), ctrb.mu).collect(),
                gamma_v,
                gamma_x,
                t: 0,
                x_hat_last: None,
            },
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn controllability(&self) -> &ControllabilityData {
        &self.ctrb
    }

    pub fn mu(&self) -> usize {
        self.ctrb.mu
    }

    /// `v_t = v_{t-1} - gamma_v grad f_{t-1}^u(v_{t-1})`.
    pub fn input_ogd(&self, grad_u_prev: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len(grad_u_prev, self.sys.m(), "input gradient")?;
        linalg::ensure_finite(grad_u_prev, "input gradient")?;
        Ok(&self.state.v - grad_u_prev * self.state.gamma_v)
    }

    /// `x_hat_{t+mu-1} = A^mu x_{t-1} + S_c (v_t; ...; v_t) + S_c sum_{i=1}^{mu-1} W^i g_{t-i}`,
    /// reading the buffer before `g_t` is pushed.
    pub fn predict_state(&self, x_prev: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len(x_prev, self.sys.n(), "state")?;
        linalg::ensure_len(v, self.sys.m(), "input iterate")?;
        let mut x_hat = &self.ctrb.a_pow_mu * x_prev + &self.ctrb.s_c * stack_copies(v, self.ctrb.mu);
        for i in 1..self.ctrb.mu {
            x_hat += &self.sc_w[i] * &self.state.g_buffer[i - 1];
        }
        Ok(x_hat)
    }

    /// `g_t = -gamma_x P grad`, the minimum-norm solution of `S_c g = -gamma_x grad`.
    pub fn state_ogd(&self, grad_x_at_pred: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len(grad_x_at_pred, self.sys.n(), "state gradient")?;
        linalg::ensure_finite(grad_x_at_pred, "state gradient")?;
        Ok(&self.ctrb.p * grad_x_at_pred * (-self.state.gamma_x))
    }

    /// `u_t = v_t + sum_{i=0}^{mu-1} e W^i g_{t-i}`, reading the buffer after
    /// `g_t` is pushed.
    pub fn assemble_input(&self) -> DVector<f64> {
        let mut u = self.state.v.clone();
        for (ew, g) in self.e_w.iter().zip(&self.state.g_buffer) {
            u += ew * g;
        }
        u
    }

    /// Computes `u_t` from `x_{t-1}` and the previous cost `L_{t-1}`.
    ///
    /// At `t = 1` no cost has been revealed: with `theta_0 = x_hat_mu` and
    /// `eta_0 = v_0` both gradients vanish, so `v_1 = v_0`, `g_1 = 0` and
    /// `u_1 = v_0`. `cost_prev` is ignored then and required afterwards.
    pub fn step<C: StageCost>(
        &mut self,
        x_prev: &DVector<f64>,
        cost_prev: Option<&C>,
    ) -> Result<StepOutput> {
        let (v, x_hat, g) = if self.state.t == 0 {
            let v = self.state.v.clone();
            let x_hat = self.predict_state(x_prev, &v)?;
            (v, x_hat, DVector::zeros(self.ctrb.stacked_dim()))
        } else {
            let cost = cost_prev.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "cost L_{} is required at t = {}",
                    self.state.t,
                    self.state.t + 1
                ))
            })?;
            let v = self.input_ogd(&cost.grad_u(&self.state.v))?;
            let x_hat = self.predict_state(x_prev, &v)?;
            let g = self.state_ogd(&cost.grad_x(&x_hat))?;
            (v, x_hat, g)
        };

        self.state.g_buffer.push_front(g.clone());
        self.state.g_buffer.pop_back();
        self.state.v = v.clone();
        self.state.t += 1;
        self.state.x_hat_last = Some(x_hat.clone());

        let u = self.assemble_input();
        linalg::ensure_finite(&u, "control input")?;
        Ok(StepOutput { u, v, g, x_hat })
    }
}

/// Right-hand side of the one-step prediction recursion
///
/// `x_hat_{s+mu-1} = A x_hat_{s+mu-2} + B v_s + A S_c g_{s-1}
///                  + S_c E01 E01^T (V_hat_s - V_hat_{s-1})`,
///
/// where `V_hat` stacks its input iterate `mu` times.
pub fn predict_state_recursive(
    sys: &LinearSystem,
    ctrb: &ControllabilityData,
    prev_prediction: &DVector<f64>,
    v_new: &DVector<f64>,
    v_prev: &DVector<f64>,
    g_old: &DVector<f64>,
) -> DVector<f64> {
    let dv = stack_copies(&(v_new - v_prev), ctrb.mu);
    let e01 = &ctrb.e01;
    sys.a() * prev_prediction
        + sys.b() * v_new
        + sys.a() * (&ctrb.s_c * g_old)
        + &ctrb.s_c * (e01 * (e01.transpose() * dv))
}

/// Per-step record of a closed-loop run, indexed from `t = 1`
/// (`x[0]` is `x_1`). `g` and `x_hat` may be empty when predictions were
/// not recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub x0: DVector<f64>,
    pub v0: DVector<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub g: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
}

impl ClosedLoopTrace {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    pub fn has_predictions(&self) -> bool {
        !self.x_hat.is_empty() && self.g.len() == self.x.len()
    }

    /// `x_{t-1}`, with `t = 1` giving `x_0`.
    pub fn x_before(&self, t: usize) -> &DVector<f64> {
        if t == 1 {
            &self.x0
        } else {
            &self.x[t - 2]
        }
    }

    fn g_at(&self, s: isize, dim: usize) -> DVector<f64> {
        if s < 1 || s as usize > self.g.len() {
            DVector::zeros(dim)
        } else {
            self.g[s as usize - 1].clone()
        }
    }

    /// Largest `|x_t - A x_{t-1} - B u_t|` along the run.
    pub fn dynamics_residual(&self, sys: &LinearSystem) -> f64 {
        (1..=self.horizon())
            .map(|t| (&self.x[t - 1] - sys.a() * self.x_before(t) - sys.b() * &self.u[t - 1]).amax())
            .fold(0.0, f64::max)
    }

    /// Largest deviation between the recorded predictions and the
    /// one-step recursion, over `s = 2..=T`.
    pub fn recursion_residual(&self, sys: &LinearSystem, ctrb: &ControllabilityData) -> Result<f64> {
        if !self.has_predictions() {
            return Err(Error::MissingRecord("predictions"));
        }
        let dim = ctrb.stacked_dim();
        let mut worst: f64 = 0.0;
        for s in 2..=self.horizon() {
            let rec = predict_state_recursive(
                sys,
                ctrb,
                &self.x_hat[s - 2],
                &self.v[s - 1],
                &self.v[s - 2],
                &self.g_at(s as isize - 1, dim),
            );
            worst = worst.max((rec - &self.x_hat[s - 1]).amax());
        }
        Ok(worst)
    }

    /// Largest deviation between simulated states and the stacked
    /// closed-loop expression
    ///
    /// `x_{t+mu-1} = A^mu x_{t-1} + S_c V_t + S_c g_t + S_c sum_{i>=1} (W^T)^i g_{t+i}
    ///              + S_c sum_{i>=1} W^i g_{t-i}`,
    ///
    /// with `V_t = (v_{t+mu-1}; ...; v_t)`, over `t = 1..=T-mu+1`.
    pub fn stacked_identity_residual(
        &self,
        ctrb: &ControllabilityData,
    ) -> Result<f64> {
        if !self.has_predictions() {
            return Err(Error::MissingRecord("correction vectors"));
        }
        let (mu, m) = (ctrb.mu, ctrb.m);
        let dim = ctrb.stacked_dim();
        let w_pows = ctrb.w_powers();
        let mut worst: f64 = 0.0;
        for t in 1..=(self.horizon() + 1).saturating_sub(mu) {
            let mut stacked = DVector::zeros(dim);
            for k in 0..mu {
                let v = &self.v[t + mu - 2 - k];
                stacked.rows_mut(k * m, m).copy_from(v);
            }
            let mut corr = self.g_at(t as isize, dim);
            for (i, w) in w_pows.iter().enumerate().skip(1) {
                corr += w.transpose() * self.g_at((t + i) as isize, dim);
                corr += w * self.g_at(t as isize - i as isize, dim);
            }
            let rhs = &ctrb.a_pow_mu * self.x_before(t) + &ctrb.s_c * (stacked + corr);
            worst = worst.max((rhs - &self.x[t + mu - 2]).amax());
        }
        Ok(worst)
    }

    /// Largest `|S_c g_t + gamma_x grad f_{t-1}^x(x_hat_{t+mu-1})|` for `t >= 2`.
    pub fn feasibility_residual<C: StageCost>(
        &self,
        ctrb: &ControllabilityData,
        costs: &[C],
        gamma_x: f64,
    ) -> Result<f64> {
        if !self.has_predictions() {
            return Err(Error::MissingRecord("predictions"));
        }
        Ok((2..=self.horizon())
            .map(|t| {
                let grad = costs[t - 2].grad_x(&self.x_hat[t - 1]);
                (&ctrb.s_c * &self.g[t - 1] + grad * gamma_x).amax()
            })
            .fold(0.0, f64::max))
    }
}
