//! Explicit constants of the regret bound `C_mu + Lambda_theta Theta_T + Lambda_eta H_T`,
//! its evaluation on recorded runs, and numerical checks of the
//! intermediate inequalities the bound is assembled from.
//!
//! All operator norms are spectral norms.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::validate_step_sizes;
use crate::cost::{squared_steps, Moduli, PathMetrics};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::sim::RunRecord;
use crate::system::ControllabilityData;

/// Relative slack allowed when comparing a measured quantity to a bound.
pub const BOUND_REL_TOL: f64 = 1e-9;
/// Absolute slack for the same comparison.
pub const BOUND_ABS_TOL: f64 = 1e-9;
/// Left-hand sides whose right-hand side is exactly zero must not exceed this.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCertificate {
    pub mu: usize,
    pub gamma_v: f64,
    pub gamma_x: f64,
    pub moduli: Moduli,
    #[serde(rename = "A_norm")]
    pub a_norm: f64,
    #[serde(rename = "B_norm")]
    pub b_norm: f64,
    pub kappa_v: f64,
    pub kappa_x: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "C_theta")]
    pub c_theta: f64,
    #[serde(rename = "C_eta")]
    pub c_eta: f64,
    #[serde(rename = "Lambda_theta")]
    pub lambda_theta: f64,
    #[serde(rename = "Lambda_eta")]
    pub lambda_eta: f64,
    /// `(l_x/2) sum_{t=1}^{mu-1} |x_t - theta_t|^2`, set once a run is attached.
    #[serde(rename = "C_mu")]
    pub c_mu: Option<f64>,
    /// Path metrics of the attached run, with `theta_0 = x_hat_mu`, `eta_0 = v_0`.
    pub path: Option<PathMetrics>,
    pub bound: Option<f64>,
}

impl RegretCertificate {
    /// `1 - 2 kappa_v^2`.
    pub fn input_margin(&self) -> f64 {
        1.0 - 2.0 * self.kappa_v * self.kappa_v
    }

    /// `1 - 4 ||A||^2 kappa_x^2`.
    pub fn state_margin(&self) -> f64 {
        1.0 - 4.0 * self.a_norm * self.a_norm * self.kappa_x * self.kappa_x
    }

    /// Bound for given squared path variations; requires `C_mu`.
    pub fn bound_for(&self, theta_sq: f64, eta_sq: f64) -> Option<f64> {
        self.c_mu
            .map(|c_mu| c_mu + self.lambda_theta * theta_sq + self.lambda_eta * eta_sq)
    }

    /// Fills in `C_mu` and the bound from the first states of a run.
    pub fn attach(
        &self,
        x: &[DVector<f64>],
        theta: &[DVector<f64>],
        path: PathMetrics,
    ) -> RegretCertificate {
        let early = self.mu.saturating_sub(1).min(x.len());
        let c_mu = 0.5
            * self.moduli.l_x
            * x[..early]
                .iter()
                .zip(theta)
                .map(|(x, th)| (x - th).norm_squared())
                .sum::<f64>();
        let mut out = self.clone();
        out.c_mu = Some(c_mu);
        out.path = Some(path);
        out.bound = out.bound_for(path.theta_sq, path.eta_sq);
        out
    }

    pub fn attach_run(&self, run: &RunRecord) -> RegretCertificate {
        self.attach(&run.trace.x, &run.theta, run.path)
    }
}

/// Evaluates every constant of the bound. Fails when the step sizes lie
/// outside the certified ranges.
pub fn compute_constants(
    ctrb: &ControllabilityData,
    moduli: &Moduli,
    gamma_v: f64,
    gamma_x: f64,
) -> Result<RegretCertificate> {
    moduli.validate()?;
    let report = validate_step_sizes(gamma_v, gamma_x, moduli, ctrb.a_norm);
    if !report.passed() {
        return Err(Error::CertificateUnavailable(report));
    }
    let Moduli { alpha_x, l_x, alpha_u, l_u } = *moduli;
    let mu = ctrb.mu as f64;
    let kappa_v = 1.0 - alpha_u * gamma_v;
    let kappa_x = 1.0 - alpha_x * gamma_x;
    let input_margin = 1.0 - 2.0 * kappa_v * kappa_v;
    let state_margin = 1.0 - 4.0 * ctrb.a_norm.powi(2) * kappa_x * kappa_x;

    let mut c1 = 0.0;
    let mut c3 = 0.0;
    for w in ctrb.w_powers() {
        c1 += spectral_norm(&(&ctrb.e * &w * &ctrb.p)).powi(2);
        c3 += spectral_norm(&(&ctrb.s_c * w.transpose() * &ctrb.p)).powi(2);
    }
    let sc_e10 = spectral_norm(&(&ctrb.s_c * &ctrb.e10));
    let sc_e01 = spectral_norm(&(&ctrb.s_c * &ctrb.e01));

    let c2 = 2.0 * sc_e10.powi(2) * gamma_v.powi(2) * l_u.powi(2) * (mu - 1.0).powi(3) / input_margin;
    let c4 = mu * gamma_x.powi(2) * l_x * (2.0 * l_x * c3 + l_u * c1);
    let c_theta = 4.0 * ctrb.a_norm.powi(2) * l_x / state_margin;
    let c_eta = 8.0
        * l_x
        * (ctrb.b_norm.powi(2) * kappa_v.powi(2) + sc_e01.powi(2) * gamma_v.powi(2) * l_u.powi(2) * (mu - 1.0))
        / (input_margin * state_margin);
    let lambda_theta = 2.0 * c_theta + c4 * c_theta + 2.0 * l_x * mu * mu;
    let lambda_eta = 2.0 * c_eta + 2.0 * l_x * c2 + c4 * c_eta + 2.0 * l_u / input_margin;

    Ok(RegretCertificate {
        mu: ctrb.mu,
        gamma_v,
        gamma_x,
        moduli: *moduli,
        a_norm: ctrb.a_norm,
        b_norm: ctrb.b_norm,
        kappa_v,
        kappa_x,
        c1,
        c2,
        c3,
        c4,
        c_theta,
        c_eta,
        lambda_theta,
        lambda_eta,
        c_mu: None,
        path: None,
        bound: None,
    })
}

pub fn attach_run(cert: &RegretCertificate, run: &RunRecord) -> RegretCertificate {
    cert.attach_run(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: f64,
    pub regret: f64,
    pub comparator_regret: f64,
    /// `bound - comparator_regret`.
    pub slack: f64,
    pub passed: bool,
}

/// The bound is checked against comparator regret, which dominates regret.
pub fn verify_bound(cert: &RegretCertificate, regret: f64, comparator: f64) -> Result<BoundReport> {
    let bound = cert
        .bound
        .ok_or_else(|| Error::InvalidArgument("certificate has no run attached".into()))?;
    Ok(BoundReport {
        bound,
        regret,
        comparator_regret: comparator,
        slack: bound - comparator,
        passed: comparator <= bound * (1.0 + BOUND_REL_TOL) + BOUND_ABS_TOL,
    })
}

/// Outcome of checking `lhs_k <= rhs_k` for every prefix `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    /// Largest `lhs/rhs` over prefixes with `rhs > 0`.
    pub max_ratio: f64,
    /// Largest `lhs` over prefixes with `rhs == 0`.
    pub max_lhs_at_zero: f64,
    /// Prefix length attaining `max_ratio`.
    pub worst_index: usize,
    pub evaluated: usize,
    pub passed: bool,
}

impl InequalityCheck {
    /// `pairs[k]` holds `(lhs, rhs)` for prefix index `first + k`.
    fn evaluate(name: &str, first: usize, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut check = InequalityCheck {
            name: name.to_string(),
            max_ratio: 0.0,
            max_lhs_at_zero: 0.0,
            worst_index: first,
            evaluated: 0,
            passed: true,
        };
        for (k, (lhs, rhs)) in pairs.into_iter().enumerate() {
            check.evaluated += 1;
            if rhs > 0.0 {
                let ratio = lhs / rhs;
                if ratio > check.max_ratio {
                    check.max_ratio = ratio;
                    check.worst_index = first + k;
                }
                check.passed &= ratio <= 1.0 + BOUND_REL_TOL;
            } else {
                check.max_lhs_at_zero = check.max_lhs_at_zero.max(lhs);
                check.passed &= lhs <= ZERO_TOL;
            }
        }
        check
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub checks: Vec<InequalityCheck>,
}

impl DiagnosticReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for DiagnosticReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "  [{}] {}: max ratio {:.6} at k={} ({} prefixes, max lhs at zero rhs {:.3e})",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.max_ratio,
                c.worst_index,
                c.evaluated,
                c.max_lhs_at_zero
            )?;
        }
        Ok(())
    }
}

/// Prefix sums `s[k] = sum_{t=1}^k d_t`, with `s[0] = 0`.
fn prefix(d: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    for x in d {
        out.push(out.last().unwrap() + x);
    }
    out
}

struct Variations {
    theta: Vec<f64>,
    eta: Vec<f64>,
}

impl Variations {
    fn of(run: &RunRecord) -> Self {
        Variations {
            theta: prefix(squared_steps(&run.theta, &run.theta0)),
            eta: prefix(squared_steps(&run.eta, &run.eta0)),
        }
    }
}

pub const LEMMA_CHECK: &str = "prediction error vs path variation";

/// `sum_{t<=tau} |x_hat_{t+mu-1} - theta_{t-1}|^2 <= (C_theta Theta_{tau-1} + C_eta H_{tau-1}) / l_x`
/// for every `tau = 1..=T`.
pub fn lemma_bound_check(run: &RunRecord, cert: &RegretCertificate) -> Result<DiagnosticReport> {
    if !run.trace.has_predictions() {
        return Err(Error::MissingRecord("predictions"));
    }
    let var = Variations::of(run);
    let l_x = cert.moduli.l_x;
    let lhs = prefix((1..=run.horizon()).map(|t| {
        let prev = if t == 1 { &run.theta0 } else { &run.theta[t - 2] };
        (&run.trace.x_hat[t - 1] - prev).norm_squared()
    }));
    let pairs = (1..=run.horizon()).map(|tau| {
        let rhs = (cert.c_theta * var.theta[tau - 1] + cert.c_eta * var.eta[tau - 1]) / l_x;
        (lhs[tau], rhs)
    });
    Ok(DiagnosticReport {
        checks: vec![InequalityCheck::evaluate(LEMMA_CHECK, 1, pairs)],
    })
}

/// Checks each intermediate inequality of the bound's derivation for all
/// prefixes of the run. A failure points at an implementation bug.
pub fn proof_inequality_diagnostics(run: &RunRecord, cert: &RegretCertificate) -> Result<DiagnosticReport> {
    if !run.trace.has_predictions() {
        return Err(Error::MissingRecord("predictions"));
    }
    let big_t = run.horizon();
    let mu = cert.mu;
    let var = Variations::of(run);
    let tr = &run.trace;
    let Moduli { l_x, l_u, .. } = cert.moduli;
    let margin = cert.input_margin();
    let (gv, gx) = (cert.gamma_v, cert.gamma_x);
    let muf = mu as f64;
    let mut checks = Vec::new();

    // |v_{t+1} - eta_t|^2, t = 1..T-1
    let lead = prefix((1..big_t).map(|t| (&tr.v[t] - &run.eta[t - 1]).norm_squared()));
    checks.push(InequalityCheck::evaluate(
        "input lead error",
        1,
        (1..=big_t).map(|tau| {
            (lead[tau - 1], 2.0 * cert.kappa_v.powi(2) / margin * var.eta[tau - 1])
        }),
    ));

    let track = prefix((1..=big_t).map(|t| (&tr.v[t - 1] - &run.eta[t - 1]).norm_squared()));
    checks.push(InequalityCheck::evaluate(
        "input tracking error",
        1,
        (1..=big_t).map(|tau| (track[tau], 2.0 / margin * var.eta[tau])),
    ));

    let moves = prefix((1..big_t).map(|t| (&tr.v[t] - &tr.v[t - 1]).norm_squared()));
    checks.push(InequalityCheck::evaluate(
        "input iterate movement",
        1,
        (1..=big_t).map(|k| (moves[k - 1], 2.0 * gv * gv * l_u * l_u / margin * var.eta[k - 1])),
    ));

    // u_t - v_t = sum_i e W^i g_{t-i}
    let corr = prefix((1..=big_t).map(|t| (&tr.u[t - 1] - &tr.v[t - 1]).norm_squared()));
    let corr_rhs = |k: usize| {
        muf * gx * gx * l_x * cert.c1 * (cert.c_theta * var.theta[k - 1] + cert.c_eta * var.eta[k - 1])
    };
    checks.push(InequalityCheck::evaluate(
        "input correction energy",
        1,
        (1..=big_t).map(|k| (corr[k], corr_rhs(k))),
    ));

    let input_err = prefix((1..=big_t).map(|t| (&tr.u[t - 1] - &run.eta[t - 1]).norm_squared()));
    checks.push(InequalityCheck::evaluate(
        "applied input error",
        1,
        (1..=big_t).map(|k| (input_err[k], 4.0 / margin * var.eta[k] + 2.0 * corr_rhs(k))),
    ));

    // |x_hat_{t+mu-1} - x_{t+mu-1}|^2, t = 1..T-mu+1
    let last = (big_t + 1).saturating_sub(mu);
    let pred = prefix((1..=last).map(|t| (&tr.x_hat[t - 1] - &tr.x[t + mu - 2]).norm_squared()));
    checks.push(InequalityCheck::evaluate(
        "prediction vs realized state",
        1,
        (1..=last).map(|k| {
            let j = k + mu - 2;
            let rhs = 2.0 * muf * gx * gx * l_x * cert.c3 * cert.c_theta * var.theta[j]
                + 2.0 * (cert.c2 + muf * gx * gx * l_x * cert.c3 * cert.c_eta) * var.eta[j];
            (pred[k], rhs)
        }),
    ));

    Ok(DiagnosticReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{reference_system, LinearSystem, DEFAULT_RANK_TOL};
    use nalgebra::DMatrix;

    fn unit() -> Moduli {
        Moduli::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn reference_constants_are_finite_and_positive() {
        let ctrb = reference_system().build_controllability(DEFAULT_RANK_TOL).unwrap();
        let c = compute_constants(&ctrb, &unit(), 0.98, 0.995).unwrap();
        assert!((c.kappa_v - 0.02).abs() < 1e-15);
        assert!((c.kappa_x - 0.005).abs() < 1e-15);
        assert!((c.state_margin() - (1.0 - 1e-4 * c.a_norm.powi(2))).abs() < 1e-15);
        assert!(c.input_margin() > 0.0 && c.state_margin() > 0.0);
        for x in [c.c1, c.c2, c.c3, c.c4, c.c_theta, c.c_eta, c.lambda_theta, c.lambda_eta] {
            assert!(x.is_finite() && x > 0.0);
        }
        assert!(c.c_mu.is_none() && c.bound.is_none());
    }

    #[test]
    fn identity_controllability_constants() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let ctrb = sys.build_controllability(DEFAULT_RANK_TOL).unwrap();
        let c = compute_constants(&ctrb, &unit(), 1.0, 1.0).unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-14);
        assert!((c.c3 - 1.0).abs() < 1e-14);
        assert_eq!(c.c2, 0.0);
        assert_eq!(c.c_theta, 0.0);
    }

    #[test]
    fn bad_step_sizes_block_certificate() {
        let ctrb = reference_system().build_controllability(DEFAULT_RANK_TOL).unwrap();
        let err = compute_constants(&ctrb, &unit(), 0.98, 0.4);
        assert!(matches!(err, Err(Error::CertificateUnavailable(_))));
    }

    #[test]
    fn larger_state_step_shrinks_c_theta() {
        let ctrb = reference_system().build_controllability(DEFAULT_RANK_TOL).unwrap();
        let mut prev = f64::INFINITY;
        let mut prev_kappa = f64::INFINITY;
        for gx in [0.9, 0.93, 0.96, 0.99, 1.0] {
            let c = compute_constants(&ctrb, &unit(), 0.98, gx).unwrap();
            assert!(c.kappa_x < prev_kappa);
            assert!(c.c_theta <= prev);
            prev = c.c_theta;
            prev_kappa = c.kappa_x;
        }
    }

    #[test]
    fn attach_with_index_one_has_no_startup_constant() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::identity(1, 1)).unwrap();
        let ctrb = sys.build_controllability(DEFAULT_RANK_TOL).unwrap();
        let c = compute_constants(&ctrb, &unit(), 1.0, 1.0).unwrap();
        let x = vec![DVector::from_element(1, 3.0)];
        let th = vec![DVector::from_element(1, 0.0)];
        let path = PathMetrics { path_length: 1.0, theta_sq: 2.0, eta_sq: 0.5 };
        let a = c.attach(&x, &th, path);
        assert_eq!(a.c_mu, Some(0.0));
        assert_eq!(a.bound, Some(2.0 * c.lambda_theta + 0.5 * c.lambda_eta));
    }

    #[test]
    fn startup_constant_vanishes_on_setpoint() {
        let ctrb = reference_system().build_controllability(DEFAULT_RANK_TOL).unwrap();
        let c = compute_constants(&ctrb, &unit(), 0.98, 0.995).unwrap();
        let th = vec![DVector::from_element(3, 1.0); 4];
        let path = PathMetrics { path_length: 0.0, theta_sq: 0.0, eta_sq: 0.0 };
        assert_eq!(c.attach(&th, &th, path).c_mu, Some(0.0));
        let mut x = th.clone();
        x[1][0] = 3.0;
        // l_x/2 * |(2,0,0)|^2
        assert_eq!(c.attach(&x, &th, path).c_mu, Some(2.0));
    }

    #[test]
    fn verify_bound_tolerances() {
        let ctrb = reference_system().build_controllability(DEFAULT_RANK_TOL).unwrap();
        let c = compute_constants(&ctrb, &unit(), 0.98, 0.995).unwrap();
        assert!(verify_bound(&c, 0.0, 0.0).is_err());
        let zero = c.attach(&[], &[], PathMetrics { path_length: 0.0, theta_sq: 0.0, eta_sq: 0.0 });
        assert!(verify_bound(&zero, 0.0, 0.0).unwrap().passed);
        assert!(!verify_bound(&zero, 0.0, 1e-6).unwrap().passed);
    }

    #[test]
    fn inequality_check_zero_rhs_handling() {
        let ok = InequalityCheck::evaluate("z", 1, [(0.0, 0.0), (1.0, 2.0)]);
        assert!(ok.passed);
        assert_eq!(ok.max_ratio, 0.5);
        assert_eq!(ok.worst_index, 2);
        let bad = InequalityCheck::evaluate("z", 1, [(1e-6, 0.0)]);
        assert!(!bad.passed);
        let over = InequalityCheck::evaluate("z", 1, [(2.0, 1.0)]);
        assert!(!over.passed);
    }
}
