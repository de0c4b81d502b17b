//! The plant `x_t = A x_{t-1} + B u_t` and its controllability structure.
//!
//! Note the input index convention: `u_t` drives the transition from
//! `x_{t-1}` to `x_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matrix_power, numerical_rank, spectral_norm};
use crate::report::{CheckReport, Condition, Relation};

/// Default relative rank tolerance against the largest singular value.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// JSON form of a system: `{"A": [[...]], "B": [[...]]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "state and input dimensions must be at least 1".into(),
            ));
        }
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "columns of A",
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "rows of B",
                expected: a.nrows(),
                found: b.nrows(),
            });
        }
        if !linalg::all_finite(a.as_slice()) || !linalg::all_finite(b.as_slice()) {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(LinearSystem { a, b })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        let a = linalg::matrix_from_rows(&spec.a, "A")?;
        let b = linalg::matrix_from_rows(&spec.b, "B")?;
        Self::new(a, b)
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            a: linalg::matrix_to_rows(&self.a),
            b: linalg::matrix_to_rows(&self.b),
        }
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `A x_prev + B u`.
    pub fn step(&self, x_prev: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len(x_prev, self.n(), "state")?;
        linalg::ensure_len(u, self.m(), "input")?;
        Ok(&self.a * x_prev + &self.b * u)
    }

    /// Controllability matrix `(B AB ... A^{k-1}B)` with `k` blocks.
    pub fn controllability_matrix(&self, k: usize) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, k * m);
        let mut block = self.b.clone();
        for i in 0..k {
            out.view_mut((0, i * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        out
    }

    pub fn build_controllability(&self, rank_tol: f64) -> Result<ControllabilityData> {
        ControllabilityData::new(self, rank_tol)
    }
}

/// Controllability index, controllability matrix, its right inverse and the
/// shift/extraction operators the controller works with.
///
/// Stacked vectors in `R^{mu m}` are ordered so that the first `m`-block
/// multiplies `B` and the last multiplies `A^{mu-1} B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityData {
    pub mu: usize,
    /// `(B AB ... A^{mu-1}B)`, `n x mu m`.
    pub s_c: DMatrix<f64>,
    /// Right inverse `S_c^T (S_c S_c^T)^{-1}`, `mu m x n`.
    pub p: DMatrix<f64>,
    /// Shift by one `m`-block towards the end, `mu m x mu m`.
    pub w: DMatrix<f64>,
    /// Extracts the last `m`-block, `m x mu m`.
    pub e: DMatrix<f64>,
    /// `[0_{m x (mu-1)m}; I_{(mu-1)m}]`.
    pub e01: DMatrix<f64>,
    /// `[I_{(mu-1)m}; 0_{m x (mu-1)m}]`.
    pub e10: DMatrix<f64>,
    /// `A^mu`.
    pub a_pow_mu: DMatrix<f64>,
    pub a_norm: f64,
    pub b_norm: f64,
    pub m: usize,
}

impl ControllabilityData {
    pub fn new(sys: &LinearSystem, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must lie in (0, 1), got {rank_tol}"
            )));
        }
        let (n, m) = (sys.n(), sys.m());

        let mut mu = None;
        let mut last_rank = 0;
        for k in 1..=n {
            last_rank = numerical_rank(&sys.controllability_matrix(k), rank_tol);
            if last_rank == n {
                mu = Some(k);
                break;
            }
        }
        let mu = mu.ok_or(Error::NotControllable { rank: last_rank, n })?;

        let s_c = sys.controllability_matrix(mu);
        let gram = &s_c * s_c.transpose();
        let chol = gram.cholesky().ok_or_else(|| {
            Error::NumericalFailure("S_c S_c^T is not numerically positive definite".into())
        })?;
        // (S_c S_c^T) Y = S_c, so P = Y^T by symmetry of the Gram matrix.
        let p = chol.solve(&s_c).transpose();

        let dim = mu * m;
        let w = DMatrix::from_fn(dim, dim, |i, j| if i == j + m { 1.0 } else { 0.0 });
        let e = DMatrix::from_fn(m, dim, |i, j| if j == (mu - 1) * m + i { 1.0 } else { 0.0 });
        let inner = (mu - 1) * m;
        let e01 = DMatrix::from_fn(dim, inner, |i, j| if i == j + m { 1.0 } else { 0.0 });
        let e10 = DMatrix::from_fn(dim, inner, |i, j| if i == j { 1.0 } else { 0.0 });

        Ok(ControllabilityData {
            mu,
            s_c,
            p,
            w,
            e,
            e01,
            e10,
            a_pow_mu: matrix_power(sys.a(), mu),
            a_norm: spectral_norm(sys.a()),
            b_norm: spectral_norm(sys.b()),
            m,
        })
    }

    /// Length of stacked input vectors, `mu m`.
    pub fn stacked_dim(&self) -> usize {
        self.mu * self.m
    }

    /// `W^0, ..., W^{mu-1}`.
    pub fn w_powers(&self) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.mu);
        let mut cur = DMatrix::identity(self.stacked_dim(), self.stacked_dim());
        for _ in 0..self.mu {
            out.push(cur.clone());
            cur = &cur * &self.w;
        }
        out
    }

    /// Assumption 3 check: `||A|| < (l_x + alpha_x) / (2 (l_x - alpha_x))`.
    /// The bound is `+inf` when `alpha_x == l_x`.
    pub fn check_norm_bound(&self, alpha_x: f64, l_x: f64) -> CheckReport {
        let mut report = CheckReport::new();
        report.push(Condition::new(
            "0 < alpha_x <= l_x",
            alpha_x,
            Relation::LessEq,
            l_x,
        ));
        let name = "||A|| < (l_x + alpha_x) / (2 (l_x - alpha_x))";
        if l_x == alpha_x {
            report.push(Condition::vacuous(name, self.a_norm, Relation::Less, f64::INFINITY));
        } else {
            let bound = (l_x + alpha_x) / (2.0 * (l_x - alpha_x));
            report.push(Condition::new(name, self.a_norm, Relation::Less, bound));
        }
        report
    }
}

pub fn check_assumption3(ctrb: &ControllabilityData, alpha_x: f64, l_x: f64) -> CheckReport {
    ctrb.check_norm_bound(alpha_x, l_x)
}

/// The matrix from the simulation study: a controllable single-input
/// system with controllability index 3 and an unstable eigenvalue near 3.26.
pub fn reference_system() -> LinearSystem {
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[1.05, 0.7, 1.75, 0.35, 0.7, 1.05, 1.4, 0.105, 1.855],
    );
    let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]);
    LinearSystem::new(a, b).expect("reference system is well formed")
}
