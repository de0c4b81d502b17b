#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ogdlds_core::cost::{setpoint_rng, SteadyStateMap};
use ogdlds_core::linalg::{matrix_power, max_abs_diff, singular_values};
use ogdlds_core::system::DEFAULT_RANK_TOL;
use ogdlds_core::{ControllabilityData, CostSequence, LinearSystem, QuadraticTrackingCost, SetpointSchedule, StageCost};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(stream: u64) -> ChaCha8Rng {
    setpoint_rng(0x5eed, stream)
}

pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -scale, scale))
}

/// Controllable `(A, B)` with entries in `[-scale, scale]` and `I - A`
/// comfortably invertible.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize, scale: f64) -> LinearSystem {
    loop {
        let sys = LinearSystem::new(random_matrix(rng, n, n, scale), random_matrix(rng, n, m, 1.0)).unwrap();
        let Ok(ctrb) = sys.build_controllability(DEFAULT_RANK_TOL) else {
            continue;
        };
        let s = singular_values(&ctrb.s_c);
        let gap = singular_values(&(DMatrix::identity(n, n) - sys.a()));
        if s.last().unwrap() / s[0] > 1e-3 && *gap.last().unwrap() > 1e-2 {
            return sys;
        }
    }
}

/// Random steady-state schedule; each step after the first redraws `eta`
/// with probability `change_prob`.
pub fn random_schedule<R: Rng>(
    rng: &mut R,
    sys: &LinearSystem,
    horizon: usize,
    change_prob: f64,
) -> SetpointSchedule {
    let map = SteadyStateMap::new(sys).unwrap();
    let mut eta = vec![DVector::from_fn(sys.m(), |_, _| uniform(rng, -2.0, 2.0))];
    for _ in 1..horizon {
        let next = if rng.random::<f64>() < change_prob {
            DVector::from_fn(sys.m(), |_, _| uniform(rng, -2.0, 2.0))
        } else {
            eta.last().unwrap().clone()
        };
        eta.push(next);
    }
    let theta = eta.iter().map(|e| map.theta_for(e).unwrap()).collect();
    SetpointSchedule::new(theta, eta).unwrap()
}

pub fn random_quadratic_costs<R: Rng>(
    rng: &mut R,
    sys: &LinearSystem,
    horizon: usize,
) -> CostSequence {
    let schedule = random_schedule(rng, sys, horizon, 0.4);
    let q = uniform(rng, 0.5, 2.0);
    let r = uniform(rng, 0.5, 2.0);
    CostSequence::quadratic(&schedule, q, r).unwrap()
}

/// Total cost of the input sequence `us` (stacked, `m` per step) from `x0`.
pub fn rollout_cost<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
    us: &[f64],
) -> f64 {
    let m = sys.m();
    let mut x = x0.clone();
    let mut total = 0.0;
    for (t, c) in seq.iter().enumerate() {
        let u = DVector::from_column_slice(&us[t * m..(t + 1) * m]);
        x = sys.a() * &x + sys.b() * &u;
        total += c.eval(&x, &u);
    }
    total
}

/// Brute-force benchmark: gradient descent on the stacked inputs with
/// central finite-difference gradients. Steps follow the Barzilai-Borwein
/// rule, halved until the cost decreases. Stops once the gradient norm is
/// below `tol` or the cost stops improving at rounding level.
pub fn brute_force_optimal_cost<C: StageCost>(
    sys: &LinearSystem,
    seq: &CostSequence<C>,
    x0: &DVector<f64>,
    tol: f64,
) -> f64 {
    let dim = sys.m() * seq.horizon();
    let f = |u: &[f64]| rollout_cost(sys, seq, x0, u);
    let h = 1e-5;
    let grad = |u: &[f64]| -> Vec<f64> {
        let mut p = u.to_vec();
        (0..dim)
            .map(|i| {
                let keep = p[i];
                p[i] = keep + h;
                let up = f(&p);
                p[i] = keep - h;
                let down = f(&p);
                p[i] = keep;
                (up - down) / (2.0 * h)
            })
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut u = seq.iter().flat_map(|c| c.eta().iter().copied()).collect::<Vec<_>>();
    let mut val = f(&u);
    let mut g = grad(&u);
    let mut step = 1e-3;
    let mut stalled = 0;
    for _ in 0..200_000 {
        if dot(&g, &g).sqrt() < tol || stalled >= 50 {
            break;
        }
        let (cand, cv) = loop {
            let cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let cv = f(&cand);
            if cv < val || step < 1e-30 {
                break (cand, cv);
            }
            step *= 0.5;
        };
        if cv >= val {
            break;
        }
        stalled = if val - cv <= 1e-15 * (1.0 + val.abs()) { stalled + 1 } else { 0 };
        let g_new = grad(&cand);
        let s: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * step };
        u = cand;
        val = cv;
        g = g_new;
    }
    val
}

/// Quadratic tracking costs around the given schedule with unit weights.
pub fn unit_costs(schedule: &SetpointSchedule) -> CostSequence<QuadraticTrackingCost> {
    CostSequence::quadratic(schedule, 1.0, 1.0).unwrap()
}

/// Largest violation of `S_c W + A^mu B e = A S_c`,
/// `sum_{i<=k} A^i B e W^{k-i} = S_c (W^T)^{mu-1-k}` and `W^mu = 0`.
pub fn identity_residual(sys: &LinearSystem, ctrb: &ControllabilityData) -> f64 {
    let a = sys.a();
    let b = sys.b();
    let mu = ctrb.mu;
    let w_pows = ctrb.w_powers();
    let a_pows: Vec<DMatrix<f64>> = (0..=mu).map(|i| matrix_power(a, i)).collect();
    let mut worst = max_abs_diff(&(&ctrb.s_c * &ctrb.w + &a_pows[mu] * b * &ctrb.e), &(a * &ctrb.s_c));
    for k in 0..mu {
        let mut lhs = DMatrix::zeros(sys.n(), ctrb.stacked_dim());
        for i in 0..=k {
            lhs += &a_pows[i] * b * &ctrb.e * &w_pows[k - i];
        }
        let rhs = &ctrb.s_c * w_pows[mu - 1 - k].transpose();
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    let w_mu = &w_pows[mu - 1] * &ctrb.w;
    worst.max(w_mu.amax())
}
