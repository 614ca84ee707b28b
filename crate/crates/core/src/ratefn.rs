//! The dynamical rate functional `I_T(pi | gamma)`, the energy `Q`, and the
//! identities that certify optimal paths.
//!
//! For each stored time the elliptic problem
//! `d_t pi = pi''/2 - (chi(pi) (E/2 + H'))'`, `H(+-1) = 0`, is integrated once
//! in space. With cell midpoints `j + 1/2`, `chi_j = (chi(pi_j) + chi(pi_{j+1}))/2`
//! and the cumulative time derivative `C_j = h sum_{k=1..j} d_t pi_k`,
//!
//! ```text
//! chi_j H'_j = (pi_{j+1} - pi_j)/(2h) - (E/2) chi_j - C_j + c,
//! ```
//!
//! where the constant `c` makes `H` vanish at both ends. Then
//! `I_T = (1/2) int dt sum_j h chi_j (H'_j)^2`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::time_derivative;
use crate::elgp;
use crate::error::{Error, Result};
use crate::functionals::QuasiPotential;
use crate::grid::{DensityProfile, Params, SpacetimePath};
use crate::numerics::chi;

/// Tolerance on `|pi_0 - gamma|` beyond which the cost is infinite.
pub const TOL_INITIAL: f64 = 1e-6;
/// Tolerance certifying the Hamilton-Jacobi identity.
pub const TOL_HJ: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CostBreakdown {
    #[serde(rename = "I_T")]
    pub i_t: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    /// `H_t` at the nodes, one row per stored time.
    pub h: Vec<Vec<f64>>,
    /// `H_t'` at cell midpoints.
    pub grad_h: Vec<Vec<f64>>,
    /// `(1/2) <H_t', chi H_t'>` per stored time.
    pub density: Vec<f64>,
    #[serde(rename = "K_norm_sq")]
    pub k_norm_sq: Option<f64>,
    pub initial_mismatch: f64,
    /// Set when the mobility vanishes on a cell and the cost is infinite.
    pub degenerate: bool,
}

impl CostBreakdown {
    fn infinite(q: f64, initial_mismatch: f64, degenerate: bool) -> Self {
        Self {
            i_t: f64::INFINITY,
            q,
            h: Vec::new(),
            grad_h: Vec::new(),
            density: Vec::new(),
            k_norm_sq: None,
            initial_mismatch,
            degenerate,
        }
    }
}

fn cell_mobility(p: &[f64]) -> Vec<f64> {
    p.windows(2).map(|w| 0.5 * (chi(w[0]) + chi(w[1]))).collect()
}

/// Trapezoid rule in time.
fn time_integral(times: &[f64], f: &[f64]) -> f64 {
    times.windows(2).zip(f.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// `Q(pi) = (1/2) int dt int (pi')^2 / chi(pi)`; infinite when the mobility
/// vanishes at a node where the profile moves.
pub fn energy_q(path: &SpacetimePath) -> f64 {
    let h = path.grid().spacing();
    let per_time: Vec<f64> = path
        .profiles()
        .iter()
        .map(|p| {
            let v = p.values();
            // (pi')^2 / chi is not integrable next to a zero of chi where pi moves
            let n = v.len();
            let stuck = (0..n).any(|i| {
                chi(v[i]) <= 0.0 && ((i > 0 && v[i] != v[i - 1]) || (i + 1 < n && v[i] != v[i + 1]))
            });
            if stuck {
                return f64::INFINITY;
            }
            let c = cell_mobility(v);
            let mut total = 0.0;
            for (w, cj) in v.windows(2).zip(&c) {
                let d = w[1] - w[0];
                if d == 0.0 {
                    continue;
                }
                if *cj <= 0.0 {
                    return f64::INFINITY;
                }
                total += d * d / (h * cj);
            }
            0.5 * total
        })
        .collect();
    if per_time.iter().any(|v| v.is_infinite()) {
        return f64::INFINITY;
    }
    if path.len() == 1 {
        return 0.0;
    }
    time_integral(path.times(), &per_time)
}

/// Midpoint gradient of `H_t` for one time slice; `None` on degenerate mobility.
fn elliptic_gradient(p: &[f64], dp: &[f64], h: f64, e: f64) -> Option<Vec<f64>> {
    let c = cell_mobility(p);
    if c.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut cum = 0.0;
    let mut g = Vec::with_capacity(c.len());
    for j in 0..c.len() {
        if j > 0 {
            cum += h * dp[j];
        }
        g.push(0.5 * (p[j + 1] - p[j]) / h - 0.5 * e * c[j] - cum);
    }
    let num: f64 = g.iter().zip(&c).map(|(gj, cj)| gj / cj).sum();
    let den: f64 = c.iter().map(|cj| 1.0 / cj).sum();
    let shift = -num / den;
    Some(g.iter().zip(&c).map(|(gj, cj)| (gj + shift) / cj).collect())
}

fn integrate_gradient(grad: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grad.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for g in grad {
        acc += h * g;
        out.push(acc);
    }
    // the shift constant makes the last value vanish up to rounding
    let last = out.len() - 1;
    out[last] = 0.0;
    out
}

/// `I_T(pi | gamma)` through the elliptic representation.
pub fn rate_i_t(path: &SpacetimePath, gamma: &DensityProfile, params: &Params) -> Result<CostBreakdown> {
    let grid = path.grid();
    if gamma.grid() != grid {
        return Err(Error::GridMismatch("initial profile and path use different grids".into()));
    }
    let q = energy_q(path);
    let mismatch = path.first().sup_distance(gamma);
    if mismatch > TOL_INITIAL {
        return Ok(CostBreakdown::infinite(q, mismatch, false));
    }
    if path.len() < 2 {
        return Ok(CostBreakdown {
            i_t: 0.0,
            q,
            h: vec![vec![0.0; grid.len()]],
            grad_h: vec![vec![0.0; grid.len() - 1]],
            density: vec![0.0],
            k_norm_sq: None,
            initial_mismatch: mismatch,
            degenerate: false,
        });
    }
    let h = grid.spacing();
    let e = params.e();
    let vals: Vec<&[f64]> = path.profiles().iter().map(|p| p.values()).collect();
    let dt = time_derivative(path.times(), &vals);
    let grads: Option<Vec<Vec<f64>>> =
        vals.par_iter().zip(&dt).map(|(p, d)| elliptic_gradient(p, d, h, e)).collect();
    let Some(grad_h) = grads else {
        return Ok(CostBreakdown::infinite(q, mismatch, true));
    };
    let density: Vec<f64> = vals
        .iter()
        .zip(&grad_h)
        .map(|(p, g)| 0.5 * h * cell_mobility(p).iter().zip(g).map(|(c, v)| c * v * v).sum::<f64>())
        .collect();
    let i_t = time_integral(path.times(), &density);
    let hs = grad_h.iter().map(|g| integrate_gradient(g, h)).collect();
    Ok(CostBreakdown { i_t, q, h: hs, grad_h, density, k_norm_sq: None, initial_mismatch: mismatch, degenerate: false })
}

/// `Gamma = logit(rho) - Phi(rho)` at the nodes.
pub fn gamma_field(rho: &DensityProfile, params: &Params) -> Result<Vec<f64>> {
    let phi = elgp::solve_phi(rho, params)?.phi;
    rho.values()
        .iter()
        .zip(phi.values())
        .map(|(&r, &p)| {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Domain(format!("Gamma needs rho in (0, 1), got {r}")));
            }
            Ok((r / (1.0 - r)).ln() - p)
        })
        .collect()
}

/// Terms of `I_T(pi | gamma) = S_E(pi_T) - S_E(gamma) + (1/2) ||K||^2`, `K = Gamma - H`.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    #[serde(rename = "I_T")]
    pub i_t: f64,
    pub s_start: f64,
    pub s_end: f64,
    #[serde(rename = "K_norm_sq")]
    pub k_norm_sq: f64,
    /// `I_T - (S_end - S_start + K_norm_sq / 2)`.
    pub defect: f64,
}

pub fn decomposition(path: &SpacetimePath, gamma: &DensityProfile, params: &Params) -> Result<Decomposition> {
    let cost = rate_i_t(path, gamma, params)?;
    if !cost.i_t.is_finite() {
        return Err(Error::Domain("the path has infinite cost".into()));
    }
    let grid = path.grid();
    let h = grid.spacing();
    let gammas: Vec<Vec<f64>> =
        path.profiles().par_iter().map(|p| gamma_field(p, params)).collect::<Result<_>>()?;
    let k_density: Vec<f64> = path
        .profiles()
        .iter()
        .zip(&gammas)
        .zip(&cost.grad_h)
        .map(|((p, g), gh)| {
            let c = cell_mobility(p.values());
            (0..c.len())
                .map(|j| {
                    let k = (g[j + 1] - g[j]) / h - gh[j];
                    h * c[j] * k * k
                })
                .sum::<f64>()
        })
        .collect();
    let k_norm_sq = time_integral(path.times(), &k_density);
    let qp = QuasiPotential::new(params, grid)?;
    let s_start = qp.value(path.first())?.value;
    let s_end = qp.value(path.last())?.value;
    Ok(Decomposition {
        i_t: cost.i_t,
        s_start,
        s_end,
        k_norm_sq,
        defect: cost.i_t - (s_end - s_start + 0.5 * k_norm_sq),
    })
}

/// `J_H(pi)` for a test function given at the nodes and stored times of the
/// path, vanishing at `u = +-1`. Spatial quadratures are the
/// summation-by-parts compatible ones: interior weights `h` for
/// `<pi, Delta H>`, first-order one-sided boundary gradients and midpoint sums
/// for the mobility terms.
pub fn variational_j_h(path: &SpacetimePath, gamma: &DensityProfile, test: &[Vec<f64>], params: &Params) -> Result<f64> {
    let grid = path.grid();
    let n = grid.len();
    if test.len() != path.len() || test.iter().any(|r| r.len() != n) {
        return Err(Error::GridMismatch("test function does not match the path".into()));
    }
    if test.iter().any(|r| r[0].abs() > 1e-12 || r[n - 1].abs() > 1e-12) {
        return Err(Error::Domain("test function must vanish at u = +-1".into()));
    }
    let h = grid.spacing();
    let e = params.e();
    let w = grid.weights();
    let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((x, y), wi)| x * y * wi).sum::<f64>();

    let k = path.len();
    let profiles = path.profiles();
    let mut total = ip(profiles[k - 1].values(), &test[k - 1]) - ip(gamma.values(), &test[0]);
    for s in 0..k - 1 {
        let mid: Vec<f64> = profiles[s].values().iter().zip(profiles[s + 1].values()).map(|(a, b)| 0.5 * (a + b)).collect();
        let dh: Vec<f64> = test[s + 1].iter().zip(&test[s]).map(|(a, b)| a - b).collect();
        total -= ip(&mid, &dh);
    }
    let slice: Vec<f64> = profiles
        .iter()
        .zip(test)
        .map(|(p, hh)| {
            let p = p.values();
            let lap: f64 = (1..n - 1).map(|i| h * p[i] * (hh[i + 1] - 2.0 * hh[i] + hh[i - 1]) / (h * h)).sum();
            let boundary = 0.5 * params.rho_plus() * (hh[n - 1] - hh[n - 2]) / h
                - 0.5 * params.rho_minus() * (hh[1] - hh[0]) / h;
            let c = cell_mobility(p);
            let (drift, quad) = c.iter().enumerate().fold((0.0, 0.0), |(d, q), (j, cj)| {
                let g = (hh[j + 1] - hh[j]) / h;
                (d + h * cj * g, q + h * cj * g * g)
            });
            -0.5 * lap + boundary - 0.5 * e * drift - 0.5 * quad
        })
        .collect();
    Ok(total + time_integral(path.times(), &slice))
}

/// `|<Gamma', chi Gamma'> - <rho' - E chi, Gamma'>|` with `Gamma = logit rho - Phi(rho)`.
pub fn hamilton_jacobi_residual(rho: &DensityProfile, params: &Params) -> Result<f64> {
    let g = gamma_field(rho, params)?;
    let h = rho.grid().spacing();
    let e = params.e();
    let r = rho.values();
    let c = cell_mobility(r);
    let total: f64 = (0..c.len())
        .map(|j| {
            let dg = (g[j + 1] - g[j]) / h;
            let dr = (r[j + 1] - r[j]) / h;
            h * (c[j] * dg * dg - (dr - e * c[j]) * dg)
        })
        .sum();
    Ok(total.abs())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShiftIdentity {
    /// `S_E(pi_T) - S_E(pi_0)`.
    pub lhs: f64,
    /// `int dt <Gamma_t, d_t pi_t>`.
    pub rhs: f64,
    pub gap: f64,
}

/// Checks `S_E(pi_T) - S_E(pi_0) = int dt <Gamma_t, d_t pi_t>`. The time
/// integral is the trapezoid rule for the line integral of the gradient
/// `Gamma` of the discrete `S_E` along the stored snapshots.
pub fn shift_identity_check(path: &SpacetimePath, params: &Params) -> Result<ShiftIdentity> {
    let grid = path.grid();
    let w = grid.weights();
    let gammas: Vec<Vec<f64>> =
        path.profiles().par_iter().map(|p| gamma_field(p, params)).collect::<Result<_>>()?;
    let profiles = path.profiles();
    let rhs: f64 = (0..path.len().saturating_sub(1))
        .map(|s| {
            (0..grid.len())
                .map(|i| {
                    w[i] * 0.5 * (gammas[s][i] + gammas[s + 1][i]) * (profiles[s + 1].values()[i] - profiles[s].values()[i])
                })
                .sum::<f64>()
        })
        .sum();
    let qp = QuasiPotential::new(params, grid)?;
    let lhs = qp.value(path.last())?.value - qp.value(path.first())?.value;
    Ok(ShiftIdentity { lhs, rhs, gap: (lhs - rhs).abs() })
}
