//! Static functionals: the trial functionals `G_E`, `G_0`, `G_a`, the
//! quasi-potential `S_E`, its reversible form `S_E0` and the asymmetric limit
//! `S_a`.
//!
//! Discretization: local terms use trapezoid weights, the slope term
//! `F(phi')` uses cell slopes with the midpoint rule. The normalization
//! constant is taken on the grid, `A_E^h = (1/2)[sum_i w_i log chi(rho_bar_i) + sum_j h F(x_bar_j)]`,
//! so that `G_E(rho_bar, phi_bar) = 0` holds exactly at the discrete level.
//! It differs from the quadrature value of `A_E` by `O(h^2)`; both are
//! reported.

use serde::Serialize;

use crate::elgp::{self, ElSolution, Method, SolveOptions};
use crate::error::{Error, Result};
use crate::grid::{quadrature, DensityProfile, Grid, Params, PotentialProfile};
use crate::numerics::{chi, logistic, neg_entropy, slope_integrand, softplus, stable_sum, xlogx};
use crate::stationary::{asymmetric_constants, StationaryState};

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub residual: Option<f64>,
    pub fixed_point_residual: Option<f64>,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub method: Option<Method>,
    pub clip_events: usize,
    /// Normalization actually used on the grid.
    pub normalization: Option<f64>,
    /// Quadrature value of the normalization constant.
    pub normalization_exact: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub value: f64,
    pub maximizer: Option<PotentialProfile>,
    pub diagnostics: Diagnostics,
}

/// Quasi-potential on a fixed grid: caches the stationary pair and the grid
/// normalization.
#[derive(Debug, Clone)]
pub struct QuasiPotential {
    params: Params,
    grid: Grid,
    stationary: StationaryState,
    normalization: f64,
}

impl QuasiPotential {
    pub fn new(params: &Params, grid: Grid) -> Result<Self> {
        params.require_subcritical()?;
        let stationary = StationaryState::solve(params, grid)?;
        let normalization = if params.is_reversible() {
            f64::NAN
        } else {
            let w = grid.weights();
            let local = stable_sum(stationary.rho_bar.values().iter().zip(&w).map(|(r, wi)| wi * chi(*r).ln()));
            let slopes = slope_term(&stationary.phi_bar.cell_slopes(), grid.spacing(), params.e())?;
            0.5 * (local + slopes)
        };
        Ok(Self { params: *params, grid, stationary, normalization })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }
    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn stationary(&self) -> &StationaryState {
        &self.stationary
    }
    /// Grid normalization `A_E^h` (NaN at `E = E0`).
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    fn check(&self, rho: &DensityProfile) -> Result<()> {
        if rho.grid() != self.grid {
            return Err(Error::GridMismatch("profile is not on the quasi-potential grid".into()));
        }
        Ok(())
    }

    /// Trial functional `G_E(rho, phi)` (`G_0` when `E = 0`).
    pub fn trial(&self, rho: &DensityProfile, phi: &PotentialProfile) -> Result<f64> {
        self.check(rho)?;
        if self.params.is_reversible() {
            return Err(Error::InvalidParams("the trial functional needs E < E0".into()));
        }
        if phi.grid() != self.grid {
            return Err(Error::GridMismatch("potential is not on the quasi-potential grid".into()));
        }
        self.trial_with_slopes(rho, phi, &phi.cell_slopes())
    }

    /// [`QuasiPotential::trial`] with the cell slopes of `phi` supplied.
    fn trial_with_slopes(&self, rho: &DensityProfile, phi: &PotentialProfile, slopes: &[f64]) -> Result<f64> {
        let w = self.grid.weights();
        let local = stable_sum(
            rho.values()
                .iter()
                .zip(phi.values())
                .zip(&w)
                .map(|((r, p), wi)| wi * (neg_entropy(*r) + (1.0 - r) * p - softplus(*p))),
        );
        let slopes = slope_term(slopes, self.grid.spacing(), self.params.e())?;
        Ok(stable_sum([local, slopes, -2.0 * self.normalization]))
    }

    /// `S_E(rho) = G_E(rho, Phi(rho))`; the relative entropy at `E = E0`.
    pub fn value(&self, rho: &DensityProfile) -> Result<RateReport> {
        self.value_with(rho, &SolveOptions::default())
    }

    pub fn value_with(&self, rho: &DensityProfile, opts: &SolveOptions) -> Result<RateReport> {
        self.check(rho)?;
        if self.params.is_reversible() {
            return Ok(RateReport {
                value: self.relative_entropy(rho),
                maximizer: Some(self.stationary.phi_bar.clone()),
                diagnostics: Diagnostics { method: Some(Method::ClosedForm), ..Diagnostics::default() },
            });
        }
        let sol = elgp::solve_phi_with(rho, &self.params, opts)?;
        self.report(rho, sol)
    }

    fn report(&self, rho: &DensityProfile, sol: ElSolution) -> Result<RateReport> {
        self.check(rho)?;
        let value = self.trial_with_slopes(rho, &sol.phi, &sol.slopes)?;
        Ok(RateReport {
            value,
            diagnostics: Diagnostics {
                residual: Some(sol.residual),
                fixed_point_residual: Some(sol.fixed_point_residual),
                iterations: sol.iterations,
                newton_iterations: sol.newton_iterations,
                method: Some(sol.method),
                clip_events: 0,
                normalization: Some(self.normalization),
                normalization_exact: self.stationary.a_e,
            },
            maximizer: Some(sol.phi),
        })
    }

    /// `int rho log(rho/rho_bar) + (1 - rho) log((1 - rho)/(1 - rho_bar))`.
    pub fn relative_entropy(&self, rho: &DensityProfile) -> f64 {
        relative_entropy(rho, &self.stationary.rho_bar)
    }
}

/// `sum_j h F(x_j)` over cell slopes.
fn slope_term(slopes: &[f64], h: f64, e: f64) -> Result<f64> {
    let floor = e.max(0.0);
    let mut terms = Vec::with_capacity(slopes.len());
    for (j, &x) in slopes.iter().enumerate() {
        if !(x > floor || (x == 0.0 && e < 0.0)) {
            return Err(Error::Domain(format!("slope {x} at cell {j} not above {floor}")));
        }
        terms.push(h * slope_integrand(x, e));
    }
    Ok(stable_sum(terms))
}

/// Relative entropy of `rho` with respect to `reference`, with `0 log 0 = 0`.
pub fn relative_entropy(rho: &DensityProfile, reference: &DensityProfile) -> f64 {
    let vals: Vec<f64> = rho
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&r, &b)| {
            let a = if r > 0.0 { xlogx(r) - r * b.ln() } else { 0.0 };
            let c = if r < 1.0 { xlogx(1.0 - r) - (1.0 - r) * (1.0 - b).ln() } else { 0.0 };
            a + c
        })
        .collect();
    quadrature(&vals, &rho.grid())
}

/// `G_E(rho, phi)` for `E != 0`, `E < E0`.
pub fn g_e(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<f64> {
    if params.e() == 0.0 {
        return Err(Error::InvalidParams("use g_0 at E = 0".into()));
    }
    QuasiPotential::new(params, rho.grid())?.trial(rho, phi)
}

/// `G_0(rho, phi)`.
pub fn g_0(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<f64> {
    QuasiPotential::new(&params.with_field(0.0), rho.grid())?.trial(rho, phi)
}

/// `S_E(rho)`.
pub fn s_e(rho: &DensityProfile, params: &Params) -> Result<RateReport> {
    QuasiPotential::new(params, rho.grid())?.value(rho)
}

/// `S_E0(rho)`: relative entropy with respect to the reversible profile.
pub fn s_e0(rho: &DensityProfile, params: &Params) -> Result<f64> {
    let p = params.with_field(params.e0());
    let reference = DensityProfile::from_fn(rho.grid(), |u| logistic(p.affine_potential(u)))?;
    Ok(relative_entropy(rho, &reference))
}

/// `G_a(rho, phi) = int {rho log rho + (1-rho) log(1-rho) + (1-rho) phi - log(1+e^phi) - A_a}`.
pub fn g_a(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<f64> {
    if rho.grid() != phi.grid() {
        return Err(Error::GridMismatch("density and potential grids differ".into()));
    }
    let (_, a_a) = asymmetric_constants(params);
    let vals: Vec<f64> = rho
        .values()
        .iter()
        .zip(phi.values())
        .map(|(r, p)| neg_entropy(*r) + (1.0 - r) * p - softplus(*p) - a_a)
        .collect();
    Ok(quadrature(&vals, &rho.grid()))
}

/// Maximizer of `G_a(rho, .)` over nondecreasing grid potentials with values
/// in `[phi_-, phi_+]` (the closure of the asymmetric admissible set, where
/// boundary values are one-sided limits and may jump at `u = +-1`).
///
/// The per-node objective `w_i [(1 - rho_i) phi - log(1 + e^phi)]` is
/// maximized at `logistic(phi) = 1 - rho_i`, and a pooled block at the
/// weighted mean of `1 - rho`. Weighted pool-adjacent-violators on `y = 1 - rho`
/// followed by clamping gives the constrained maximizer.
pub fn asymmetric_maximizer(rho: &DensityProfile, params: &Params) -> PotentialProfile {
    let grid = rho.grid();
    let w = grid.weights();
    let y: Vec<f64> = rho.values().iter().map(|r| 1.0 - r).collect();
    let values = pool_adjacent_violators(&y, &w)
        .into_iter()
        .map(|v| {
            let q = v.clamp(params.rho_minus(), params.rho_plus());
            (q / (1.0 - q)).ln()
        })
        .collect();
    PotentialProfile::new(grid, values).expect("clamped potentials are finite")
}

/// Weighted isotonic (nondecreasing) regression by pool-adjacent-violators.
pub fn pool_adjacent_violators(y: &[f64], w: &[f64]) -> Vec<f64> {
    // blocks of (weighted mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wi) in y.iter().zip(w) {
        blocks.push((v, wi, 1));
        while blocks.len() > 1 {
            let (m1, w1, n1) = blocks[blocks.len() - 1];
            let (m0, w0, n0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let total = w0 + w1;
            *blocks.last_mut().unwrap() = ((w0 * m0 + w1 * m1) / total, total, n0 + n1);
        }
    }
    blocks.iter().flat_map(|&(m, _, n)| std::iter::repeat_n(m, n)).collect()
}

/// `S_a(rho) = G_a(rho, phi_a)` with `phi_a` from [`asymmetric_maximizer`].
pub fn s_a(rho: &DensityProfile, params: &Params) -> Result<RateReport> {
    let phi = asymmetric_maximizer(rho, params);
    let value = g_a(rho, &phi, params)?;
    Ok(RateReport { value, maximizer: Some(phi), diagnostics: Diagnostics::default() })
}
