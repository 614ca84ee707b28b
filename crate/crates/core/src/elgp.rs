//! The Euler-Lagrange boundary value problem
//! `phi''/(phi'(phi' - E)) + 1/(1 + e^phi) = rho`, `phi(-1) = phi_-`, `phi(1) = phi_+`,
//! whose solution `Phi(rho)` maximizes the trial functional `G_E(rho, .)`.
//!
//! The problem is discretized on cell slopes `x_j = (phi_{j+1} - phi_j)/h`
//! through the first-order form `s(phi')' = rho - 1/(1 + e^phi)`, with
//! `s(x) = (1/E) log(1 - E/x)`:
//!
//! ```text
//! s(x_i) - s(x_{i-1}) = h (rho_i - 1/(1 + e^{phi_i})),   i = 1..M-2.
//! ```
//!
//! These are exactly the stationarity conditions of the discrete trial
//! functional in `functionals`, and the discrete fixed-point operators below
//! are built so that their fixed points solve the same equations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{cell_slopes, derivative, second_derivative, DensityProfile, Grid, Params, PotentialProfile};
use crate::numerics::{
    fermi, ln1p_ratio, logistic_prime, s_prime, s_to_slope, slope_integrand, slope_to_s, softplus,
    solve_tridiagonal,
};

/// Stopping tolerance on the sup norm of an update.
pub const TOL_STEP: f64 = 1e-10;
/// Tolerance on the discrete Euler-Lagrange residual.
pub const TOL_EL: f64 = 1e-6;
/// Tolerance on `|K(phi) - phi|`.
pub const TOL_FIXED_POINT: f64 = 1e-8;
pub const MAX_ITER: usize = 10_000;
pub const DAMPING: f64 = 0.5;

const MAX_NEWTON: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `E <= 0`, operator `K1`.
    K1,
    /// `0 < E < E0`, operator `K2`.
    K2,
    /// `E = E0`: `Phi` is the affine potential.
    Reversible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// Damped fixed-point iteration.
    FixedPoint,
    /// Newton ascent on the discrete trial functional, used when the
    /// fixed-point iteration stagnates or diverges.
    Newton,
    /// Newton on the first-order system in the slope variables `s(phi')`,
    /// used when slopes fall below the resolution of potential differences.
    SlopeNewton,
    ClosedForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElSolution {
    pub rho: DensityProfile,
    pub phi: PotentialProfile,
    /// Cell slopes of `phi`. Carried separately because on flat stretches at
    /// large `|E|` they are far below what differences of `phi` resolve.
    pub slopes: Vec<f64>,
    /// Sup norm of the discrete Euler-Lagrange residual.
    pub residual: f64,
    /// Sup norm of `K(phi) - phi`.
    pub fixed_point_residual: f64,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub branch: Branch,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub damping: f64,
    pub max_iter: usize,
    pub tol_step: f64,
    /// Starting point; the affine potential when `None`.
    pub initial: Option<PotentialProfile>,
    /// Allow the Newton fallback.
    pub newton_fallback: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            damping: DAMPING,
            max_iter: MAX_ITER,
            tol_step: TOL_STEP,
            initial: None,
            newton_fallback: true,
        }
    }
}

impl SolveOptions {
    pub fn warm(initial: PotentialProfile) -> Self {
        Self { initial: Some(initial), ..Self::default() }
    }
}

pub fn branch_for(params: &Params) -> Result<Branch> {
    params.require_subcritical()?;
    Ok(if params.is_reversible() {
        Branch::Reversible
    } else if params.e() <= 0.0 {
        Branch::K1
    } else {
        Branch::K2
    })
}

/// Lower bound for admissible slopes, `max(0, E)`.
pub fn slope_floor(params: &Params) -> f64 {
    params.e().max(0.0)
}

fn check_grids(rho: &DensityProfile, phi: &PotentialProfile) -> Result<()> {
    if rho.grid() != phi.grid() {
        return Err(Error::GridMismatch("density and potential grids differ".into()));
    }
    Ok(())
}

/// Discrete weight multiplying `rho - 1/(1+e^phi)` in the operator exponent at
/// a node with neighbouring slopes `xm`, `xp`: `log(xp/xm)/(s(xp) - s(xm))`
/// for `K1`, `log((xp-E)/(xm-E))/(s(xp) - s(xm))` for `K2`. These tend to
/// `phi' - E` and `phi'` as the slopes merge.
fn operator_weight(branch: Branch, xm: f64, xp: f64, e: f64, floor: f64) -> f64 {
    if xm <= floor || xp <= floor {
        let mean = 0.5 * (xm + xp);
        return if branch == Branch::K1 { mean - e } else { mean };
    }
    let d = xp - xm;
    // s(xp) - s(xm) = (d / ((xm - E) xp)) l(b)
    let b = e * d / (xp * (xm - e));
    match branch {
        Branch::K2 => xp * ln1p_ratio(d / (xm - e)) / ln1p_ratio(b),
        _ => xp * (xm - e) / xm * ln1p_ratio(d / xm) / ln1p_ratio(b),
    }
}

fn apply_branch(rho: &DensityProfile, phi: &PotentialProfile, params: &Params, branch: Branch) -> Result<PotentialProfile> {
    check_grids(rho, phi)?;
    let grid = phi.grid();
    let h = grid.spacing();
    let e = params.e();
    let floor = slope_floor(params);
    let p = phi.values();
    let r = rho.values();
    let x = cell_slopes(p, h);
    let cells = x.len();

    // log-weights of the output slopes, one per cell
    let mut log_w = vec![0.0; cells];
    for i in 1..cells {
        let weight = operator_weight(branch, x[i - 1], x[i], e, floor);
        log_w[i] = log_w[i - 1] + h * (r[i] - fermi(p[i])) * weight;
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Domain("fixed-point operator produced non-finite weights".into()));
    }

    let (phi_m, phi_p) = (params.phi_minus(), params.phi_plus());
    let (base_slope, spread) = match branch {
        Branch::K2 => (e, phi_p - phi_m - 2.0 * e),
        _ => (0.0, phi_p - phi_m),
    };
    let mut out = Vec::with_capacity(grid.len());
    out.push(phi_m);
    let mut acc = 0.0;
    for (j, wj) in w.iter().enumerate().take(cells - 1) {
        acc += wj;
        out.push(phi_m + base_slope * (j + 1) as f64 * h + spread * acc / total);
    }
    out.push(phi_p);
    PotentialProfile::new(grid, out)
}

/// The operator `K1` (`E <= 0`).
pub fn operator_k1(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<PotentialProfile> {
    if params.e() > 0.0 {
        return Err(Error::InvalidParams("K1 needs E <= 0".into()));
    }
    apply_branch(rho, phi, params, Branch::K1)
}

/// The operator `K2` (`0 < E < E0`).
pub fn operator_k2(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<PotentialProfile> {
    if !(params.e() > 0.0 && params.e() < params.e0()) {
        return Err(Error::InvalidParams("K2 needs 0 < E < E0".into()));
    }
    apply_branch(rho, phi, params, Branch::K2)
}

/// Applies the operator of the branch selected by `E`.
pub fn apply_operator(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> Result<PotentialProfile> {
    match branch_for(params)? {
        Branch::Reversible => Ok(PotentialProfile::affine(phi.grid(), params)),
        branch => apply_branch(rho, phi, params, branch),
    }
}

/// Sup norm over interior nodes of `(s(x_i) - s(x_{i-1}))/h - (rho_i - 1/(1+e^{phi_i}))`.
pub fn discrete_el_residual(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> f64 {
    let h = phi.grid().spacing();
    let e = params.e();
    let floor = slope_floor(params);
    let x = phi.cell_slopes();
    if x.iter().any(|&v| v <= floor) {
        return f64::INFINITY;
    }
    let s: Vec<f64> = x.iter().map(|&v| slope_to_s(v, e)).collect();
    (1..x.len())
        .map(|i| ((s[i] - s[i - 1]) / h - (rho.values()[i] - fermi(phi.values()[i]))).abs())
        .fold(0.0, f64::max)
}

/// Sup norm over interior nodes of `phi''/(phi'(phi' - E)) + 1/(1+e^phi) - rho`
/// with standard centered stencils.
pub fn el_residual(rho: &DensityProfile, phi: &PotentialProfile, params: &Params) -> f64 {
    let grid = phi.grid();
    let e = params.e();
    let d1 = derivative(phi.values(), &grid);
    let d2 = second_derivative(phi.values(), &grid);
    (1..grid.len() - 1)
        .map(|i| (d2[i] / (d1[i] * (d1[i] - e)) + fermi(phi.values()[i]) - rho.values()[i]).abs())
        .fold(0.0, f64::max)
}

/// Inverse of the discrete Euler-Lagrange map: the density whose `Phi` is
/// `phi`. Exact at interior nodes; the endpoint values come from one-sided
/// stencils of the continuous equation.
pub fn density_for_potential(phi: &PotentialProfile, params: &Params) -> Result<Vec<f64>> {
    let grid = phi.grid();
    let h = grid.spacing();
    let e = params.e();
    let floor = slope_floor(params);
    let x = phi.cell_slopes();
    if let Some(j) = x.iter().position(|&v| v <= floor) {
        return Err(Error::MonotonicityLoss { time: None, node: j });
    }
    let p = phi.values();
    let n = grid.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = fermi(p[i]) + (slope_to_s(x[i], e) - slope_to_s(x[i - 1], e)) / h;
    }
    let d1 = derivative(p, &grid);
    let d2 = second_derivative(p, &grid);
    for i in [0, n - 1] {
        out[i] = fermi(p[i]) + d2[i] / (d1[i] * (d1[i] - e));
    }
    Ok(out)
}

/// Discrete trial objective maximized by `Phi(rho)` (up to terms independent
/// of `phi`): `sum_j h F(x_j) + sum_i w_i [(1 - rho_i) phi_i - log(1 + e^phi_i)]`.
fn objective(r: &[f64], p: &[f64], h: f64, e: f64) -> f64 {
    let slopes: f64 = p.windows(2).map(|w| h * slope_integrand((w[1] - w[0]) / h, e)).sum();
    let local: f64 = (1..p.len() - 1).map(|i| h * ((1.0 - r[i]) * p[i] - softplus(p[i]))).sum();
    slopes + local
}

/// Newton ascent on the strictly concave discrete trial functional.
fn newton(rho: &DensityProfile, start: &PotentialProfile, params: &Params) -> Result<(Vec<f64>, usize)> {
    let grid = start.grid();
    let h = grid.spacing();
    let e = params.e();
    let floor = slope_floor(params);
    let r = rho.values();
    let mut p = start.values().to_vec();
    if start.cell_slopes().iter().any(|&x| x <= floor) {
        p = PotentialProfile::affine(grid, params).into_values();
    }
    let n = p.len();
    let m = n - 2;
    let mut last = f64::INFINITY;
    for it in 0..MAX_NEWTON {
        let x = cell_slopes(&p, h);
        let a: Vec<f64> = x.iter().map(|&v| s_prime(v, e)).collect();
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let g = slope_to_s(x[i], e) - slope_to_s(x[i - 1], e) - h * (r[i] - fermi(p[i]));
            diag[k] = -(a[i] + a[i - 1]) / h - h * logistic_prime(p[i]);
            if k > 0 {
                lower[k] = a[i - 1] / h;
            }
            if k + 1 < m {
                upper[k] = a[i] / h;
            }
            rhs[k] = -g;
        }
        let d_inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
        let mut d = vec![0.0; n];
        d[1..n - 1].copy_from_slice(&d_inner);
        let step_norm = d.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if !step_norm.is_finite() {
            break;
        }

        // keep slopes admissible
        let mut alpha: f64 = 1.0;
        for j in 0..n - 1 {
            let dx = (d[j + 1] - d[j]) / h;
            if dx < 0.0 {
                alpha = alpha.min(0.99 * (x[j] - floor) / -dx);
            }
        }
        if step_norm * alpha > 1e-6 {
            let f0 = objective(r, &p, h, e);
            let slope: f64 = -rhs.iter().zip(&d_inner).map(|(g, di)| g * di).sum::<f64>();
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = p.iter().zip(&d).map(|(pi, di)| pi + alpha * di).collect();
                let f1 = objective(r, &trial, h, e);
                if f1 >= f0 + 1e-4 * alpha * slope {
                    p = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::NoConvergence { method: "Newton line search", iterations: it, residual: step_norm });
            }
        } else {
            for (pi, di) in p.iter_mut().zip(&d) {
                *pi += alpha * di;
            }
        }
        let moved = alpha * step_norm;
        if moved <= TOL_STEP * 1e-2 || (moved <= TOL_STEP && moved >= 0.5 * last) {
            return Ok((p, it + 1));
        }
        last = moved;
    }
    Err(Error::NoConvergence { method: "Newton", iterations: MAX_NEWTON, residual: last })
}

/// Solves for `Phi(rho)` with default options.
pub fn solve_phi(rho: &DensityProfile, params: &Params) -> Result<ElSolution> {
    solve_phi_with(rho, params, &SolveOptions::default())
}

/// Damped fixed-point iteration `phi <- (1 - w) phi + w K(phi)` from the
/// affine potential (or a supplied start), falling back to Newton ascent when
/// the iteration diverges or would not reach `tol_step` within `max_iter`.
/// The result is polished by Newton steps so the discrete residual meets
/// [`TOL_EL`].
pub fn solve_phi_with(rho: &DensityProfile, params: &Params, opts: &SolveOptions) -> Result<ElSolution> {
    let branch = branch_for(params)?;
    let grid = rho.grid();
    if branch == Branch::Reversible {
        let phi = PotentialProfile::affine(grid, params);
        return Ok(ElSolution {
            rho: rho.clone(),
            slopes: phi.cell_slopes(),
            phi,
            residual: 0.0,
            fixed_point_residual: 0.0,
            iterations: 0,
            newton_iterations: 0,
            branch,
            method: Method::ClosedForm,
        });
    }
    let floor = slope_floor(params);
    let mut phi = match &opts.initial {
        Some(p) if p.grid() == grid && p.is_admissible(params, floor) => p.clone(),
        _ => PotentialProfile::affine(grid, params),
    };

    let omega = opts.damping;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let next = match apply_branch(rho, &phi, params, branch) {
            Ok(k) => k,
            Err(_) => break,
        };
        let step = omega
            * next
                .values()
                .iter()
                .zip(phi.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        if !step.is_finite() {
            break;
        }
        let values = phi
            .values()
            .iter()
            .zip(next.values())
            .map(|(a, b)| (1.0 - omega) * a + omega * b)
            .collect();
        phi = PotentialProfile::new(grid, values)?;
        history.push(step);
        if step <= opts.tol_step {
            converged = true;
            break;
        }
        if opts.newton_fallback && it >= 25 && it % 25 == 0 {
            let rate = (step / history[it - 25]).powf(1.0 / 25.0);
            let projected = if rate < 1.0 {
                it as f64 + (opts.tol_step / step).ln() / rate.ln()
            } else {
                f64::INFINITY
            };
            if projected > (opts.max_iter as f64).min(2000.0) {
                break;
            }
        }
    }

    let method = if converged { Method::FixedPoint } else { Method::Newton };
    if !converged && !opts.newton_fallback {
        return Err(Error::NoConvergence {
            method: "damped fixed-point iteration",
            iterations,
            residual: history.last().copied().unwrap_or(f64::INFINITY),
        });
    }
    let start = if phi.is_admissible(params, floor) {
        phi
    } else {
        PotentialProfile::affine(grid, params)
    };
    let polished = newton(rho, &start, params).and_then(|(values, n)| {
        let phi = PotentialProfile::new(grid, values)?;
        let residual = discrete_el_residual(rho, &phi, params);
        let k = apply_branch(rho, &phi, params, branch)?;
        let fixed_point_residual = crate::numerics::sup_diff(k.values(), phi.values());
        if residual > TOL_EL || fixed_point_residual > TOL_FIXED_POINT {
            return Err(Error::NoConvergence {
                method: "Euler-Lagrange solve",
                iterations: iterations + n,
                residual: residual.max(fixed_point_residual),
            });
        }
        Ok((phi, residual, fixed_point_residual, n))
    });
    match polished {
        Ok((phi, residual, fixed_point_residual, newton_iterations)) => Ok(ElSolution {
            rho: rho.clone(),
            slopes: phi.cell_slopes(),
            phi,
            residual,
            fixed_point_residual,
            iterations,
            newton_iterations,
            branch,
            method,
        }),
        Err(first) => {
            let (phi, slopes, residual, n) = slope_newton(rho, &start, params).map_err(|_| first)?;
            Ok(ElSolution {
                rho: rho.clone(),
                phi,
                slopes,
                residual,
                fixed_point_residual: f64::NAN,
                iterations,
                newton_iterations: n,
                branch,
                method: Method::SlopeNewton,
            })
        }
    }
}

const MAX_SLOPE_NEWTON: usize = 400;

/// Residual of the first-order discrete system with unknowns interleaved as
/// `z = (s_0, phi_1, s_1, ..., phi_{M-2}, s_{M-2})`: even rows
/// `phi_{j+1} - phi_j - h x(s_j)`, odd rows
/// `s_i - s_{i-1} - h (rho_i - 1/(1+e^phi_i))`.
fn first_order_residual(z: &[f64], r: &[f64], h: f64, params: &Params) -> Vec<f64> {
    let e = params.e();
    let m = r.len();
    let phi = |i: usize| {
        if i == 0 {
            params.phi_minus()
        } else if i == m - 1 {
            params.phi_plus()
        } else {
            z[2 * i - 1]
        }
    };
    let mut out = vec![0.0; z.len()];
    for j in 0..m - 1 {
        out[2 * j] = phi(j + 1) - phi(j) - h * s_to_slope(z[2 * j], e);
    }
    for i in 1..m - 1 {
        out[2 * i - 1] = z[2 * i] - z[2 * i - 2] - h * (r[i] - fermi(phi(i)));
    }
    out
}

/// Newton with residual backtracking on the discrete Euler-Lagrange system
/// written in the slope variables. The Jacobian is tridiagonal with a
/// diagonal that vanishes where slopes underflow, hence the pivoted solve.
/// Returns the potential, the cell slopes, the residual and the iteration count.
fn slope_newton(rho: &DensityProfile, start: &PotentialProfile, params: &Params) -> Result<(PotentialProfile, Vec<f64>, f64, usize)> {
    let grid = start.grid();
    let h = grid.spacing();
    let e = params.e();
    let floor = slope_floor(params);
    let r = rho.values();
    let m = grid.len();
    let p = start.values();
    let mut z = vec![0.0; 2 * m - 3];
    for (j, x) in start.cell_slopes().into_iter().enumerate() {
        z[2 * j] = slope_to_s(x.max(floor + 1e-8), e);
    }
    for i in 1..m - 1 {
        z[2 * i - 1] = p[i];
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let mut res = first_order_residual(&z, r, h, params);
    let mut merit = norm(&res);
    for it in 0..MAX_SLOPE_NEWTON {
        let sup = res.iter().fold(0.0f64, |a, v| a.max(v.abs())) / h;
        if sup <= 1e-3 * TOL_EL {
            let mut values = Vec::with_capacity(m);
            values.push(params.phi_minus());
            values.extend((1..m - 1).map(|i| z[2 * i - 1]));
            values.push(params.phi_plus());
            let slopes = (0..m - 1).map(|j| s_to_slope(z[2 * j], e)).collect();
            let residual = (1..m - 1).map(|i| res[2 * i - 1].abs() / h).fold(0.0, f64::max);
            return Ok((PotentialProfile::new(grid, values)?, slopes, residual, it));
        }
        let n = z.len();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for j in 0..m - 1 {
            let x = s_to_slope(z[2 * j], e);
            let row = 2 * j;
            diag[row] = -h * x * (x - e);
            if j >= 1 {
                lower[row] = -1.0;
            }
            if j + 1 < m - 1 {
                upper[row] = 1.0;
            }
        }
        for i in 1..m - 1 {
            let row = 2 * i - 1;
            let f = fermi(z[row]);
            lower[row] = -1.0;
            diag[row] = -h * f * (1.0 - f);
            upper[row] = 1.0;
        }
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let d = crate::numerics::solve_tridiagonal_pivoted(&lower, &diag, &upper, &rhs)?;
        let mut alpha: f64 = 1.0;
        for j in 0..m - 1 {
            let ds = d[2 * j];
            if ds > 0.0 {
                alpha = alpha.min(0.9 * -z[2 * j] / ds);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let tres = first_order_residual(&trial, r, h, params);
            let tm = norm(&tres);
            if tm.is_finite() && tm <= (1.0 - 1e-4 * alpha) * merit {
                z = trial;
                res = tres;
                merit = tm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { method: "slope-variable Newton", iterations: it, residual: sup });
        }
    }
    Err(Error::NoConvergence { method: "slope-variable Newton", iterations: MAX_SLOPE_NEWTON, residual: merit.sqrt() / h })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootingSolution {
    pub phi: PotentialProfile,
    /// Converged initial slope `phi'(-1)`.
    pub slope_left: f64,
    pub bisection_steps: usize,
    /// `|phi(1) - phi_+|` at the returned slope.
    pub endpoint_error: f64,
}

/// Integrates the first-order system `phi' = x(s)`, `s' = rho - 1/(1+e^phi)`
/// from `u = -1` with RK4. Returns the potential at the grid nodes, or `None`
/// when the slope blows up (`s >= 0`), which counts as overshooting.
fn shoot<F: Fn(f64) -> f64>(rho: &F, grid: &Grid, params: &Params, slope0: f64) -> Option<Vec<f64>> {
    let e = params.e();
    let h = grid.spacing();
    let mut phi = params.phi_minus();
    let mut s = slope_to_s(slope0, e);
    let mut out = Vec::with_capacity(grid.len());
    out.push(phi);
    let target = params.phi_plus();
    let rhs = |u: f64, phi: f64, s: f64| -> Option<(f64, f64)> {
        if s >= 0.0 || !s.is_finite() {
            return None;
        }
        Some((s_to_slope(s, e), rho(u) - fermi(phi)))
    };
    for i in 0..grid.len() - 1 {
        let u0 = grid.node(i);
        let x_now = s_to_slope(s, e);
        let n_sub = ((h * (x_now + e.abs() + 1.0) / 0.01).ceil() as usize).clamp(2, 100_000);
        let dt = h / n_sub as f64;
        for k in 0..n_sub {
            let u = u0 + k as f64 * dt;
            let (a1, b1) = rhs(u, phi, s)?;
            let (a2, b2) = rhs(u + 0.5 * dt, phi + 0.5 * dt * a1, s + 0.5 * dt * b1)?;
            let (a3, b3) = rhs(u + 0.5 * dt, phi + 0.5 * dt * a2, s + 0.5 * dt * b2)?;
            let (a4, b4) = rhs(u + dt, phi + dt * a3, s + dt * b3)?;
            phi += dt * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0;
            s += dt * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0;
        }
        if phi > target + 50.0 {
            return None;
        }
        out.push(phi);
    }
    Some(out)
}

/// Shooting solution of the Euler-Lagrange problem for a density given as a
/// function of `u`; bisection on `log(phi'(-1) - max(0, E))`. `bracket`
/// optionally fixes the initial slope interval.
pub fn shooting_oracle_fn<F: Fn(f64) -> f64>(
    rho: F,
    grid: Grid,
    params: &Params,
    bracket: Option<(f64, f64)>,
) -> Result<ShootingSolution> {
    params.require_subcritical()?;
    let floor = slope_floor(params);
    let target = params.phi_plus();
    let miss = |t: f64| -> f64 {
        match shoot(&rho, &grid, params, floor + t.exp()) {
            Some(v) => v[v.len() - 1] - target,
            None => f64::INFINITY,
        }
    };
    let (mut lo, mut hi) = match bracket {
        Some((a, b)) => ((a - floor).ln(), (b - floor).ln()),
        None => ((1e-3f64).ln(), (1.0 + params.e().abs() + params.e0()).ln()),
    };
    let mut expand = 0;
    while miss(lo) >= 0.0 {
        lo -= 2.0;
        expand += 1;
        if expand > 40 {
            return Err(Error::BracketNotFound("shooting undershoot not found".into()));
        }
    }
    while miss(hi) < 0.0 {
        hi += 1.0;
        expand += 1;
        if expand > 80 {
            return Err(Error::BracketNotFound("shooting overshoot not found".into()));
        }
    }
    let mut steps = 0;
    while hi - lo > 1e-15 * hi.abs().max(1.0) && steps < 200 {
        let mid = 0.5 * (lo + hi);
        if miss(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    let slope_left = floor + lo.exp();
    let mut values = shoot(&rho, &grid, params, slope_left)
        .ok_or(Error::NoConvergence { method: "shooting", iterations: steps, residual: f64::INFINITY })?;
    let n = values.len();
    let endpoint_error = (values[n - 1] - target).abs();
    values[n - 1] = target;
    Ok(ShootingSolution { phi: PotentialProfile::new(grid, values)?, slope_left, bisection_steps: steps, endpoint_error })
}

/// Shooting oracle for a grid density, interpolated linearly between nodes.
pub fn shooting_oracle(rho: &DensityProfile, params: &Params) -> Result<ShootingSolution> {
    shooting_oracle_fn(|u| rho.at(u), rho.grid(), params, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct Sensitivity {
    /// Derivative of `Phi` in the direction `drho`; zero at the endpoints.
    pub psi: Vec<f64>,
    /// `<grad psi, grad psi> / <drho, drho>`.
    pub h1_ratio: f64,
    /// `C'' = (2 max phi'(phi' - E) / pi)^2`, bounding `h1_ratio`.
    pub h1_constant: f64,
}

/// Solves the linearized problem
/// `(psi'/(phi'(phi' - E)))' - e^phi/(1+e^phi)^2 psi = drho`, `psi(+-1) = 0`,
/// discretized consistently with the nonlinear solve.
pub fn linearized_sensitivity(solution: &ElSolution, drho: &[f64], params: &Params) -> Result<Sensitivity> {
    let grid = solution.phi.grid();
    if drho.len() != grid.len() {
        return Err(Error::GridMismatch("direction has the wrong length".into()));
    }
    let h = grid.spacing();
    let e = params.e();
    let p = solution.phi.values();
    let x = solution.phi.cell_slopes();
    let a: Vec<f64> = x.iter().map(|&v| s_prime(v, e)).collect();
    let n = grid.len();
    let m = n - 2;
    let h2 = h * h;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        diag[k] = -(a[i] + a[i - 1]) / h2 - logistic_prime(p[i]);
        if k > 0 {
            lower[k] = a[i - 1] / h2;
        }
        if k + 1 < m {
            upper[k] = a[i] / h2;
        }
        rhs[k] = drho[i];
    }
    let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut psi = vec![0.0; n];
    psi[1..n - 1].copy_from_slice(&inner);

    let grad_sq: f64 = psi.windows(2).map(|w| (w[1] - w[0]).powi(2) / h).sum();
    let rho_sq = crate::grid::inner(drho, drho, &grid);
    let weight_max = x.iter().map(|&v| v * (v - e)).fold(0.0, f64::max);
    let h1_constant = (2.0 * weight_max / std::f64::consts::PI).powi(2);
    Ok(Sensitivity {
        psi,
        h1_ratio: if rho_sq > 0.0 { grad_sq / rho_sq } else { 0.0 },
        h1_constant,
    })
}
