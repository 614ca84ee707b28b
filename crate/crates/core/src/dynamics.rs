//! Hydrodynamics: the viscous Burgers equation
//! `d_t rho + (E/2) (chi(rho))' = rho''/2`, `rho(+-1) = rho_+-`, and the
//! optimal fluctuation path obtained from it through `psi = logit F`.
//!
//! The solver works in advection form `d_t rho = rho''/2 - (E/2) chi'(rho) rho'`
//! with the drift coefficient frozen at the old time level. Each step is one
//! tridiagonal solve whose matrix has unit row sums and, while the cell Peclet
//! number `h |E| / 2` stays below one, non-positive off-diagonal entries. The
//! update is then a convex combination of old values and boundary data, which
//! is the discrete maximum principle.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::elgp::{self, density_for_potential, slope_floor};
use crate::error::{Error, Result};
use crate::grid::{derivative, second_derivative, DensityProfile, Grid, Params, PotentialProfile, SpacetimePath};
use crate::numerics::{chi, logistic, sup_diff};
use crate::stationary::StationaryState;

/// When to keep snapshots of the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Schedule {
    /// Every `n`-th time step.
    Every(usize),
    /// Spacing `first` at `t = 0`, growing by `growth` per snapshot up to `max`.
    Graded { first: f64, max: f64, growth: f64 },
}

impl Schedule {
    fn times(&self, dt: f64, horizon: f64) -> Vec<f64> {
        match *self {
            Schedule::Every(n) => {
                let step = dt * n.max(1) as f64;
                let k = (horizon / step).floor() as usize;
                (0..=k).map(|i| i as f64 * step).collect()
            }
            Schedule::Graded { first, max, growth } => {
                let mut out = vec![0.0];
                let mut gap = first.max(dt);
                let mut t = 0.0;
                while t + gap < horizon {
                    t += gap;
                    out.push(t);
                    gap = (gap * growth).min(max.max(dt));
                }
                out
            }
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Graded { first: 1e-3, max: 0.02, growth: 1.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeConfig {
    pub grid: Grid,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub theta: f64,
    pub schedule: Schedule,
}

impl PdeConfig {
    /// Fully implicit diffusion with `dt = h^2`.
    pub fn new(grid: Grid, horizon: f64) -> Self {
        Self { grid, dt: grid.spacing().powi(2), horizon, theta: 1.0, schedule: Schedule::default() }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParams(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        Ok(())
    }

    /// Conditions under which the scheme loses the maximum principle.
    pub fn stability_warnings(&self, params: &Params) -> Vec<String> {
        let h = self.grid.spacing();
        let mut out = Vec::new();
        let peclet = 0.5 * params.e().abs() * h;
        if peclet > 1.0 {
            out.push(format!("cell Peclet number {peclet:.3} exceeds 1; refine the grid"));
        }
        let explicit = (1.0 - self.theta) * self.dt / (h * h);
        if explicit > 1.0 {
            out.push(format!("explicit diffusion number {explicit:.3} exceeds 1"));
        }
        if params.e() != 0.0 && self.dt > 4.0 / params.e().powi(2) {
            out.push(format!("dt = {:.3e} exceeds the drift time scale 4/E^2", self.dt));
        }
        out
    }
}

/// Thomas solve with caller-provided scratch; the matrix is diagonally dominant.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}

/// Solves the viscous Burgers equation from `gamma` and returns the
/// snapshots selected by the schedule (always including `t = 0` and `t = T`).
pub fn burgers_solve(gamma: &DensityProfile, params: &Params, cfg: &PdeConfig) -> Result<SpacetimePath> {
    cfg.validate()?;
    if gamma.grid() != cfg.grid {
        return Err(Error::GridMismatch("initial profile is not on the PDE grid".into()));
    }
    for w in cfg.stability_warnings(params) {
        warn!("{w}");
    }
    let grid = cfg.grid;
    let n = grid.len();
    let m = n - 2;
    let h = grid.spacing();
    let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let dt = cfg.horizon / steps as f64;
    let theta = cfg.theta;
    let half_e = 0.5 * params.e();

    let targets = cfg.schedule.times(dt, cfg.horizon);
    let mut next_target = 1;
    let mut times = vec![0.0];
    let mut profiles = vec![gamma.clone()];

    let mut cur = gamma.values().to_vec();
    let mut nxt = vec![0.0; n];
    let (mut lower, mut diag, mut upper, mut rhs, mut scratch) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let diff = 0.5 / (h * h);
    for step in 1..=steps {
        for k in 0..m {
            let i = k + 1;
            let b = half_e * (1.0 - 2.0 * cur[i]);
            let a = diff + b / (2.0 * h);
            let c = diff - b / (2.0 * h);
            let explicit = a * cur[i - 1] - 2.0 * diff * cur[i] + c * cur[i + 1];
            lower[k] = -dt * theta * a;
            upper[k] = -dt * theta * c;
            diag[k] = 1.0 + dt * theta * 2.0 * diff;
            rhs[k] = cur[i] + dt * (1.0 - theta) * explicit;
            if k == 0 {
                rhs[k] += dt * theta * a * params.rho_minus();
            }
            if k == m - 1 {
                rhs[k] += dt * theta * c * params.rho_plus();
            }
        }
        thomas(&lower, &diag, &upper, &mut rhs, &mut scratch);
        nxt[0] = params.rho_minus();
        nxt[n - 1] = params.rho_plus();
        nxt[1..n - 1].copy_from_slice(&rhs);
        std::mem::swap(&mut cur, &mut nxt);

        let t = step as f64 * dt;
        let due = next_target < targets.len() && t >= targets[next_target] - 0.5 * dt;
        if due || step == steps {
            while next_target < targets.len() && targets[next_target] <= t + 0.5 * dt {
                next_target += 1;
            }
            // rounding may push a value a hair outside [0, 1]
            let vals: Vec<f64> = cur.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            times.push(t);
            profiles.push(DensityProfile::new(grid, vals)?);
        }
    }
    SpacetimePath::new(times, profiles)
}

/// `sup |f - g| + sup |f' - g'|` with second-order difference stencils.
pub fn c1_distance(a: &DensityProfile, b: &DensityProfile) -> f64 {
    let grid = a.grid();
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let d = derivative(&diff, &grid);
    diff.iter().fold(0.0f64, |s, v| s.max(v.abs())) + d.iter().fold(0.0f64, |s, v| s.max(v.abs()))
}

/// Output of [`adjoint_path`].
#[derive(Debug, Clone, Serialize)]
pub struct AdjointPath {
    /// Burgers solution `F` started from `logistic(Phi(gamma))`.
    pub forward: SpacetimePath,
    /// `psi_t = logit F_t` at the stored times.
    pub psi: Vec<PotentialProfile>,
    /// The relaxation path `rho*_t`.
    pub rho_star: SpacetimePath,
    /// `sup |rho*_0 - gamma|`.
    pub initial_error: f64,
    /// Largest deviation of the one-sided boundary formula from `rho_+-`.
    pub boundary_defect: f64,
    /// `min (psi' - max(0, E))` over cells and stored times.
    pub slope_margin: f64,
}

/// Tolerance on `|rho*_0 - gamma|`.
pub const TOL_INITIAL: f64 = 1e-4;

fn in_m0(rho: &DensityProfile, params: &Params) -> Result<()> {
    if !rho.matches_reservoirs(params, 1e-9) {
        return Err(Error::Domain("profile does not take the reservoir values at the endpoints".into()));
    }
    if rho.values().iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::Domain("profile touches 0 or 1".into()));
    }
    Ok(())
}

/// Builds `rho*_t` from the Burgers solution started at `logistic(Phi(gamma))`.
pub fn adjoint_path(gamma: &DensityProfile, params: &Params, cfg: &PdeConfig) -> Result<AdjointPath> {
    params.require_subcritical()?;
    if params.is_reversible() {
        return Err(Error::InvalidParams("the adjoint path needs E < E0".into()));
    }
    in_m0(gamma, params)?;
    let grid = cfg.grid;
    if gamma.grid() != grid {
        return Err(Error::GridMismatch("initial profile is not on the PDE grid".into()));
    }
    let phi = elgp::solve_phi(gamma, params)?.phi;
    let f0: Vec<f64> = phi.values().iter().map(|&p| logistic(p)).collect();
    let forward = burgers_solve(&DensityProfile::new(grid, f0)?, params, cfg)?;
    let floor = slope_floor(params);
    let n = grid.len();

    let built: Vec<Result<(PotentialProfile, DensityProfile, f64, f64)>> = forward
        .times()
        .par_iter()
        .zip(forward.profiles())
        .map(|(&t, f)| {
            let mut psi: Vec<f64> = f.values().iter().map(|&v| (v / (1.0 - v)).ln()).collect();
            psi[0] = params.phi_minus();
            psi[n - 1] = params.phi_plus();
            let psi = PotentialProfile::new(grid, psi)?;
            let slopes = psi.cell_slopes();
            let (node, margin) = slopes
                .iter()
                .enumerate()
                .map(|(j, x)| (j, x - floor))
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
            if !(margin > 0.0) {
                return Err(Error::MonotonicityLoss { time: Some(t), node });
            }
            let mut rho = density_for_potential(&psi, params)?;
            let defect = (rho[0] - params.rho_minus()).abs().max((rho[n - 1] - params.rho_plus()).abs());
            rho[0] = params.rho_minus();
            rho[n - 1] = params.rho_plus();
            if let Some(i) = rho.iter().position(|&r| !(r > 0.0 && r < 1.0)) {
                return Err(Error::Consistency(format!("rho* = {} at t = {t:.4}, node {i}", rho[i])));
            }
            Ok((psi, DensityProfile::new(grid, rho)?, defect, margin))
        })
        .collect();

    let mut psi = Vec::with_capacity(built.len());
    let mut profiles = Vec::with_capacity(built.len());
    let (mut boundary_defect, mut slope_margin) = (0.0f64, f64::INFINITY);
    for b in built {
        let (p, r, d, mg) = b?;
        psi.push(p);
        profiles.push(r);
        boundary_defect = boundary_defect.max(d);
        slope_margin = slope_margin.min(mg);
    }
    let rho_star = SpacetimePath::new(forward.times().to_vec(), profiles)?;
    let initial_error = rho_star.first().sup_distance(gamma);
    if initial_error > TOL_INITIAL {
        return Err(Error::Consistency(format!("rho*_0 misses gamma by {initial_error:.3e}")));
    }
    Ok(AdjointPath { forward, psi, rho_star, initial_error, boundary_defect, slope_margin })
}

/// `sup_t |Phi(rho*_t) - psi_t|` over the stored times, with `Phi` recomputed
/// from scratch by the Euler-Lagrange solver.
pub fn nonlocal_identity_defect(adjoint: &AdjointPath, params: &Params) -> Result<f64> {
    let errs: Vec<Result<f64>> = adjoint
        .rho_star
        .profiles()
        .par_iter()
        .zip(&adjoint.psi)
        .map(|(rho, psi)| Ok(sup_diff(elgp::solve_phi(rho, params)?.phi.values(), psi.values())))
        .collect();
    errs.into_iter().try_fold(0.0f64, |acc, e| Ok(acc.max(e?)))
}

/// Residual report of a space-time PDE check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PdeResidual {
    pub sup: f64,
    pub rms: f64,
    /// Time and node of the largest residual.
    pub time: f64,
    pub node: usize,
}

/// Three-point time derivative on a non-uniform time grid; one-sided at the
/// first and last times.
pub fn time_derivative(times: &[f64], values: &[&[f64]]) -> Vec<Vec<f64>> {
    let k = times.len();
    let n = values[0].len();
    let mut out = vec![vec![0.0; n]; k];
    if k < 2 {
        return out;
    }
    if k == 2 {
        let dt = times[1] - times[0];
        let d: Vec<f64> = (0..n).map(|i| (values[1][i] - values[0][i]) / dt).collect();
        return vec![d.clone(), d];
    }
    // Lagrange weights of the derivative at `times[at]` for nodes a, b, c.
    let weights = |at: f64, a: f64, b: f64, c: f64| {
        (
            (2.0 * at - b - c) / ((a - b) * (a - c)),
            (2.0 * at - a - c) / ((b - a) * (b - c)),
            (2.0 * at - a - b) / ((c - a) * (c - b)),
        )
    };
    for (j, row) in out.iter_mut().enumerate() {
        let c = j.clamp(1, k - 2);
        let (wa, wb, wc) = weights(times[j], times[c - 1], times[c], times[c + 1]);
        for (i, v) in row.iter_mut().enumerate() {
            *v = wa * values[c - 1][i] + wb * values[c][i] + wc * values[c + 1][i];
        }
    }
    out
}

fn residual_report(times: &[f64], res: &[Vec<f64>], skip_ends: bool) -> PdeResidual {
    let mut rep = PdeResidual { sup: 0.0, rms: 0.0, time: 0.0, node: 0 };
    let mut count = 0usize;
    let k = res.len();
    let range = if skip_ends && k > 2 { 1..k - 1 } else { 0..k };
    for j in range {
        for (i, r) in res[j].iter().enumerate() {
            rep.rms += r * r;
            count += 1;
            if r.abs() > rep.sup {
                rep.sup = r.abs();
                rep.time = times[j];
                rep.node = i;
            }
        }
    }
    rep.rms = (rep.rms / count.max(1) as f64).sqrt();
    rep
}

/// Residual of `d_t psi = psi''/2 + ((1 - e^psi)/(1 + e^psi)) psi' (psi' - E)/2`
/// at interior nodes and interior stored times.
pub fn transformed_pde_check(times: &[f64], psi: &[PotentialProfile], params: &Params) -> Result<PdeResidual> {
    if times.len() != psi.len() || psi.is_empty() {
        return Err(Error::Domain(format!("{} times for {} potentials", times.len(), psi.len())));
    }
    let grid = psi[0].grid();
    let e = params.e();
    let vals: Vec<&[f64]> = psi.iter().map(|p| p.values()).collect();
    let dt = time_derivative(times, &vals);
    let res: Vec<Vec<f64>> = psi
        .iter()
        .zip(&dt)
        .map(|(p, d)| {
            let v = p.values();
            let d1 = derivative(v, &grid);
            let d2 = second_derivative(v, &grid);
            (1..grid.len() - 1)
                .map(|i| {
                    let tanh = -(0.5 * v[i]).tanh();
                    d[i] - 0.5 * d2[i] - 0.5 * tanh * d1[i] * (d1[i] - e)
                })
                .collect()
        })
        .collect();
    Ok(residual_report(times, &res, true))
}

/// Residual of the adjoint hydrodynamics
/// `d_t rho* - (E/2) chi(rho*)' = rho*''/2 - (chi(rho*) psi')'` along the path,
/// at interior nodes and interior stored times.
pub fn adjoint_equation_residual(adjoint: &AdjointPath, params: &Params) -> Result<PdeResidual> {
    let path = &adjoint.rho_star;
    let grid = path.grid();
    let h = grid.spacing();
    let e = params.e();
    let vals: Vec<&[f64]> = path.profiles().iter().map(|p| p.values()).collect();
    let dt = time_derivative(path.times(), &vals);
    let res: Vec<Vec<f64>> = path
        .profiles()
        .iter()
        .zip(&adjoint.psi)
        .zip(&dt)
        .map(|((r, psi), d)| {
            let r = r.values();
            let p = psi.values();
            let c: Vec<f64> = r.iter().map(|&v| chi(v)).collect();
            (1..grid.len() - 1)
                .map(|i| {
                    let dchi = (c[i + 1] - c[i - 1]) / (2.0 * h);
                    let lap = (r[i + 1] - 2.0 * r[i] + r[i - 1]) / (h * h);
                    let flux_r = 0.5 * (c[i] + c[i + 1]) * (p[i + 1] - p[i]) / h;
                    let flux_l = 0.5 * (c[i - 1] + c[i]) * (p[i] - p[i - 1]) / h;
                    d[i] - 0.5 * e * dchi - 0.5 * lap + (flux_r - flux_l) / h
                })
                .collect()
        })
        .collect();
    Ok(residual_report(path.times(), &res, true))
}

/// Replaces a profile in `M` by one in `M_0`: values clipped to
/// `[delta, 1 - delta]` and the endpoint mismatch blended away over a layer of
/// width `width`. Returns the profile and the sup-norm change.
pub fn mollify(rho: &DensityProfile, params: &Params, delta: f64, width: f64) -> Result<(DensityProfile, f64)> {
    if !(delta > 0.0 && delta < 0.5) || !(width > 0.0) {
        return Err(Error::InvalidParams(format!("mollifier needs delta in (0, 1/2) and width > 0, got {delta}, {width}")));
    }
    let grid = rho.grid();
    let v = rho.values();
    let n = v.len();
    let lo = (params.rho_minus() - v[0].clamp(delta, 1.0 - delta), params.rho_plus() - v[n - 1].clamp(delta, 1.0 - delta));
    let bump = |s: f64| if s >= 1.0 { 0.0 } else { (1.0 - s).powi(2) };
    let out: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let u = grid.node(i);
            let base = r.clamp(delta, 1.0 - delta);
            (base + lo.0 * bump((u + 1.0) / width) + lo.1 * bump((1.0 - u) / width)).clamp(delta, 1.0 - delta)
        })
        .collect();
    let mut out = out;
    out[0] = params.rho_minus();
    out[n - 1] = params.rho_plus();
    let prof = DensityProfile::new(grid, out)?;
    let err = prof.sup_distance(rho);
    Ok((prof, err))
}

/// Constant of the joining bound `I(straight path) <= C ||rho - rho_bar||_{C^1}^2`
/// for the unit-time straight path between two profiles.
pub fn joining_constant(params: &Params, from: &DensityProfile, to: &DensityProfile) -> f64 {
    let k = 0.5 + 0.5 * params.e().abs() + 2.0;
    let chi_min = from
        .values()
        .iter()
        .zip(to.values())
        .map(|(a, b)| chi(*a).min(chi(*b)))
        .fold(f64::INFINITY, f64::min);
    4.0 * k * k / chi_min
}

/// Straight path `rho_bar + t (rho - rho_bar)` on `[0, 1]` with `steps + 1` snapshots.
pub fn straight_path(from: &DensityProfile, to: &DensityProfile, steps: usize) -> Result<SpacetimePath> {
    let steps = steps.max(1);
    let grid = from.grid();
    let mut times = Vec::with_capacity(steps + 1);
    let mut profiles = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let vals = from.values().iter().zip(to.values()).map(|(a, b)| a + t * (b - a)).collect();
        times.push(t);
        profiles.push(DensityProfile::new(grid, vals)?);
    }
    SpacetimePath::new(times, profiles)
}

/// The constructed optimal path and its ingredients.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalPath {
    /// Joining segment on `[0, 1]` followed by the reversed relaxation on `[1, 1 + T]`.
    pub path: SpacetimePath,
    /// Number of snapshots in the joining segment.
    pub join_len: usize,
    /// Profile at which the two segments meet, `rho*_T`.
    pub junction: DensityProfile,
    /// The `M_0` representative actually used as target.
    pub target: DensityProfile,
    pub mollification_error: f64,
    pub adjoint: AdjointPath,
    pub stationary: DensityProfile,
}

impl OptimalPath {
    pub fn joining_segment(&self) -> Result<SpacetimePath> {
        self.path.slice(0..self.join_len)
    }
    pub fn reversed_segment(&self) -> Result<SpacetimePath> {
        self.path.slice(self.join_len - 1..self.path.len())
    }
}

/// Joining snapshots used on the unit-time straight segment.
pub const JOIN_STEPS: usize = 50;

/// Optimal path ending at `rho`; profiles outside `M_0` are first mollified.
pub fn optimal_path(rho: &DensityProfile, params: &Params, cfg: &PdeConfig) -> Result<OptimalPath> {
    let (target, mollification_error) = if in_m0(rho, params).is_ok() {
        (rho.clone(), 0.0)
    } else {
        mollify(rho, params, 1e-3, 0.05)?
    };
    let adjoint = adjoint_path(&target, params, cfg)?;
    let stationary = StationaryState::solve(params, cfg.grid)?.rho_bar;
    let junction = adjoint.rho_star.last().clone();
    let join = straight_path(&stationary, &junction, JOIN_STEPS)?;
    let tail = adjoint.rho_star.reversed().shifted(1.0);
    let path = join.concat(&tail)?;
    Ok(OptimalPath {
        path,
        join_len: JOIN_STEPS + 1,
        junction,
        target,
        mollification_error,
        adjoint,
        stationary,
    })
}
