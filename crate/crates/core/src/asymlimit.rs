//! The strongly asymmetric limit `E -> -inf`: `S_E -> S_a` pointwise,
//! `A_E - log(-E) -> A_a`, and convergence of `Phi(rho)` to the maximizer of
//! `G_a(rho, .)` in the weak topology of non-decreasing functions.
//!
//! Boundary layers of `Phi(rho)` have width of order `1/|E|`, so every sweep
//! row uses its own grid with `M = max(401, 20 |E| + 1)` nodes.

use rayon::prelude::*;
use serde::Serialize;

use crate::elgp;
use crate::error::{Error, Result};
use crate::functionals::{asymmetric_maximizer, g_a, s_a, QuasiPotential};
use crate::grid::{DensityProfile, Grid, Params, PotentialProfile, DEFAULT_NODES};
use crate::numerics::{slope_integrand, stable_sum};
use crate::stationary::asymmetric_constants;

/// Grid used for field `e` in sweeps.
pub fn grid_for(e: f64) -> Grid {
    let m = DEFAULT_NODES.max((20.0 * e.abs()).ceil() as usize + 1);
    Grid::new(m).expect("at least three nodes")
}

fn check_sweep(e_list: &[f64]) -> Result<()> {
    if e_list.is_empty() || e_list.iter().any(|&e| !(e < 0.0)) {
        return Err(Error::InvalidParams("sweep fields must be negative".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub s_e: f64,
    pub s_a: f64,
    /// `S_E(rho) - S_a(rho)`.
    pub gap: f64,
    /// `A_E - log(-E) - A_a`.
    pub constant_gap: f64,
    /// Solver failure for this row, if any.
    pub error: Option<String>,
}

fn sweep_row(rho: &DensityProfile, base: &Params, e: f64) -> SweepRow {
    let grid = grid_for(e);
    let params = base.with_field(e);
    let (_, a_a) = asymmetric_constants(&params);
    let mut row = SweepRow { e, m: grid.len(), s_e: f64::NAN, s_a: f64::NAN, gap: f64::NAN, constant_gap: f64::NAN, error: None };
    let r = rho.resample(grid);
    let res = (|| -> Result<()> {
        let qp = QuasiPotential::new(&params, grid)?;
        let a_e = qp.stationary().a_e.ok_or_else(|| Error::InvalidParams("no A_E for this field".into()))?;
        row.constant_gap = a_e - (-e).ln() - a_a;
        row.s_e = qp.value(&r)?.value;
        row.s_a = s_a(&r, &params)?.value;
        row.gap = row.s_e - row.s_a;
        Ok(())
    })();
    if let Err(err) = res {
        row.error = Some(err.to_string());
    }
    row
}

/// `(E, S_E(rho), S_a(rho), gap)` rows; rows that fail carry the error and
/// the sweep continues.
pub fn gamma_limit_sweep(rho: &DensityProfile, base: &Params, e_list: &[f64]) -> Result<Vec<SweepRow>> {
    check_sweep(e_list)?;
    Ok(e_list.par_iter().map(|&e| sweep_row(rho, base, e)).collect())
}

/// A test function of the weak topology: continuous on `[-1, 1]`, zero at `u = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunction {
    /// `(1 - u) u^k`.
    Polynomial(i32),
    /// `(1 - ((u - c)/r)^2)^2` on `|u - c| < r`.
    Bump { center: f64, radius: f64 },
}

impl TestFunction {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            TestFunction::Polynomial(k) => (1.0 - u) * u.powi(k),
            TestFunction::Bump { center, radius } => {
                let s = (u - center) / radius;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - s * s).powi(2)
                }
            }
        }
    }
}

/// The fixed twelve-function family probing the weak topology.
pub fn test_family() -> Vec<TestFunction> {
    let mut out: Vec<TestFunction> = (0..6).map(TestFunction::Polynomial).collect();
    for c in [-0.75, -0.45, -0.15, 0.15, 0.45, 0.75] {
        out.push(TestFunction::Bump { center: c, radius: 0.25 });
    }
    out
}

/// Stieltjes sum `int G dphi` over `[-1, 1)`, counting the jump from `phi_-`
/// to `phi(-1)` at the left end (the closure allows `phi(-1) > phi_-`).
pub fn stieltjes(g: &TestFunction, phi: &PotentialProfile, params: &Params) -> f64 {
    let grid = phi.grid();
    let v = phi.values();
    let mids = grid.midpoints();
    let inner: f64 = v.windows(2).zip(&mids).map(|(w, &m)| g.eval(m) * (w[1] - w[0])).sum();
    inner + g.eval(-1.0) * (v[0] - params.phi_minus())
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximizerRow {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "M")]
    pub m: usize,
    /// `max_G |int G dphi_E - int G dphi|` over the test family.
    pub weak_distance: f64,
    /// `max |phi_E - phi|` over nodes with `|u| <= 0.9` where `phi` has no jump.
    pub pointwise: f64,
    /// Width of the rightmost interval on which `|phi_E - phi| > 0.1`.
    pub layer_width: f64,
    /// [`jensen_term`] of `Phi(rho)`.
    pub jensen: f64,
    pub error: Option<String>,
}

/// Nodes next to which the monotone maximizer jumps by more than `jump`.
fn near_jump(phi: &[f64], i: usize, jump: f64) -> bool {
    let left = i > 0 && (phi[i] - phi[i - 1]).abs() > jump;
    let right = i + 1 < phi.len() && (phi[i + 1] - phi[i]).abs() > jump;
    left || right
}

fn maximizer_row(rho: &DensityProfile, base: &Params, e: f64) -> MaximizerRow {
    let grid = grid_for(e);
    let params = base.with_field(e);
    let mut row = MaximizerRow { e, m: grid.len(), weak_distance: f64::NAN, pointwise: f64::NAN, layer_width: f64::NAN, jensen: f64::NAN, error: None };
    let r = rho.resample(grid);
    match elgp::solve_phi(&r, &params) {
        Ok(sol) => {
            match jensen_term(&sol.slopes, grid, &params) {
                Ok(v) => row.jensen = v,
                Err(err) => row.error = Some(err.to_string()),
            }
            let phi_e = sol.phi;
            let phi = asymmetric_maximizer(&r, &params);
            row.weak_distance = test_family()
                .iter()
                .map(|g| (stieltjes(g, &phi_e, &params) - stieltjes(g, &phi, &params)).abs())
                .fold(0.0, f64::max);
            let (a, b) = (phi_e.values(), phi.values());
            let h = grid.spacing();
            row.pointwise = (0..grid.len())
                .filter(|&i| grid.node(i).abs() <= 0.9 && !near_jump(b, i, 10.0 * h))
                .map(|i| (a[i] - b[i]).abs())
                .fold(0.0, f64::max);
            let last_ok = (0..grid.len()).rev().find(|&i| (a[i] - b[i]).abs() <= 0.1);
            row.layer_width = match last_ok {
                Some(i) => 1.0 - grid.node(i),
                None => 2.0,
            };
        }
        Err(err) => row.error = Some(err.to_string()),
    }
    row
}

/// Convergence of `Phi(rho)` at field `E` to the asymmetric maximizer.
pub fn maximizer_convergence(rho: &DensityProfile, base: &Params, e_list: &[f64]) -> Result<Vec<MaximizerRow>> {
    check_sweep(e_list)?;
    Ok(e_list.par_iter().map(|&e| maximizer_row(rho, base, e)).collect())
}

/// `int { F_E(phi') - (A_E - A_a) } du` with `F_E(x) = [x log x - (x - E) log(x - E)]/E`.
/// Non-positive in the limit for the maximizers `Phi(rho)`, and tending to
/// zero for a fixed smooth increasing `phi`.
pub fn jensen_term(slopes: &[f64], grid: Grid, params: &Params) -> Result<f64> {
    let e = params.e();
    if !(e < 0.0) {
        return Err(Error::InvalidParams("the Jensen term needs E < 0".into()));
    }
    let a_e = crate::stationary::StationaryState::solve(params, grid)?
        .a_e
        .ok_or_else(|| Error::InvalidParams("no A_E for this field".into()))?;
    let (_, a_a) = asymmetric_constants(params);
    if slopes.len() + 1 != grid.len() || slopes.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("the Jensen term needs one non-negative slope per cell".into()));
    }
    let h = grid.spacing();
    let total = stable_sum(slopes.iter().map(|&v| h * slope_integrand(v, e)));
    Ok(total - 2.0 * (a_e - a_a))
}

#[derive(Debug, Clone, Serialize)]
pub struct LiminfRow {
    #[serde(rename = "E")]
    pub e: f64,
    pub s_e: f64,
    /// `G_E(rho, phi)` for the fixed trial potential; `S_E >= G_E` by maximality.
    pub g_e: f64,
    /// `G_a(rho, phi)` for the fixed trial potential.
    pub g_a: f64,
    /// The Jensen term of the trial potential.
    pub jensen: f64,
}

/// `S_E(rho)` against `G_a(rho, phi)` for a fixed smooth increasing trial `phi`
/// given as a function of `u`. `G_E(rho, phi) - G_a(rho, phi)` is the Jensen
/// term of `phi` up to the grid normalization of `A_E`.
pub fn liminf_check<F: Fn(f64) -> f64 + Sync>(rho: &DensityProfile, trial: F, base: &Params, e_list: &[f64]) -> Result<Vec<LiminfRow>> {
    check_sweep(e_list)?;
    e_list
        .par_iter()
        .map(|&e| {
            let grid = grid_for(e);
            let params = base.with_field(e);
            let r = rho.resample(grid);
            let phi = PotentialProfile::new(grid, grid.sample(&trial))?;
            let qp = QuasiPotential::new(&params, grid)?;
            Ok(LiminfRow {
                e,
                s_e: qp.value(&r)?.value,
                g_e: qp.trial(&r, &phi)?,
                g_a: g_a(&r, &phi, &params)?,
                jensen: jensen_term(&phi.cell_slopes(), grid, &params)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InfRow {
    #[serde(rename = "E")]
    pub e: f64,
    pub inf_s_e: f64,
    pub inf_s_a: f64,
}

/// `min_i S_E(rho_i)` and `min_i S_a(rho_i)` over a finite family.
pub fn inf_exchange(family: &[DensityProfile], base: &Params, e_list: &[f64]) -> Result<Vec<InfRow>> {
    check_sweep(e_list)?;
    e_list
        .iter()
        .map(|&e| {
            let rows: Vec<SweepRow> = family.par_iter().map(|r| sweep_row(r, base, e)).collect();
            if let Some(err) = rows.iter().find_map(|r| r.error.clone()) {
                return Err(Error::Consistency(format!("sweep row at E = {e} failed: {err}")));
            }
            Ok(InfRow {
                e,
                inf_s_e: rows.iter().map(|r| r.s_e).fold(f64::INFINITY, f64::min),
                inf_s_a: rows.iter().map(|r| r.s_a).fold(f64::INFINITY, f64::min),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_scale_with_field() {
        assert_eq!(grid_for(-3.0).len(), 401);
        assert_eq!(grid_for(-300.0).len(), 6001);
    }

    #[test]
    fn family_vanishes_at_right_end() {
        let fam = test_family();
        assert_eq!(fam.len(), 12);
        for g in fam {
            assert!(g.eval(1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stieltjes_of_affine_potential() {
        let p = Params::new(-1.0, 0.2, 0.8).unwrap();
        let grid = Grid::new(2001).unwrap();
        let phi = PotentialProfile::affine(grid, &p);
        let slope = 0.5 * (p.phi_plus() - p.phi_minus());
        // int_{-1}^{1} (1 - u) du = 2
        let v = stieltjes(&TestFunction::Polynomial(0), &phi, &p);
        assert!((v - 2.0 * slope).abs() < 1e-6);
    }

    #[test]
    fn rejects_positive_fields() {
        let p = Params::new(-1.0, 0.2, 0.8).unwrap();
        let r = DensityProfile::constant(Grid::new(11).unwrap(), 0.5).unwrap();
        assert!(gamma_limit_sweep(&r, &p, &[-1.0, 0.5]).is_err());
    }
}
