//! Stationary current, stationary profile and normalization constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DensityProfile, Grid, Params, PotentialProfile};
use crate::numerics::{chi, integrate, ln1p_ratio};

/// Tolerance on the current equation residual.
pub const TOL_ROOT: f64 = 1e-10;
/// Tolerance on the right endpoint of the integrated profile.
pub const TOL_BVP: f64 = 1e-6;

const QUAD_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct StationaryState {
    pub params: Params,
    #[serde(rename = "J")]
    pub j: f64,
    /// `E max chi - J` for `E < 0`.
    pub gap: Option<f64>,
    pub rho_bar: DensityProfile,
    pub phi_bar: PotentialProfile,
    /// `None` at `E = E0`, where `A_E` is undefined.
    #[serde(rename = "A_E")]
    pub a_e: Option<f64>,
    pub current_residual: f64,
    pub endpoint_mismatch: f64,
}

impl StationaryState {
    pub fn solve(params: &Params, grid: Grid) -> Result<Self> {
        let root = solve_current_root(params)?;
        let j = root.j;
        let rho_bar = stationary_profile_root(params, &root, grid)?;
        let endpoint_mismatch = (rho_bar.values()[grid.len() - 1] - params.rho_plus()).abs();
        // The shooting end is only accurate to the BVP tolerance; pin the
        // reservoir values so the pair satisfies the boundary data exactly.
        let mut values = rho_bar.into_values();
        values[0] = params.rho_minus();
        values[grid.len() - 1] = params.rho_plus();
        let rho_bar = DensityProfile::new(grid, values)?;
        let (logits, _) = rho_bar.logit_clipped();
        let phi_bar = PotentialProfile::new(grid, logits)?;
        let a_e = if j < 0.0 { Some(constant_a_e_root(params, &root)?) } else { None };
        Ok(Self {
            params: *params,
            j,
            gap: root.gap,
            rho_bar,
            phi_bar,
            a_e,
            current_residual: if params.e() == 0.0 {
                (current_integral(params, j) - 1.0).abs()
            } else {
                (current_integral_root(params, &root) - 1.0).abs()
            },
            endpoint_mismatch,
        })
    }
}

fn mobility_breaks(params: &Params) -> Vec<f64> {
    let (r_star, _) = params.max_mobility();
    let width = params.rho_plus() - params.rho_minus();
    // Geometric grading towards the peak of the mobility, where the
    // integrands of the current equation and of A_E concentrate.
    let mut breaks = vec![r_star];
    for k in 1..=40 {
        let d = width * 0.5f64.powi(k);
        breaks.push(r_star - d);
        breaks.push(r_star + d);
    }
    breaks
}

/// Root of the current equation. For `E < 0` the distance `gap` between `J`
/// and the singular value `E max chi` is carried separately, since it can be
/// far below the resolution of `J` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurrentRoot {
    #[serde(rename = "J")]
    pub j: f64,
    /// `E max chi - J` for `E < 0`; `None` otherwise.
    pub gap: Option<f64>,
}

impl CurrentRoot {
    fn from_j(params: &Params, j: f64) -> Self {
        // A current rounded onto the singular value keeps a positive gap.
        let gap = (params.e() < 0.0).then(|| (singular_current(params) - j).max(1e-300));
        Self { j, gap }
    }
}

/// `E chi(r) - J` for the given root, for `r = r* + offset` where `r*` is
/// the peak of the mobility. For `E < 0` it is assembled from the offset so
/// that no cancellation occurs near the peak.
fn current_denominator(params: &Params, root: &CurrentRoot, offset: f64) -> f64 {
    let (r_star, _) = params.max_mobility();
    match root.gap {
        // chi(r) - chi(r*) = (r - r*)(1 - r - r*)
        Some(gap) => params.e() * offset * (1.0 - 2.0 * r_star - offset) + gap,
        None => params.e() * chi(r_star + offset) - root.j,
    }
}

/// `int_{rho_-}^{rho_+} g(r - r*) dr`. When `E < 0` each side of the peak
/// `r*` is integrated in the variable `s = log|r - r*|`, which resolves
/// boundary layers far below the spacing of doubles near `r*`.
fn integrate_offsets<G: Fn(f64) -> f64>(params: &Params, root: &CurrentRoot, g: G) -> f64 {
    let (r_star, _) = params.max_mobility();
    let Some(gap) = root.gap else {
        return integrate(
            |r| g(r - r_star),
            params.rho_minus(),
            params.rho_plus(),
            &mobility_breaks(params),
            QUAD_TOL,
        );
    };
    let x_min = 1e-18 * gap.min(1.0);
    let mut total = 0.0;
    for (sign, reach) in [(-1.0, r_star - params.rho_minus()), (1.0, params.rho_plus() - r_star)] {
        if reach <= x_min {
            continue;
        }
        let (s0, s1) = (x_min.ln(), reach.ln());
        let breaks: Vec<f64> = (1..).map(|k| s0 + k as f64).take_while(|&b| b < s1).collect();
        total += integrate(|s| {
            let x = s.exp();
            g(sign * x) * x
        }, s0, s1, &breaks, QUAD_TOL);
    }
    total
}

fn current_integral_root(params: &Params, root: &CurrentRoot) -> f64 {
    0.5 * integrate_offsets(params, root, |x| 1.0 / current_denominator(params, root, x))
}

/// `(1/2) int_{rho_-}^{rho_+} dr / (E chi(r) - J)`.
pub fn current_integral(params: &Params, j: f64) -> f64 {
    if params.e() == 0.0 {
        return (params.rho_plus() - params.rho_minus()) / (-2.0 * j);
    }
    current_integral_root(params, &CurrentRoot::from_j(params, j))
}

/// Value of `E chi` at which the current integrand becomes singular.
fn singular_current(params: &Params) -> f64 {
    let e = params.e();
    if e < 0.0 {
        e * params.max_mobility().1
    } else {
        e * params.min_mobility()
    }
}

/// Unique `J <= 0` solving the current equation.
pub fn solve_current(params: &Params) -> Result<f64> {
    solve_current_root(params).map(|r| r.j)
}

/// Bisection for the current; in the gap variable on a log scale when `E < 0`.
pub fn solve_current_root(params: &Params) -> Result<CurrentRoot> {
    let e = params.e();
    let width = params.rho_plus() - params.rho_minus();
    if e == 0.0 {
        return Ok(CurrentRoot { j: -0.5 * width, gap: None });
    }
    if params.is_reversible() {
        return Ok(CurrentRoot { j: 0.0, gap: None });
    }
    let c = singular_current(params);
    let residual = |root: &CurrentRoot| current_integral_root(params, root) - 1.0;

    if e < 0.0 {
        let make = |t: f64| {
            let gap = t.exp();
            CurrentRoot { j: c - gap, gap: Some(gap) }
        };
        // The integral decreases in the gap.
        let (lo, hi) = ((1e-250f64).ln(), width.ln());
        if residual(&make(hi)) >= 0.0 {
            return Err(Error::BracketNotFound(format!("integral >= 1 at J_lo = {}", c - width)));
        }
        if residual(&make(lo)) < 0.0 {
            return Err(Error::BracketNotFound("integral < 1 at the singular current".into()));
        }
        let (t, _) = bisect(lo..hi, |t| -residual(&make(t)))?;
        let root = make(t);
        return check_root(residual(&root).abs(), root);
    }

    // 0 < E < E0: the integrand is regular up to J = 0.
    let (lo, hi) = (c.min(0.0) - width, 0.0);
    let at = |j: f64| residual(&CurrentRoot { j, gap: None });
    if at(lo) >= 0.0 {
        return Err(Error::BracketNotFound(format!("integral >= 1 at J_lo = {lo}")));
    }
    if at(hi) < 0.0 {
        return Err(Error::BracketNotFound(format!(
            "integral < 1 at J = 0; E = {e} exceeds E0 = {}",
            params.e0()
        )));
    }
    let (j, _) = bisect(lo..hi, at)?;
    check_root(at(j).abs(), CurrentRoot { j, gap: None })
}

fn check_root(residual: f64, root: CurrentRoot) -> Result<CurrentRoot> {
    if residual > TOL_ROOT || !residual.is_finite() {
        return Err(Error::NoConvergence { method: "current bisection", iterations: 0, residual });
    }
    Ok(root)
}

/// Bisection for an increasing function with `f(lo) < 0 <= f(hi)`; returns
/// the abscissa with the smallest residual seen.
fn bisect<F: Fn(f64) -> f64>(range: std::ops::Range<f64>, f: F) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (range.start, range.end);
    let mut best = (lo, f64::INFINITY);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v.abs() < best.1 {
            best = (mid, v.abs());
        }
        if v.abs() <= 0.01 * TOL_ROOT {
            break;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Integrates `rho' = E chi(rho) - J` from `rho(-1) = rho_-` with RK4.
///
/// Each grid cell is split into enough sub-steps that `|E| dt` stays small.
pub fn stationary_profile(params: &Params, j: f64, grid: Grid) -> Result<DensityProfile> {
    stationary_profile_root(params, &CurrentRoot::from_j(params, j), grid)
}

pub fn stationary_profile_root(params: &Params, root: &CurrentRoot, grid: Grid) -> Result<DensityProfile> {
    let e = params.e();
    let j = root.j;
    let h = grid.spacing();
    let values = if e == 0.0 {
        grid.sample(|u| params.rho_minus() - j * (u + 1.0))
    } else if j == 0.0 {
        grid.sample(|u| crate::numerics::logistic(params.affine_potential(u)))
    } else {
        // Integrate the offset y = rho - r* from the mobility peak, which stays
        // resolvable when the profile leaves a reservoir value extremely slowly.
        let n_sub = ((h * e.abs() / 0.01).ceil() as usize).max(4);
        let dt = h / n_sub as f64;
        let (r_star, _) = params.max_mobility();
        let f = |y: f64| current_denominator(params, root, y);
        let mut y = params.rho_minus() - r_star;
        let mut out = Vec::with_capacity(grid.len());
        out.push(params.rho_minus());
        for _ in 1..grid.len() {
            for _ in 0..n_sub {
                let k1 = f(y);
                let k2 = f(y + 0.5 * dt * k1);
                let k3 = f(y + 0.5 * dt * k2);
                let k4 = f(y + dt * k3);
                y += dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            }
            out.push(r_star + y);
        }
        out
    };
    let mismatch = (values[grid.len() - 1] - params.rho_plus()).abs();
    if mismatch > TOL_BVP || !mismatch.is_finite() {
        return Err(Error::EndpointMismatch { mismatch, tolerance: TOL_BVP });
    }
    let clamped = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    DensityProfile::new(grid, clamped)
}

/// `A_E = log(-J) + (1/2) int (1/(E chi)) log(1 - E chi/J) dr`, closed form at `E = 0`.
pub fn constant_a_e(params: &Params, j: f64) -> Result<f64> {
    constant_a_e_root(params, &CurrentRoot::from_j(params, j))
}

pub fn constant_a_e_root(params: &Params, root: &CurrentRoot) -> Result<f64> {
    let j = root.j;
    if j >= 0.0 {
        return Err(Error::Domain(format!("A_E needs J < 0, got {j}")));
    }
    let e = params.e();
    let width = params.rho_plus() - params.rho_minus();
    if e == 0.0 {
        return Ok((0.5 * width).ln() + 1.0);
    }
    // (1/(E chi)) log(1 - E chi/J) = -(1/J) l(z), z = -E chi/J, l(z) = ln(1+z)/z,
    // with 1 + z = (J - E chi)/J taken from the cancellation-free denominator.
    let (r_star, _) = params.max_mobility();
    let integrand = |x: f64| {
        let z = -e * chi(r_star + x) / j;
        let l = if z.abs() < 0.5 {
            ln1p_ratio(z)
        } else {
            (-current_denominator(params, root, x) / j).ln() / z
        };
        -l / j
    };
    let integral = integrate_offsets(params, root, integrand);
    Ok((-j).ln() + 0.5 * integral)
}

/// `(rho_bar_a, A_a)`: maximizer of the mobility on `[rho_-, rho_+]` and
/// the log of the maximum.
pub fn asymmetric_constants(params: &Params) -> (f64, f64) {
    let mut candidates = vec![params.rho_minus(), params.rho_plus()];
    if params.rho_minus() < 0.5 && 0.5 < params.rho_plus() {
        candidates.push(0.5);
    }
    let best = candidates
        .into_iter()
        .max_by(|a, b| chi(*a).partial_cmp(&chi(*b)).unwrap())
        .unwrap();
    (best, chi(best).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(e: f64) -> Params {
        Params::new(e, 0.2, 0.8).unwrap()
    }

    #[test]
    fn closed_form_currents() {
        assert!((solve_current(&base(0.0)).unwrap() + 0.3).abs() < 1e-15);
        let p = Params::reversible(0.2, 0.8).unwrap();
        assert_eq!(solve_current(&p).unwrap(), 0.0);
        assert!((current_integral(&p, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn supercritical_field_has_no_bracket() {
        let p = base(2.0);
        assert!(matches!(solve_current(&p), Err(Error::BracketNotFound(_))));
    }

    #[test]
    fn current_residual_small() {
        for &e in &[-100.0, -10.0, -1.0, 0.5, 1.2] {
            let p = base(e);
            let j = solve_current(&p).unwrap();
            assert!(j < 0.0);
            assert!((current_integral(&p, j) - 1.0).abs() <= TOL_ROOT, "E = {e}");
        }
    }

    #[test]
    fn a_zero_closed_form() {
        let a0 = constant_a_e(&base(0.0), -0.3).unwrap();
        assert!((a0 - (0.3f64.ln() + 1.0)).abs() < 1e-15);
        assert!((a0 + 0.203973).abs() < 1e-6);
        assert!(constant_a_e(&base(0.0), 0.0).is_err());
    }

    #[test]
    fn asymmetric_constant_examples() {
        let (r, a) = asymmetric_constants(&base(-1.0));
        assert_eq!(r, 0.5);
        assert!((a - 0.25f64.ln()).abs() < 1e-15);
        let (r, a) = asymmetric_constants(&Params::new(-1.0, 0.6, 0.8).unwrap());
        assert_eq!(r, 0.6);
        assert!((a - 0.24f64.ln()).abs() < 1e-15);
        let (r, a) = asymmetric_constants(&Params::new(-1.0, 0.2, 0.4).unwrap());
        assert_eq!(r, 0.4);
        assert!((a - 0.24f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn special_profiles() {
        let g = Grid::new(401).unwrap();
        let s = StationaryState::solve(&base(0.0), g).unwrap();
        for (i, r) in s.rho_bar.values().iter().enumerate() {
            assert!((r - (0.2 + 0.3 * (g.node(i) + 1.0))).abs() < 1e-14);
        }
        let p = Params::reversible(0.2, 0.8).unwrap();
        let s = StationaryState::solve(&p, g).unwrap();
        assert!(s.a_e.is_none());
        for (i, f) in s.phi_bar.values().iter().enumerate() {
            assert!((f - p.affine_potential(g.node(i))).abs() < 1e-12);
        }
    }
}
