//! Shared domain types: parameters, the uniform grid on `[-1, 1]`, grid
//! functions and space-time paths, plus quadrature and difference stencils.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics;

/// Densities are clipped to `[CLIP_EPS, 1 - CLIP_EPS]` before a logit.
pub const CLIP_EPS: f64 = 1e-12;

/// Default number of grid nodes.
pub const DEFAULT_NODES: usize = 401;

/// Physical parameters: external field and reservoir densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    #[serde(rename = "E")]
    e: f64,
    rho_minus: f64,
    rho_plus: f64,
    phi_minus: f64,
    phi_plus: f64,
    #[serde(rename = "E0")]
    e0: f64,
}

impl Params {
    pub fn new(e: f64, rho_minus: f64, rho_plus: f64) -> Result<Self> {
        if !e.is_finite() {
            return Err(Error::InvalidParams(format!("field E = {e} is not finite")));
        }
        if !(rho_minus > 0.0 && rho_minus < rho_plus && rho_plus < 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < rho_minus < rho_plus < 1, got {rho_minus}, {rho_plus}"
            )));
        }
        let phi_minus = logit(rho_minus)?;
        let phi_plus = logit(rho_plus)?;
        Ok(Self {
            e,
            rho_minus,
            rho_plus,
            phi_minus,
            phi_plus,
            e0: 0.5 * (phi_plus - phi_minus),
        })
    }

    /// Parameters at the reversible field `E = E0`.
    pub fn reversible(rho_minus: f64, rho_plus: f64) -> Result<Self> {
        let p = Self::new(0.0, rho_minus, rho_plus)?;
        Ok(p.with_field(p.e0))
    }

    /// Same reservoirs, different field.
    pub fn with_field(&self, e: f64) -> Self {
        Self { e, ..*self }
    }

    pub fn e(&self) -> f64 {
        self.e
    }
    pub fn rho_minus(&self) -> f64 {
        self.rho_minus
    }
    pub fn rho_plus(&self) -> f64 {
        self.rho_plus
    }
    pub fn phi_minus(&self) -> f64 {
        self.phi_minus
    }
    pub fn phi_plus(&self) -> f64 {
        self.phi_plus
    }
    pub fn e0(&self) -> f64 {
        self.e0
    }

    /// True when `E` equals `E0` up to rounding.
    pub fn is_reversible(&self) -> bool {
        (self.e - self.e0).abs() <= 1e-12 * self.e0.abs().max(1.0)
    }

    /// Quasi-potential operations need `E <= E0`.
    pub fn require_subcritical(&self) -> Result<()> {
        if self.e > self.e0 && !self.is_reversible() {
            return Err(Error::InvalidParams(format!(
                "E = {} exceeds E0 = {}; the regime E > E0 is not covered",
                self.e, self.e0
            )));
        }
        Ok(())
    }

    /// Maximum of the mobility over `[rho_minus, rho_plus]` and its location.
    pub fn max_mobility(&self) -> (f64, f64) {
        let r = 0.5f64.clamp(self.rho_minus, self.rho_plus);
        (r, numerics::chi(r))
    }

    /// Minimum of the mobility over `[rho_minus, rho_plus]`.
    pub fn min_mobility(&self) -> f64 {
        numerics::chi(self.rho_minus).min(numerics::chi(self.rho_plus))
    }

    /// Affine potential `phi_-(1-u)/2 + phi_+(1+u)/2`.
    pub fn affine_potential(&self, u: f64) -> f64 {
        0.5 * (self.phi_minus * (1.0 - u) + self.phi_plus * (1.0 + u))
    }
}

/// Uniform grid `u_i = -1 + i h`, `h = 2/(M-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Grid {
    m: usize,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidParams(format!("grid needs at least 3 nodes, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.m - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.m {
            1.0
        } else {
            -1.0 + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.node(i)).collect()
    }

    /// Cell midpoints `u_{i+1/2}`, `M - 1` of them.
    pub fn midpoints(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.m - 1).map(|i| -1.0 + (i as f64 + 0.5) * h).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.m];
        w[0] = 0.5 * h;
        w[self.m - 1] = 0.5 * h;
        w
    }

    /// Index of the node closest to `u`.
    pub fn nearest(&self, u: f64) -> usize {
        let x = ((u + 1.0) / self.spacing()).round();
        (x.max(0.0) as usize).min(self.m - 1)
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.m).map(|i| f(self.node(i))).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self { m: DEFAULT_NODES }
    }
}

fn check_len(grid: &Grid, n: usize) -> Result<()> {
    if grid.len() != n {
        return Err(Error::GridMismatch(format!("{} values on a grid of {} nodes", n, grid.len())));
    }
    Ok(())
}

/// Piecewise-linear interpolation of nodal values.
pub fn interpolate(grid: &Grid, values: &[f64], u: f64) -> f64 {
    let h = grid.spacing();
    let x = ((u + 1.0) / h).clamp(0.0, (grid.len() - 1) as f64);
    let i = (x.floor() as usize).min(grid.len() - 2);
    let t = x - i as f64;
    values[i] * (1.0 - t) + values[i + 1] * t
}

/// A density profile: nodal values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityProfile {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityProfile {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(Error::Domain(format!("density {v} at node {i} outside [0, 1]")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, u: f64) -> f64 {
        interpolate(&self.grid, &self.values, u)
    }

    /// Re-samples onto another grid by linear interpolation.
    pub fn resample(&self, grid: Grid) -> Self {
        let values = grid.sample(|u| self.at(u));
        Self { grid, values }
    }

    /// Boundary values match the reservoirs within `tol`.
    pub fn matches_reservoirs(&self, params: &Params, tol: f64) -> bool {
        (self.values[0] - params.rho_minus()).abs() <= tol
            && (self.values[self.values.len() - 1] - params.rho_plus()).abs() <= tol
    }

    /// Nodal logit after clipping, with the number of clipped nodes.
    pub fn logit_clipped(&self) -> (Vec<f64>, usize) {
        let mut clipped = 0;
        let out = self
            .values
            .iter()
            .map(|&r| {
                let c = r.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
                if c != r {
                    clipped += 1;
                }
                (c / (1.0 - c)).ln()
            })
            .collect();
        (out, clipped)
    }

    pub fn sup_distance(&self, other: &DensityProfile) -> f64 {
        numerics::sup_diff(&self.values, &other.values)
    }
}

/// A chemical potential profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialProfile {
    grid: Grid,
    values: Vec<f64>,
}

impl PotentialProfile {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("potential has non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn affine(grid: Grid, params: &Params) -> Self {
        Self { grid, values: grid.sample(|u| params.affine_potential(u)) }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, u: f64) -> f64 {
        interpolate(&self.grid, &self.values, u)
    }

    /// Forward differences `(phi_{i+1} - phi_i)/h`.
    pub fn cell_slopes(&self) -> Vec<f64> {
        cell_slopes(&self.values, self.grid.spacing())
    }

    /// Checks membership in the discrete admissible set: boundary values
    /// equal `phi_pm` and every forward difference exceeds `floor`.
    pub fn is_admissible(&self, params: &Params, floor: f64) -> bool {
        let n = self.values.len();
        (self.values[0] - params.phi_minus()).abs() <= 1e-12 * (1.0 + params.phi_minus().abs())
            && (self.values[n - 1] - params.phi_plus()).abs() <= 1e-12 * (1.0 + params.phi_plus().abs())
            && self.cell_slopes().iter().all(|&x| x > floor)
    }

    pub fn densities(&self) -> Vec<f64> {
        self.values.iter().map(|&p| numerics::logistic(p)).collect()
    }
}

pub(crate) fn cell_slopes(values: &[f64], h: f64) -> Vec<f64> {
    values.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

/// A space-time path of density profiles on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacetimePath {
    grid: Grid,
    times: Vec<f64>,
    profiles: Vec<DensityProfile>,
}

impl SpacetimePath {
    pub fn new(times: Vec<f64>, profiles: Vec<DensityProfile>) -> Result<Self> {
        if times.is_empty() || times.len() != profiles.len() {
            return Err(Error::Domain(format!(
                "{} times for {} profiles",
                times.len(),
                profiles.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("path times must be strictly increasing".into()));
        }
        let grid = profiles[0].grid();
        if profiles.iter().any(|p| p.grid() != grid) {
            return Err(Error::GridMismatch("path profiles live on different grids".into()));
        }
        Ok(Self { grid, times, profiles })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn profiles(&self) -> &[DensityProfile] {
        &self.profiles
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn first(&self) -> &DensityProfile {
        &self.profiles[0]
    }
    pub fn last(&self) -> &DensityProfile {
        &self.profiles[self.profiles.len() - 1]
    }
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Time reversal on the same time window: `lambda_t = pi_{T - t}`.
    pub fn reversed(&self) -> Self {
        let (t0, t1) = (self.times[0], self.times[self.times.len() - 1]);
        let times = self.times.iter().rev().map(|&t| t0 + t1 - t).collect();
        let profiles = self.profiles.iter().rev().cloned().collect();
        Self { grid: self.grid, times, profiles }
    }

    /// Shifts all times by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            grid: self.grid,
            times: self.times.iter().map(|t| t + dt).collect(),
            profiles: self.profiles.clone(),
        }
    }

    /// Appends `next`, which must start where `self` ends (its first
    /// profile is dropped).
    pub fn concat(&self, next: &SpacetimePath) -> Result<Self> {
        let end = self.times[self.times.len() - 1];
        if (next.times[0] - end).abs() > 1e-12 * end.abs().max(1.0) {
            return Err(Error::Domain("concatenated paths are not contiguous in time".into()));
        }
        if next.grid != self.grid {
            return Err(Error::GridMismatch("concatenated paths use different grids".into()));
        }
        let mut times = self.times.clone();
        let mut profiles = self.profiles.clone();
        times.extend_from_slice(&next.times[1..]);
        profiles.extend_from_slice(&next.profiles[1..]);
        Ok(Self { grid: self.grid, times, profiles })
    }

    /// Sub-path on snapshot indices `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.times[range.clone()].to_vec(), self.profiles[range].to_vec())
    }
}

/// Trapezoid rule for `int_{-1}^{1} values du`.
pub fn quadrature(values: &[f64], grid: &Grid) -> f64 {
    let h = grid.spacing();
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Trapezoid `L^2` inner product.
pub fn inner(a: &[f64], b: &[f64], grid: &Grid) -> f64 {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    quadrature(&prod, grid)
}

/// Second-order derivative: centered inside, one-sided at the endpoints.
pub fn derivative(values: &[f64], grid: &Grid) -> Vec<f64> {
    let h = grid.spacing();
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Second derivative: three-point inside, four-point one-sided at the ends
/// (three-point when only three nodes exist).
pub fn second_derivative(values: &[f64], grid: &Grid) -> Vec<f64> {
    let h2 = grid.spacing().powi(2);
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2;
    }
    if n >= 4 {
        d[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2;
        d[n - 1] = (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
    } else {
        d[0] = d[1];
        d[n - 1] = d[1];
    }
    d
}

/// `a (1 - a)` for `a` in `[0, 1]`.
pub fn mobility(a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Domain(format!("mobility needs a in [0, 1], got {a}")));
    }
    Ok(numerics::chi(a))
}

/// `e^phi / (1 + e^phi)`.
pub fn density_of_potential(phi: f64) -> f64 {
    numerics::logistic(phi)
}

/// `log(rho / (1 - rho))` for `rho` in `(0, 1)`.
pub fn potential_of_density(rho: f64) -> Result<f64> {
    logit(rho)
}

fn logit(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("logit needs rho in (0, 1), got {rho}")));
    }
    Ok((rho / (1.0 - rho)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_derive_thresholds() {
        let p = Params::new(-1.0, 0.2, 0.8).unwrap();
        assert!((p.phi_plus() - 4f64.ln()).abs() < 1e-15);
        assert!((p.e0() - 4f64.ln()).abs() < 1e-15);
        assert!(Params::new(0.0, 0.8, 0.2).is_err());
        assert!(Params::new(0.0, 0.0, 0.2).is_err());
        assert!(Params::reversible(0.2, 0.8).unwrap().is_reversible());
        assert!(p.with_field(2.0).require_subcritical().is_err());
    }

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = Grid::new(401).unwrap();
        assert_eq!(g.node(0), -1.0);
        assert_eq!(g.node(400), 1.0);
        assert!((g.node(200)).abs() < 1e-15);
        assert!(Grid::new(2).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(401).unwrap();
        assert!((quadrature(&vec![1.0; 401], &g) - 2.0).abs() < 1e-13);
        assert!(quadrature(&g.nodes(), &g).abs() < 1e-13);
        let sq = g.sample(|u| u * u);
        assert!((quadrature(&sq, &g) - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn derivative_examples() {
        let g = Grid::new(401).unwrap();
        assert!(derivative(&vec![3.0; 401], &g).iter().all(|d| d.abs() < 1e-12));
        assert!(derivative(&g.nodes(), &g).iter().all(|d| (d - 1.0).abs() < 1e-10));
        let d = derivative(&g.sample(f64::sin), &g);
        assert!(numerics::sup_diff(&d, &g.sample(f64::cos)) < 1e-4);
        let d2 = second_derivative(&g.sample(f64::sin), &g);
        let minus_sin: Vec<f64> = g.sample(|u| -u.sin());
        assert!(numerics::sup_diff(&d2, &minus_sin) < 1e-4);
    }

    #[test]
    fn mobility_and_logit() {
        assert_eq!(mobility(0.0).unwrap(), 0.0);
        assert_eq!(mobility(0.5).unwrap(), 0.25);
        assert!((mobility(0.2).unwrap() - 0.16).abs() < 1e-15);
        assert!(mobility(1.2).is_err());
        assert_eq!(density_of_potential(0.0), 0.5);
        assert!((potential_of_density(0.8).unwrap() - 1.386294).abs() < 1e-6);
        assert!(potential_of_density(1.0).is_err());
        for k in 1..10 {
            let r = k as f64 / 10.0;
            let back = density_of_potential(potential_of_density(r).unwrap());
            assert!((back - r).abs() < 1e-12);
        }
    }

    #[test]
    fn path_reversal_and_concat() {
        let g = Grid::new(5).unwrap();
        let p = |v| DensityProfile::constant(g, v).unwrap();
        let path = SpacetimePath::new(vec![0.0, 0.5, 2.0], vec![p(0.1), p(0.2), p(0.3)]).unwrap();
        let r = path.reversed();
        assert_eq!(r.times(), &[0.0, 1.5, 2.0]);
        assert_eq!(r.first().values()[0], 0.3);
        let c = path.concat(&r.shifted(2.0)).unwrap();
        assert_eq!(c.len(), 5);
        assert!(SpacetimePath::new(vec![0.0, 0.0], vec![p(0.1), p(0.1)]).is_err());
    }
}
