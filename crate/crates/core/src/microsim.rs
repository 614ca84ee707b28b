//! The microscopic chain on `Lambda_N = {-N+1, ..., N-1}`: jump rates, exact
//! invariant measures for small `N`, and continuous-time Monte Carlo.
//!
//! Configurations are stored site by site with index `i = x + N - 1`. For the
//! exact solver a configuration is a bit mask with bit `i` for site `x`.
//!
//! Random streams: trajectory `k` of a run with master seed `s` uses
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `k`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Params;
use crate::numerics::logistic;

/// Largest `N` accepted by the exact solver (`2^13` states).
pub const MAX_EXACT_N: usize = 7;
/// Largest `N` for which the exact solver uses a dense factorization.
const DENSE_N: usize = 4;
/// Default burn-in in diffusive time units.
pub const BURN_IN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatticeConfig {
    n: usize,
    occupation: Vec<u8>,
}

impl LatticeConfig {
    pub fn new(n: usize, occupation: Vec<u8>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("N must be at least 2, got {n}")));
        }
        if occupation.len() != 2 * n - 1 {
            return Err(Error::InvalidParams(format!("{} sites given, {} expected", occupation.len(), 2 * n - 1)));
        }
        if occupation.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParams("occupations must be 0 or 1".into()));
        }
        Ok(Self { n, occupation })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, vec![0; 2 * n.max(1) - 1])
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, vec![1; 2 * n.max(1) - 1])
    }

    pub fn from_mask(n: usize, mask: u32) -> Result<Self> {
        Self::new(n, (0..2 * n - 1).map(|i| ((mask >> i) & 1) as u8).collect())
    }

    pub fn mask(&self) -> u32 {
        self.occupation.iter().enumerate().map(|(i, &b)| (b as u32) << i).sum()
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn occupation(&self) -> &[u8] {
        &self.occupation
    }
    pub fn sites(&self) -> usize {
        self.occupation.len()
    }
    pub fn particles(&self) -> usize {
        self.occupation.iter().map(|&b| b as usize).sum()
    }
    /// Occupation of site `x` in `-N+1..=N-1`.
    pub fn at(&self, x: i64) -> u8 {
        self.occupation[(x + self.n as i64 - 1) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Move {
    /// Exchange of sites `x` and `x + 1`.
    Exchange { x: i64 },
    /// Flip at a boundary site.
    Flip { x: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub kind: Move,
    pub rate: f64,
}

/// Flip rates `(N^2/2) c_-(zeta)` and `(N^2/2) c_+(zeta)`.
fn boundary_rate(params: &Params, n: usize, left: bool, zeta: u8) -> f64 {
    let a = params.e() / (2.0 * n as f64);
    let speed = 0.5 * (n * n) as f64;
    let (rho, sign) = if left { (params.rho_minus(), 1.0) } else { (params.rho_plus(), -1.0) };
    let c = if zeta == 0 { rho * (sign * a).exp() } else { (1.0 - rho) * (-sign * a).exp() };
    speed * c
}

/// `(N^2/2) exp(-E/(2N) [eta(x+1) - eta(x)])` for an exchange that changes
/// the configuration.
fn bulk_rate(params: &Params, n: usize, left: u8, right: u8) -> f64 {
    let a = params.e() / (2.0 * n as f64);
    0.5 * (n * n) as f64 * (-a * (right as f64 - left as f64)).exp()
}

/// All enabled transitions out of `config`.
pub fn jump_rates(config: &LatticeConfig, params: &Params) -> Vec<Transition> {
    let n = config.n;
    let occ = &config.occupation;
    let offset = n as i64 - 1;
    let mut out = Vec::new();
    for i in 0..occ.len() - 1 {
        if occ[i] != occ[i + 1] {
            out.push(Transition { kind: Move::Exchange { x: i as i64 - offset }, rate: bulk_rate(params, n, occ[i], occ[i + 1]) });
        }
    }
    out.push(Transition { kind: Move::Flip { x: -offset }, rate: boundary_rate(params, n, true, occ[0]) });
    out.push(Transition { kind: Move::Flip { x: offset }, rate: boundary_rate(params, n, false, occ[occ.len() - 1]) });
    out
}

/// Applies a move to a bit mask.
fn apply_mask(mask: u32, kind: Move, n: usize) -> u32 {
    let off = n as i64 - 1;
    match kind {
        Move::Exchange { x } => {
            let i = (x + off) as u32;
            let a = (mask >> i) & 1;
            let b = (mask >> (i + 1)) & 1;
            if a == b {
                mask
            } else {
                mask ^ (0b11 << i)
            }
        }
        Move::Flip { x } => mask ^ (1 << (x + off) as u32),
    }
}

fn check_exact(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("N must be at least 2, got {n}")));
    }
    if n > MAX_EXACT_N {
        return Err(Error::DimensionTooLarge { n, limit: MAX_EXACT_N });
    }
    Ok(())
}

/// Sparse generator: for each state, its out-transitions `(target, rate)`.
fn transitions(params: &Params, n: usize) -> Vec<Vec<(usize, f64)>> {
    let states = 1usize << (2 * n - 1);
    (0..states)
        .map(|s| {
            let cfg = LatticeConfig::from_mask(n, s as u32).expect("mask within range");
            jump_rates(&cfg, params)
                .into_iter()
                .map(|t| (apply_mask(s as u32, t.kind, n) as usize, t.rate))
                .collect()
        })
        .collect()
}

/// Dense generator `L[(i, j)]` for `N <= MAX_EXACT_N`.
pub fn generator(params: &Params, n: usize) -> Result<DMatrix<f64>> {
    check_exact(n)?;
    let tr = transitions(params, n);
    let states = tr.len();
    let mut l = DMatrix::zeros(states, states);
    for (i, row) in tr.iter().enumerate() {
        for &(j, r) in row {
            l[(i, j)] += r;
            l[(i, i)] -= r;
        }
    }
    Ok(l)
}

/// The invariant measure `mu L = 0`, `sum mu = 1`, indexed by bit mask.
pub fn exact_stationary(params: &Params, n: usize) -> Result<Vec<f64>> {
    check_exact(n)?;
    if n <= DENSE_N {
        dense_stationary(params, n)
    } else {
        iterative_stationary(params, n)
    }
}

fn dense_stationary(params: &Params, n: usize) -> Result<Vec<f64>> {
    let l = generator(params, n)?;
    let states = l.nrows();
    // rows of the system are the columns of L; the last one is replaced by
    // the normalization
    let mut a = l.transpose();
    for j in 0..states {
        a[(states - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(states);
    b[states - 1] = 1.0;
    let mu = a.lu().solve(&b).ok_or_else(|| Error::Singular("generator of the exclusion chain".into()))?;
    Ok(mu.iter().copied().collect())
}

/// Gauss-Seidel on the balance equations `mu_j q_j = sum_i mu_i q_ij`.
fn iterative_stationary(params: &Params, n: usize) -> Result<Vec<f64>> {
    let tr = transitions(params, n);
    let states = tr.len();
    let out: Vec<f64> = tr.iter().map(|row| row.iter().map(|t| t.1).sum()).collect();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); states];
    for (i, row) in tr.iter().enumerate() {
        for &(j, r) in row {
            incoming[j].push((i, r));
        }
    }
    let mut mu = vec![1.0 / states as f64; states];
    let max_sweeps = 200_000;
    for sweep in 0..max_sweeps {
        let mut change = 0.0f64;
        for j in 0..states {
            let v = incoming[j].iter().map(|&(i, r)| mu[i] * r).sum::<f64>() / out[j];
            change = change.max((v - mu[j]).abs() / v.max(1e-300));
            mu[j] = v;
        }
        let total: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|m| *m /= total);
        if change < 1e-13 {
            return Ok(mu);
        }
        if sweep + 1 == max_sweeps {
            return Err(Error::NoConvergence { method: "Gauss-Seidel", iterations: max_sweeps, residual: change });
        }
    }
    unreachable!()
}

/// `phi_- (N - x)/(2N) + phi_+ (N + x)/(2N)` for each site.
pub fn product_potential(params: &Params, n: usize) -> Vec<f64> {
    let nn = n as f64;
    (-(n as i64) + 1..n as i64)
        .map(|x| {
            let x = x as f64;
            params.phi_minus() * (nn - x) / (2.0 * nn) + params.phi_plus() * (nn + x) / (2.0 * nn)
        })
        .collect()
}

/// Product measure with site densities `marginals`, indexed by bit mask.
pub fn product_measure(marginals: &[f64]) -> Vec<f64> {
    let states = 1usize << marginals.len();
    (0..states)
        .map(|s| {
            marginals
                .iter()
                .enumerate()
                .map(|(i, &p)| if (s >> i) & 1 == 1 { p } else { 1.0 - p })
                .product()
        })
        .collect()
}

/// The reversible product measure at `E = E0`.
pub fn reversible_measure(params: &Params, n: usize) -> Vec<f64> {
    let m: Vec<f64> = product_potential(params, n).iter().map(|&p| logistic(p)).collect();
    product_measure(&m)
}

/// One-site marginals `P(eta(x) = 1)` of a measure indexed by bit mask.
pub fn marginals(mu: &[f64], sites: usize) -> Vec<f64> {
    (0..sites)
        .map(|i| mu.iter().enumerate().filter(|(s, _)| (s >> i) & 1 == 1).map(|(_, p)| p).sum())
        .collect()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Distance to the product of the marginals of `mu`, which is the product
/// measure closest to `mu` in relative entropy `H(mu | nu)`.
pub fn product_fit_distance(mu: &[f64], sites: usize) -> f64 {
    total_variation(mu, &product_measure(&marginals(mu, sites)))
}

/// `max |mu(eta) r(eta -> eta') - mu(eta') r(eta' -> eta)|` over all transitions.
pub fn detailed_balance_defect(mu: &[f64], params: &Params, n: usize) -> Result<f64> {
    check_exact(n)?;
    let tr = transitions(params, n);
    let mut worst = 0.0f64;
    for (i, row) in tr.iter().enumerate() {
        for &(j, r) in row {
            let back = tr[j].iter().find(|t| t.0 == i).map(|t| t.1).unwrap_or(0.0);
            worst = worst.max((mu[i] * r - mu[j] * back).abs());
        }
    }
    Ok(worst)
}

/// Piecewise-constant empirical density: height `eta(x)` on
/// `[x/N - 1/(2N), x/N + 1/(2N))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDensity {
    pub n: usize,
    /// Block centres `x/N`.
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
}

impl EmpiricalDensity {
    pub fn width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn at(&self, u: f64) -> f64 {
        let nn = self.n as f64;
        let x = (u * nn + 0.5).floor() as i64;
        let i = x + self.n as i64 - 1;
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.width()
    }
}

pub fn empirical_density(config: &LatticeConfig) -> EmpiricalDensity {
    let n = config.n;
    EmpiricalDensity {
        n,
        centers: (-(n as i64) + 1..n as i64).map(|x| x as f64 / n as f64).collect(),
        values: config.occupation.iter().map(|&b| b as f64).collect(),
    }
}

/// Block averages of site values over `block` consecutive sites, with their
/// centres `x/N`.
pub fn block_average(values: &[f64], n: usize, block: usize) -> (Vec<f64>, Vec<f64>) {
    let block = block.max(1);
    let mut centers = Vec::new();
    let mut out = Vec::new();
    for (k, chunk) in values.chunks(block).enumerate() {
        let first = (k * block) as f64 - (n as f64 - 1.0);
        let mid = first + 0.5 * (chunk.len() as f64 - 1.0);
        centers.push(mid / n as f64);
        out.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    (centers, out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimParams {
    pub params: Params,
    #[serde(rename = "N")]
    pub n: usize,
    /// Averaging window after burn-in, in diffusive time units.
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub n_samples: usize,
    /// Times (from the start of the run) at which configurations are recorded.
    pub observe: Vec<f64>,
}

impl SimParams {
    pub fn new(params: Params, n: usize, horizon: f64, seed: u64, n_samples: usize) -> Self {
        Self { params, n, horizon, burn_in: BURN_IN, seed, n_samples, observe: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("N must be at least 2, got {}", self.n)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::InvalidParams("burn-in must be non-negative".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("at least one sample is needed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub stream: u64,
    /// Time-averaged occupation of each site over the averaging window.
    pub time_average: Vec<f64>,
    pub jumps: u64,
    pub final_config: LatticeConfig,
    /// Configurations at the requested observation times.
    pub snapshots: Vec<(f64, LatticeConfig)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    pub sim: SimParams,
    pub generator: &'static str,
    pub trajectories: Vec<Trajectory>,
    /// Mean over trajectories of the time averages.
    pub mean: Vec<f64>,
    /// Standard error of `mean` across trajectories (zero for one sample).
    pub std_error: Vec<f64>,
}

impl TrajectorySample {
    pub fn centers(&self) -> Vec<f64> {
        let n = self.sim.n as f64;
        (-(self.sim.n as i64) + 1..self.sim.n as i64).map(|x| x as f64 / n).collect()
    }
}

/// Proposal slots with fixed maximal rates; thinning keeps the event law exact.
struct Proposals {
    bond_max: f64,
    left_max: f64,
    right_max: f64,
    total: f64,
    bonds: usize,
}

impl Proposals {
    fn new(params: &Params, n: usize) -> Self {
        let bonds = 2 * n - 2;
        let bond_max = bulk_rate(params, n, 0, 1).max(bulk_rate(params, n, 1, 0));
        let left_max = boundary_rate(params, n, true, 0).max(boundary_rate(params, n, true, 1));
        let right_max = boundary_rate(params, n, false, 0).max(boundary_rate(params, n, false, 1));
        Self { bond_max, left_max, right_max, total: bonds as f64 * bond_max + left_max + right_max, bonds }
    }
}

fn run_trajectory(sim: &SimParams, stream: u64) -> Trajectory {
    let params = &sim.params;
    let n = sim.n;
    let sites = 2 * n - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(stream);
    let prop = Proposals::new(params, n);

    // start from independent sites with the linear reservoir interpolation
    let mut occ: Vec<u8> = (0..sites)
        .map(|i| {
            let frac = (i + 1) as f64 / (2 * n) as f64;
            let p = params.rho_minus() + frac * (params.rho_plus() - params.rho_minus());
            u8::from(rng.random::<f64>() < p)
        })
        .collect();

    let start = sim.burn_in;
    let end = sim.burn_in + sim.horizon;
    let mut occupied = vec![0.0f64; sites];
    let mut since = vec![start; sites];
    let mut observe: Vec<f64> = sim.observe.iter().copied().filter(|&t| t >= 0.0 && t <= end).collect();
    observe.sort_by(f64::total_cmp);
    let mut next_obs = 0;
    let mut snapshots = Vec::with_capacity(observe.len());
    let mut jumps = 0u64;
    let mut t = 0.0;

    let flip = |occ: &mut Vec<u8>, i: usize, t: f64, occupied: &mut Vec<f64>, since: &mut Vec<f64>| {
        if t > start {
            occupied[i] += occ[i] as f64 * (t - since[i]);
            since[i] = t;
        }
        occ[i] ^= 1;
    };

    loop {
        let u: f64 = rng.random();
        let dt = -(1.0 - u).ln() / prop.total;
        let t_next = t + dt;
        while next_obs < observe.len() && observe[next_obs] < t_next {
            snapshots.push((observe[next_obs], LatticeConfig { n, occupation: occ.clone() }));
            next_obs += 1;
        }
        if t_next >= end {
            break;
        }
        t = t_next;
        let pick = rng.random::<f64>() * prop.total;
        let accept = rng.random::<f64>();
        let bond_span = prop.bonds as f64 * prop.bond_max;
        if pick < bond_span {
            let i = ((pick / prop.bond_max) as usize).min(prop.bonds - 1);
            if occ[i] == occ[i + 1] {
                continue;
            }
            if accept * prop.bond_max < bulk_rate(params, n, occ[i], occ[i + 1]) {
                flip(&mut occ, i, t, &mut occupied, &mut since);
                flip(&mut occ, i + 1, t, &mut occupied, &mut since);
                jumps += 1;
            }
        } else if pick < bond_span + prop.left_max {
            if accept * prop.left_max < boundary_rate(params, n, true, occ[0]) {
                flip(&mut occ, 0, t, &mut occupied, &mut since);
                jumps += 1;
            }
        } else if accept * prop.right_max < boundary_rate(params, n, false, occ[sites - 1]) {
            flip(&mut occ, sites - 1, t, &mut occupied, &mut since);
            jumps += 1;
        }
    }
    for i in 0..sites {
        occupied[i] += occ[i] as f64 * (end - since[i]);
    }
    Trajectory {
        stream,
        time_average: occupied.iter().map(|o| o / sim.horizon).collect(),
        jumps,
        final_config: LatticeConfig { n, occupation: occ },
        snapshots,
    }
}

/// Runs `n_samples` independent trajectories in parallel.
pub fn ctmc_simulate(sim: &SimParams) -> Result<TrajectorySample> {
    sim.validate()?;
    let trajectories: Vec<Trajectory> = (0..sim.n_samples as u64).into_par_iter().map(|k| run_trajectory(sim, k)).collect();
    let sites = 2 * sim.n - 1;
    let m = trajectories.len() as f64;
    let mut mean = vec![0.0; sites];
    for tr in &trajectories {
        for (a, v) in mean.iter_mut().zip(&tr.time_average) {
            *a += v / m;
        }
    }
    let std_error = if trajectories.len() > 1 {
        (0..sites)
            .map(|i| {
                let var = trajectories.iter().map(|tr| (tr.time_average[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            })
            .collect()
    } else {
        vec![0.0; sites]
    };
    Ok(TrajectorySample { sim: sim.clone(), generator: "ChaCha8", trajectories, mean, std_error })
}
