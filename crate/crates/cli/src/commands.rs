use std::f64::consts::PI;
use std::path::Path;

use serde_json::{json, Value};
use wasep_core::acceptance;
use wasep_core::asymlimit::{gamma_limit_sweep, maximizer_convergence};
use wasep_core::dynamics::{adjoint_equation_residual, c1_distance, joining_constant, nonlocal_identity_defect, optimal_path, PdeConfig};
use wasep_core::elgp::{density_for_potential, solve_phi};
use wasep_core::functionals::{s_a, QuasiPotential};
use wasep_core::microsim::{ctmc_simulate, exact_stationary, marginals, product_potential, SimParams, MAX_EXACT_N};
use wasep_core::numerics::logistic;
use wasep_core::ratefn::rate_i_t;
use wasep_core::stationary::{asymmetric_constants, StationaryState};
use wasep_core::{DensityProfile, Grid, Params, SpacetimePath};

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::output::{fmt, Output};

pub fn dispatch(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    match cfg.command {
        Command::Stationary => stationary(cfg, out),
        Command::Phi => phi(cfg, out),
        Command::FreeEnergy => free_energy(cfg, out),
        Command::FreeEnergyAsym => free_energy_asym(cfg, out),
        Command::OptimalPath => optimal(cfg, out),
        Command::PathCost => path_cost(cfg, out),
        Command::Simulate => simulate(cfg, out),
        Command::AsymLimit => asym_limit(cfg, out),
        Command::Verify => verify(cfg, out),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Validation(format!("{} has no column {name:?}", path.display())))
}

fn number(record: &csv::StringRecord, i: usize, path: &Path) -> Result<f64, CliError> {
    let field = record.get(i).unwrap_or("");
    field
        .parse()
        .map_err(|_| CliError::Validation(format!("{}: not a number: {field:?}", path.display())))
}

/// Reads `(u, rho)` pairs and interpolates them linearly onto `grid`.
pub fn read_profile(path: &Path, grid: Grid) -> Result<DensityProfile, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (iu, ir) = (column(&headers, "u", path)?, column(&headers, "rho", path)?);
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        pts.push((number(&rec, iu, path)?, number(&rec, ir, path)?));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 2 || pts[0].0 > -1.0 + 1e-9 || pts[pts.len() - 1].0 < 1.0 - 1e-9 {
        return Err(CliError::Validation(format!("{} must cover [-1, 1] with at least two points", path.display())));
    }
    let values = grid
        .nodes()
        .iter()
        .map(|&u| {
            let k = pts.partition_point(|p| p.0 <= u).clamp(1, pts.len() - 1);
            let ((u0, r0), (u1, r1)) = (pts[k - 1], pts[k]);
            if u1 == u0 {
                r0
            } else {
                r0 + (r1 - r0) * (u - u0) / (u1 - u0)
            }
        })
        .collect();
    Ok(DensityProfile::new(grid, values)?)
}

/// Reads a space-time CSV `(t, u, rho)`; every time must carry the same
/// equally spaced nodes on `[-1, 1]`.
pub fn read_path(path: &Path) -> Result<SpacetimePath, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (it, iu, ir) = (column(&headers, "t", path)?, column(&headers, "u", path)?, column(&headers, "rho", path)?);
    let mut rows: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (t, u, r) = (number(&rec, it, path)?, number(&rec, iu, path)?, number(&rec, ir, path)?);
        match rows.last_mut() {
            Some((last, pts)) if *last == t => pts.push((u, r)),
            _ => rows.push((t, vec![(u, r)])),
        }
    }
    let m = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let grid = Grid::new(m)?;
    let mut times = Vec::new();
    let mut profiles = Vec::new();
    for (t, mut pts) in rows {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() != m || pts.iter().enumerate().any(|(i, p)| (p.0 - grid.node(i)).abs() > 1e-9) {
            return Err(CliError::Validation(format!("{}: time {t} is not on the {m}-node grid", path.display())));
        }
        times.push(t);
        profiles.push(DensityProfile::new(grid, pts.into_iter().map(|p| p.1).collect())?);
    }
    Ok(SpacetimePath::new(times, profiles)?)
}

/// The profile to work on: from `--profile`, or `0.5 + 0.3 sin(pi u)`.
fn profile(cfg: &RunConfig, grid: Grid) -> Result<DensityProfile, CliError> {
    match &cfg.profile {
        Some(p) => read_profile(p, grid),
        None => Ok(DensityProfile::from_fn(grid, |u| 0.5 + 0.3 * (PI * u).sin())?),
    }
}

fn pde(cfg: &RunConfig) -> PdeConfig {
    let c = PdeConfig::new(cfg.grid(), cfg.horizon);
    match cfg.dt {
        Some(dt) => c.with_dt(dt),
        None => c,
    }
}

fn stationary(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let g = cfg.grid();
    let s = StationaryState::solve(&p, g)?;
    let (_, a_a) = asymmetric_constants(&p);
    out.csv(
        "stationary.csv",
        &["u", "rho_bar", "phi_bar"],
        (0..g.len()).map(|i| vec![fmt(g.node(i)), fmt(s.rho_bar.values()[i]), fmt(s.phi_bar.values()[i])]),
    )?;
    Ok(json!({
        "J": s.j,
        "A_E": s.a_e,
        "A_a": a_a,
        "E0": p.e0(),
        "current_residual": s.current_residual,
        "endpoint_mismatch": s.endpoint_mismatch,
    }))
}

fn phi(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let rho = profile(cfg, cfg.grid())?;
    let sol = solve_phi(&rho, &p)?;
    let implied = density_for_potential(&sol.phi, &p)?;
    let g = rho.grid();
    out.csv(
        "phi.csv",
        &["u", "rho", "phi", "residual"],
        (0..g.len()).map(|i| {
            // the equation holds at interior nodes; the ends carry boundary data
            let r = if i == 0 || i + 1 == g.len() { String::new() } else { fmt(implied[i] - rho.values()[i]) };
            vec![fmt(g.node(i)), fmt(rho.values()[i]), fmt(sol.phi.values()[i]), r]
        }),
    )?;
    Ok(json!({
        "residual": sol.residual,
        "fixed_point_residual": sol.fixed_point_residual,
        "iterations": sol.iterations,
        "newton_iterations": sol.newton_iterations,
        "method": sol.method,
        "branch": sol.branch,
    }))
}

fn write_maximizer(out: &mut Output, rho: &DensityProfile, phi: Option<&wasep_core::PotentialProfile>) -> Result<(), CliError> {
    if let Some(phi) = phi {
        let g = rho.grid();
        out.csv(
            "maximizer.csv",
            &["u", "rho", "phi"],
            (0..g.len()).map(|i| vec![fmt(g.node(i)), fmt(rho.values()[i]), fmt(phi.values()[i])]),
        )?;
    }
    Ok(())
}

fn free_energy(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let q = QuasiPotential::new(&p, cfg.grid())?;
    let rho = profile(cfg, cfg.grid())?;
    let r = q.value(&rho)?;
    write_maximizer(out, &rho, r.maximizer.as_ref())?;
    Ok(json!({ "S_E": r.value, "params": p, "diagnostics": r.diagnostics }))
}

fn free_energy_asym(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let rho = profile(cfg, cfg.grid())?;
    let r = s_a(&rho, &p)?;
    write_maximizer(out, &rho, r.maximizer.as_ref())?;
    Ok(json!({ "S_a": r.value, "params": p, "diagnostics": r.diagnostics }))
}

fn optimal(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let g = cfg.grid();
    let target = match &cfg.profile {
        Some(path) => read_profile(path, g)?,
        None => {
            let bar = StationaryState::solve(&p, g)?.rho_bar;
            let v = bar.values().iter().enumerate().map(|(i, r)| r + 0.1 * (PI * (g.node(i) + 1.0) / 2.0).sin()).collect();
            DensityProfile::new(g, v)?
        }
    };
    let opt = optimal_path(&target, &p, &pde(cfg))?;
    let q = QuasiPotential::new(&p, g)?;
    let s_target = q.value(&opt.target)?.value;
    let s_junction = q.value(&opt.junction)?.value;
    let total = rate_i_t(&opt.path, &opt.stationary, &p)?;
    let rev = opt.reversed_segment()?;
    let reversed = rate_i_t(&rev, rev.first(), &p)?.i_t;
    let join = opt.joining_segment()?;
    let joining = rate_i_t(&join, &opt.stationary, &p)?.i_t;
    let dist = c1_distance(&opt.junction, &opt.stationary);
    let bound = joining_constant(&p, &opt.stationary, &opt.junction) * dist * dist;
    let adjoint = adjoint_equation_residual(&opt.adjoint, &p)?;
    let nonlocal = nonlocal_identity_defect(&opt.adjoint, &p)?;
    out.csv(
        "path.csv",
        &["t", "u", "rho"],
        opt.path.times().iter().zip(opt.path.profiles()).flat_map(|(&t, r)| {
            r.values().iter().enumerate().map(move |(i, &v)| vec![fmt(t), fmt(g.node(i)), fmt(v)]).collect::<Vec<_>>()
        }),
    )?;
    Ok(json!({
        "S_E": s_target,
        "S_E_junction": s_junction,
        "path_cost": total.i_t,
        "reversed_cost": reversed,
        "joining_cost": joining,
        "joining_bound": bound,
        "mollification_error": opt.mollification_error,
        "residuals": {
            "adjoint_sup": adjoint.sup,
            "adjoint_rms": adjoint.rms,
            "nonlocal_identity": nonlocal,
            "initial_error": opt.adjoint.initial_error,
            "boundary_defect": opt.adjoint.boundary_defect,
            "slope_margin": opt.adjoint.slope_margin,
        },
    }))
}

fn path_cost(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let path = read_path(cfg.path.as_deref().expect("validated"))?;
    let gamma = path.first().clone();
    let cost = rate_i_t(&path, &gamma, &p)?;
    let g = path.grid();
    if !cost.h.is_empty() {
        out.csv(
            "h.csv",
            &["t", "u", "H"],
            path.times().iter().zip(&cost.h).flat_map(|(&t, row)| {
                row.iter().enumerate().map(move |(i, &v)| vec![fmt(t), fmt(g.node(i)), fmt(v)]).collect::<Vec<_>>()
            }),
        )?;
    }
    Ok(json!({
        "I_T": cost.i_t,
        "Q": cost.q,
        "K_norm_sq": cost.k_norm_sq,
        "initial_mismatch": cost.initial_mismatch,
        "degenerate": cost.degenerate,
    }))
}

/// Expected stationary occupations: exact for small lattices, the
/// hydrodynamic profile otherwise.
fn reference_occupations(p: &Params, n: usize) -> Result<(Vec<f64>, &'static str), CliError> {
    if p.is_reversible() {
        return Ok((product_potential(p, n).iter().map(|&v| logistic(v)).collect(), "product measure"));
    }
    if n <= MAX_EXACT_N {
        return Ok((marginals(&exact_stationary(p, n)?, 2 * n - 1), "exact stationary measure"));
    }
    let bar = StationaryState::solve(p, Grid::new(2001)?)?.rho_bar;
    Ok(((0..2 * n - 1).map(|i| bar.at((i as f64 - (n as f64 - 1.0)) / n as f64)).collect(), "hydrodynamic profile"))
}

fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    let mut sim = SimParams::new(p, cfg.n, cfg.horizon, cfg.seed, cfg.samples);
    sim.burn_in = cfg.burn_in;
    let sample = ctmc_simulate(&sim)?;
    let centers = sample.centers();
    let (reference, source) = reference_occupations(&p, cfg.n)?;
    let z: Vec<f64> = (0..reference.len())
        .map(|i| {
            let d = (sample.mean[i] - reference[i]).abs();
            if sample.std_error[i] > 0.0 { d / sample.std_error[i] } else if d == 0.0 { 0.0 } else { f64::INFINITY }
        })
        .collect();
    let max_z = z.iter().cloned().fold(0.0, f64::max);
    out.csv(
        "trajectories.csv",
        &["sample", "stream", "x", "u", "time_average", "jumps"],
        sample.trajectories.iter().enumerate().flat_map(|(k, tr)| {
            let centers = &centers;
            tr.time_average
                .iter()
                .enumerate()
                .map(move |(i, &v)| {
                    let x = i as i64 - (cfg.n as i64 - 1);
                    vec![k.to_string(), tr.stream.to_string(), x.to_string(), fmt(centers[i]), fmt(v), tr.jumps.to_string()]
                })
                .collect::<Vec<_>>()
        }),
    )?;
    out.csv(
        "occupations.csv",
        &["x", "u", "mean", "std_error", "reference", "z"],
        (0..reference.len()).map(|i| {
            let x = i as i64 - (cfg.n as i64 - 1);
            vec![x.to_string(), fmt(centers[i]), fmt(sample.mean[i]), fmt(sample.std_error[i]), fmt(reference[i]), fmt(z[i])]
        }),
    )?;
    Ok(json!({
        "generator": sample.generator,
        "seed": cfg.seed,
        "stream_rule": "trajectory k uses the seed with stream k",
        "reversible": p.is_reversible(),
        "reference": source,
        "max_z": max_z,
        "passed": max_z <= 3.0,
        "total_jumps": sample.trajectories.iter().map(|t| t.jumps).sum::<u64>(),
    }))
}

fn opt_fmt(x: Option<&str>) -> String {
    x.unwrap_or("").to_string()
}

fn asym_limit(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let p = cfg.params()?;
    // sweeps resample onto grids much finer than the default
    let rho = match &cfg.profile {
        Some(path) => read_profile(path, cfg.grid())?,
        None => DensityProfile::from_fn(Grid::new(20001)?, |u| 0.5 + 0.3 * (PI * u).sin())?,
    };
    let sweep = gamma_limit_sweep(&rho, &p, &cfg.e_list)?;
    let maxi = maximizer_convergence(&rho, &p, &cfg.e_list)?;
    out.csv(
        "sweep.csv",
        &["E", "M", "S_E", "S_a", "gap", "constant_gap", "error"],
        sweep.iter().map(|r| {
            vec![fmt(r.e), r.m.to_string(), fmt(r.s_e), fmt(r.s_a), fmt(r.gap), fmt(r.constant_gap), opt_fmt(r.error.as_deref())]
        }),
    )?;
    out.csv(
        "maximizers.csv",
        &["E", "M", "weak_distance", "pointwise", "layer_width", "jensen", "error"],
        maxi.iter().map(|r| {
            vec![
                fmt(r.e),
                r.m.to_string(),
                fmt(r.weak_distance),
                fmt(r.pointwise),
                fmt(r.layer_width),
                fmt(r.jensen),
                opt_fmt(r.error.as_deref()),
            ]
        }),
    )?;
    let (_, a_a) = asymmetric_constants(&p);
    Ok(json!({
        "A_a": a_a,
        "rows": sweep.len(),
        "failed_rows": sweep.iter().filter(|r| r.error.is_some()).count(),
        "last_gap": sweep.last().map(|r| r.gap),
        "last_constant_gap": sweep.last().map(|r| r.constant_gap),
    }))
}

fn verify(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let results = match cfg.criterion {
        Some(id) => vec![acceptance::run(id).map_err(|e| CliError::Validation(e.to_string()))?],
        None => acceptance::run_all(),
    };
    for r in &results {
        println!(
            "{} criterion {:>2} ({}): {} [{:.1} s]",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.detail,
            r.elapsed.as_secs_f64()
        );
    }
    // elapsed times vary between runs, so they stay out of the CSV
    out.csv(
        "verify.csv",
        &["criterion", "name", "passed", "detail"],
        results.iter().map(|r| vec![r.id.to_string(), r.name.to_string(), r.passed.to_string(), r.detail.clone()]),
    )?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(json!({ "criteria": results.len(), "passed": results.len() }))
}
