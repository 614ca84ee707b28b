use proptest::prelude::*;
use std::f64::consts::PI;
use wasep_core::dynamics::*;
use wasep_core::functionals::QuasiPotential;
use wasep_core::grid::{DensityProfile, Grid, Params};
use wasep_core::numerics::{chi, logistic, sup_diff};
use wasep_core::stationary::StationaryState;
use wasep_core::Error;

fn params(e: f64) -> Params {
    Params::new(e, 0.2, 0.8).unwrap()
}

fn rho_bar(p: &Params, g: Grid) -> DensityProfile {
    StationaryState::solve(p, g).unwrap().rho_bar
}

/// `rho_bar + a sin(pi u)`, which stays in `M_0` for small `a`.
fn perturbed(p: &Params, g: Grid, a: f64, k: f64) -> DensityProfile {
    let base = rho_bar(p, g);
    let v = base.values().iter().enumerate().map(|(i, r)| r + a * (k * PI * g.node(i)).sin()).collect();
    DensityProfile::new(g, v).unwrap()
}

#[test]
fn stationary_profile_does_not_move() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    let bar = rho_bar(&p, g);
    let path = burgers_solve(&bar, &p, &PdeConfig::new(g, 2.0)).unwrap();
    for prof in path.profiles() {
        assert!(prof.sup_distance(&bar) <= 1e-6);
    }
}

#[test]
fn logistic_step_relaxes_in_c1() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    let step = DensityProfile::from_fn(g, |u| 0.2 + 0.6 * logistic(20.0 * u)).unwrap();
    let cfg = PdeConfig::new(g, 20.0).with_schedule(Schedule::Graded { first: 0.1, max: 1.0, growth: 1.2 });
    let path = burgers_solve(&step, &p, &cfg).unwrap();
    assert!((path.horizon() - 20.0).abs() < 1e-9);
    let bar = rho_bar(&p, g);
    assert!(c1_distance(path.last(), &bar) <= 1e-3);
}

#[test]
fn burgers_self_convergence_is_second_order() {
    let p = params(-2.0);
    let init = |u: f64| 0.2 + 0.6 * logistic(8.0 * u) + 0.1 * (PI * u).sin() * (1.0 - u * u);
    let solve = |m: usize| {
        let g = Grid::new(m).unwrap();
        let cfg = PdeConfig::new(g, 0.25).with_dt(1.6e-4 / ((m - 1) as f64 / 50.0).powi(2)).with_schedule(Schedule::Every(usize::MAX));
        let path = burgers_solve(&DensityProfile::from_fn(g, init).unwrap(), &p, &cfg).unwrap();
        path.last().clone()
    };
    let (a, b, c) = (solve(51), solve(101), solve(201));
    let d1 = (0..51).map(|i| (a.values()[i] - b.values()[2 * i]).abs()).fold(0.0, f64::max);
    let d2 = (0..101).map(|i| (b.values()[i] - c.values()[2 * i]).abs()).fold(0.0, f64::max);
    let ratio = d1 / d2;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

// constant up to the O(h^2) mismatch between the Burgers scheme's discrete
// stationary state and logistic(phi_bar)
#[test]
fn stationary_adjoint_path_is_constant() {
    let p = params(-2.0);
    let drift = |m: usize| {
        let g = Grid::new(m).unwrap();
        let bar = rho_bar(&p, g);
        let adj = adjoint_path(&bar, &p, &PdeConfig::new(g, 1.0).with_dt(1e-4)).unwrap();
        adj.rho_star.profiles().iter().map(|r| r.sup_distance(&bar)).fold(0.0, f64::max)
    };
    let (coarse, fine) = (drift(201), drift(401));
    assert!(fine <= 5e-5, "{fine}");
    assert!((3.5..4.5).contains(&(coarse / fine)), "{}", coarse / fine);
}

#[test]
fn adjoint_path_reproduces_start_and_respects_bounds() {
    for e in [-2.0, -10.0, 1.0] {
        let p = params(e);
        let g = Grid::new(401).unwrap();
        let gamma = perturbed(&p, g, 0.1, 1.0);
        let adj = adjoint_path(&gamma, &p, &PdeConfig::new(g, 2.0)).unwrap();
        assert!(adj.initial_error <= 1e-3, "E = {e}: {}", adj.initial_error);
        assert!(adj.slope_margin > 0.0);
        let delta = gamma.values().iter().map(|&r| r.min(1.0 - r)).fold(f64::INFINITY, f64::min);
        let lo = p.rho_minus().min(1.0 - p.rho_plus()).min(delta);
        let hi = p.rho_plus().max(1.0 - p.rho_minus()).max(1.0 - delta);
        for prof in adj.rho_star.profiles() {
            assert_eq!(prof.values()[0], p.rho_minus());
            assert_eq!(prof.values()[g.len() - 1], p.rho_plus());
            for &r in prof.values() {
                assert!(r >= lo - 1e-6 && r <= hi + 1e-6, "E = {e}: {r} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn nonlocal_map_of_the_adjoint_path() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    let gamma = perturbed(&p, g, 0.12, 2.0);
    let adj = adjoint_path(&gamma, &p, &PdeConfig::new(g, 2.0)).unwrap();
    assert!(nonlocal_identity_defect(&adj, &p).unwrap() <= 1e-3);
}

#[test]
fn quasi_potential_decreases_along_relaxation() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    let gamma = perturbed(&p, g, 0.15, 1.0);
    let adj = adjoint_path(&gamma, &p, &PdeConfig::new(g, 3.0)).unwrap();
    let q = QuasiPotential::new(&p, g).unwrap();
    let s: Vec<f64> = adj.rho_star.profiles().iter().step_by(5).map(|r| q.value(r).unwrap().value).collect();
    for w in s.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(s[s.len() - 1] < 0.1 * s[0]);
}

#[test]
fn relaxation_suite_reaches_the_stationary_profile() {
    let p = params(-2.0);
    let g = Grid::new(201).unwrap();
    let bar = rho_bar(&p, g);
    let cfg = PdeConfig::new(g, 20.0).with_schedule(Schedule::Graded { first: 0.5, max: 2.0, growth: 1.5 });
    let suite = [perturbed(&p, g, 0.15, 1.0), perturbed(&p, g, -0.1, 2.0), perturbed(&p, g, 0.05, 3.0), {
        let w = |u: f64| 0.2 + 0.6 * (u + 1.0) / 2.0;
        DensityProfile::from_fn(g, w).unwrap()
    }];
    for gamma in &suite {
        let adj = adjoint_path(gamma, &p, &cfg).unwrap();
        let d: Vec<f64> = adj.rho_star.profiles().iter().map(|r| c1_distance(r, &bar)).collect();
        assert!(d[d.len() - 1] <= 1e-2);
        // monotone once close
        let tail: Vec<f64> = adj.rho_star.times().iter().zip(&d).filter(|(t, _)| **t >= 5.0).map(|(_, v)| *v).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn potential_equation_residuals() {
    let p = params(-2.0);
    // the residual of a stationary start is the scheme's O(h^2) truncation
    // error, below 1e-6 from M ~ 2000 on
    let fine = Grid::new(2401).unwrap();
    let bar = rho_bar(&p, fine);
    let still = adjoint_path(&bar, &p, &PdeConfig::new(fine, 0.05).with_dt(1e-4)).unwrap();
    let r = transformed_pde_check(still.forward.times(), &still.psi, &p).unwrap();
    assert!(r.sup <= 1e-6, "{}", r.sup);

    let g = Grid::new(401).unwrap();
    let cfg = PdeConfig::new(g, 1.0).with_dt(1e-4);

    let gamma = perturbed(&p, g, 0.1, 1.0);
    let adj = adjoint_path(&gamma, &p, &cfg).unwrap();
    let r = transformed_pde_check(adj.forward.times(), &adj.psi, &p).unwrap();
    assert!(r.sup <= 1e-2, "{}", r.sup);
}

#[test]
fn potential_residual_refines_at_second_order() {
    let p = params(-2.0);
    let run = |m: usize| {
        let g = Grid::new(m).unwrap();
        let gamma = DensityProfile::from_fn(g, |u| 0.5 + 0.3 * u + 0.08 * (PI * u).sin()).unwrap();
        let cfg = PdeConfig::new(g, 0.5).with_schedule(Schedule::Every(10));
        let adj = adjoint_path(&gamma, &p, &cfg).unwrap();
        // skip the initial transient
        let k = adj.forward.times().iter().position(|&t| t >= 0.1).unwrap();
        transformed_pde_check(&adj.forward.times()[k..], &adj.psi[k..], &p).unwrap()
    };
    let (a, b) = (run(201), run(401));
    let ratio = a.rms / b.rms;
    assert!((3.5..4.5).contains(&ratio), "rms ratio {ratio}");
    // the sup sits next to the boundary and is still pre-asymptotic
    assert!(a.sup / b.sup > 3.0);
}

#[test]
fn optimal_path_ends_at_the_target() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    let target = perturbed(&p, g, 0.1, 1.0);
    let opt = optimal_path(&target, &p, &PdeConfig::new(g, 3.0)).unwrap();
    assert!(opt.path.last().sup_distance(&target) <= 1e-3);
    assert!(opt.path.first().sup_distance(&opt.stationary) <= 1e-12);
    assert_eq!(opt.mollification_error, 0.0);
    let join = opt.joining_segment().unwrap();
    assert_eq!(join.len(), JOIN_STEPS + 1);
    assert!((join.horizon() - 1.0).abs() < 1e-12);
    assert!((opt.path.horizon() - 4.0).abs() < 1e-9);
    assert!(sup_diff(opt.reversed_segment().unwrap().first().values(), opt.junction.values()) < 1e-15);
}

#[test]
fn profiles_outside_m0_are_mollified() {
    let p = params(-2.0);
    let g = Grid::new(401).unwrap();
    // wrong boundary values
    let rho = DensityProfile::from_fn(g, |u| 0.5 + 0.1 * u).unwrap();
    let opt = optimal_path(&rho, &p, &PdeConfig::new(g, 1.0)).unwrap();
    assert!(opt.mollification_error > 0.0);
    assert!((opt.mollification_error - 0.2).abs() < 1e-9);
    assert_eq!(opt.target.values()[0], p.rho_minus());
    // outside the boundary layers the profile is untouched
    let mid = g.nearest(0.0);
    assert_eq!(opt.target.values()[mid], rho.values()[mid]);
    // the adjoint path itself insists on M_0
    assert!(matches!(adjoint_path(&rho, &p, &PdeConfig::new(g, 1.0)), Err(Error::Domain(_))));
}

#[test]
fn joining_constant_scales_with_mobility() {
    let p = params(-2.0);
    let g = Grid::new(101).unwrap();
    let a = DensityProfile::constant(g, 0.5).unwrap();
    let b = DensityProfile::constant(g, 0.1).unwrap();
    let k = 0.5 + 1.0 + 2.0;
    assert!((joining_constant(&p, &a, &a) - 4.0 * k * k / chi(0.5)).abs() < 1e-9);
    assert!((joining_constant(&p, &a, &b) - 4.0 * k * k / chi(0.1)).abs() < 1e-9);
}

#[test]
fn configuration_errors() {
    let g = Grid::new(101).unwrap();
    let p = params(-2.0);
    let bar = rho_bar(&p, g);
    assert!(burgers_solve(&bar, &p, &PdeConfig::new(g, 1.0).with_dt(0.0)).is_err());
    assert!(burgers_solve(&bar, &p, &PdeConfig::new(g, -1.0)).is_err());
    let rev = Params::new(p.e0(), 0.2, 0.8).unwrap();
    assert!(adjoint_path(&rho_bar(&rev, g), &rev, &PdeConfig::new(g, 1.0)).is_err());
    let coarse = PdeConfig::new(Grid::new(11).unwrap(), 1.0).with_dt(1.0);
    assert!(coarse.stability_warnings(&params(-50.0)).len() >= 2);
    assert!(PdeConfig::new(g, 1.0).stability_warnings(&p).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn maximum_principle(a in -1.0f64..1.0, b in -1.0f64..1.0, k in 1.0f64..6.0, e in -15.0f64..3.0) {
        let p = params(e);
        let g = Grid::new(81).unwrap();
        let mid = 0.5 * (p.rho_minus() + p.rho_plus());
        let half = 0.5 * (p.rho_plus() - p.rho_minus());
        let gamma = DensityProfile::from_fn(g, |u| mid + half * (a * (k * u).sin() + b * (2.0 * k * u).cos()).clamp(-1.0, 1.0)).unwrap();
        let path = burgers_solve(&gamma, &p, &PdeConfig::new(g, 0.3)).unwrap();
        for prof in path.profiles() {
            for &r in prof.values() {
                prop_assert!(r >= p.rho_minus() - 1e-14 && r <= p.rho_plus() + 1e-14);
            }
        }
    }
}
