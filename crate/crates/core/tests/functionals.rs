use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasep_core::elgp::solve_phi;
use wasep_core::functionals::*;
use wasep_core::grid::{DensityProfile, Grid, Params, PotentialProfile};
use wasep_core::numerics::{chi, logistic, neg_entropy, slope_integrand, softplus};
use wasep_core::stationary::{asymmetric_constants, constant_a_e, solve_current};

fn base() -> Params {
    Params::new(0.0, 0.2, 0.8).unwrap()
}

fn random_density(rng: &mut ChaCha8Rng, g: Grid) -> DensityProfile {
    let level: f64 = rng.random_range(0.25..0.75);
    let modes: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| (rng.random_range(-0.15..0.15), (k + 1) as f64, rng.random_range(0.0..6.3)))
        .collect();
    DensityProfile::from_fn(g, |u| {
        (level + modes.iter().map(|(a, w, ph)| a * (w * std::f64::consts::PI * u + ph).sin()).sum::<f64>()).clamp(0.01, 0.99)
    })
    .unwrap()
}

fn simpson<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    let h = 2.0 / n as f64;
    let mut s = f(-1.0) + f(1.0);
    for i in 1..n {
        s += f(-1.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn ground_state_is_zero() {
    let g = Grid::new(401).unwrap();
    for &e in &[-10.0, -2.0, -1.0, 0.0, 0.5 * base().e0(), 0.9 * base().e0()] {
        let q = QuasiPotential::new(&base().with_field(e), g).unwrap();
        let s = q.value(&q.stationary().rho_bar).unwrap();
        assert!(s.value.abs() <= 1e-6, "E = {e}: {}", s.value);
        assert!(s.value >= -1e-12, "E = {e}: {}", s.value);
    }
}

#[test]
fn relative_entropy_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Grid::new(401).unwrap();
    for &e in &[-10.0, -2.0, 0.0, 0.5 * base().e0()] {
        let q = QuasiPotential::new(&base().with_field(e), g).unwrap();
        for _ in 0..5 {
            let rho = random_density(&mut rng, g);
            let s = q.value(&rho).unwrap().value;
            let bound = q.relative_entropy(&rho);
            assert!(s >= bound - 1e-8, "E = {e}: {s} < {bound}");
            // the bound is the trial value at the stationary potential
            let at_bar = q.trial(&rho, &q.stationary().phi_bar).unwrap();
            assert!((at_bar - bound).abs() < 1e-10);
        }
    }
}

#[test]
fn trial_value_matches_continuum_oracle() {
    let p = base().with_field(-3.0);
    let j = solve_current(&p).unwrap();
    let a_e = constant_a_e(&p, j).unwrap();
    let rho_f = |u: f64| 0.5 + 0.3 * (2.0 * u).sin();
    // admissible potential: affine plus a bump with positive slope
    let phi_f = |u: f64| p.affine_potential(u) + 0.2 * (1.0 - u * u);
    let dphi_f = |u: f64| 0.5 * (p.phi_plus() - p.phi_minus()) - 0.4 * u;
    let oracle = simpson(
        |u| {
            let (r, f) = (rho_f(u), phi_f(u));
            neg_entropy(r) + (1.0 - r) * f - softplus(f) + slope_integrand(dphi_f(u), p.e()) - a_e
        },
        200_000,
    );
    let mut errs = vec![];
    for m in [1001usize, 2001, 4001] {
        let g = Grid::new(m).unwrap();
        let rho = DensityProfile::from_fn(g, rho_f).unwrap();
        let phi = PotentialProfile::new(g, g.sample(phi_f)).unwrap();
        errs.push((g_e(&rho, &phi, &p).unwrap() - oracle).abs());
    }
    assert!(errs[2] <= 1e-6, "{errs:?}");
    assert!(errs[0] / errs[2] > 10.0, "not second order: {errs:?}");
}

#[test]
fn zero_field_limit() {
    let g = Grid::new(401).unwrap();
    let rho = DensityProfile::from_fn(g, |u| 0.5 + 0.2 * u.sin()).unwrap();
    let phi = PotentialProfile::affine(g, &base());
    let g0 = g_0(&rho, &phi, &base()).unwrap();
    for &e in &[-1e-4, 1e-4] {
        let ge = g_e(&rho, &phi, &base().with_field(e)).unwrap();
        assert!((ge - g0).abs() <= 1e-3);
    }
    // linear potential, G_0 against the continuum value with A_0 closed form
    let a0 = 0.3f64.ln() + 1.0;
    let slope = 0.5 * (base().phi_plus() - base().phi_minus());
    let oracle = simpson(
        |u| {
            let r = 0.5 + 0.2 * u.sin();
            let f = base().affine_potential(u);
            neg_entropy(r) + (1.0 - r) * f - softplus(f) + slope.ln() + 1.0 - a0
        },
        100_000,
    );
    let fine = Grid::new(4001).unwrap();
    let rho = DensityProfile::from_fn(fine, |u| 0.5 + 0.2 * u.sin()).unwrap();
    let v = g_0(&rho, &PotentialProfile::affine(fine, &base()), &base()).unwrap();
    assert!((v - oracle).abs() < 1e-6);
}

#[test]
fn trial_functional_rejects_inadmissible_slopes() {
    let g = Grid::new(11).unwrap();
    let p = base().with_field(0.5);
    let rho = DensityProfile::constant(g, 0.5).unwrap();
    let flat = PotentialProfile::new(g, g.sample(|u| 0.25 * (u + 1.0) + p.phi_minus())).unwrap();
    assert!(g_e(&rho, &flat, &p).is_err());
}

#[test]
fn maximality_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Grid::new(401).unwrap();
    let p = base().with_field(-2.0);
    let q = QuasiPotential::new(&p, g).unwrap();
    let rho = random_density(&mut rng, g);
    let sol = solve_phi(&rho, &p).unwrap();
    let best = q.trial(&rho, &sol.phi).unwrap();
    for _ in 0..10 {
        let k = rng.random_range(1..5) as f64;
        let bump: Vec<f64> = g.sample(|u| (k * std::f64::consts::PI * (u + 1.0) / 2.0).sin());
        let moved: Vec<f64> = sol.phi.values().iter().zip(&bump).map(|(a, b)| a + 1e-2 * b).collect();
        let moved = PotentialProfile::new(g, moved).unwrap();
        assert!(q.trial(&rho, &moved).unwrap() <= best + 1e-8);
    }
}

#[test]
fn convexity_midpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Grid::new(201).unwrap();
    let q = QuasiPotential::new(&base().with_field(-2.0), g).unwrap();
    for _ in 0..10 {
        let a = random_density(&mut rng, g);
        let b = random_density(&mut rng, g);
        let lam: f64 = rng.random_range(0.05..0.95);
        let mid = DensityProfile::new(g, a.values().iter().zip(b.values()).map(|(x, y)| lam * x + (1.0 - lam) * y).collect()).unwrap();
        let lhs = q.value(&mid).unwrap().value;
        let rhs = lam * q.value(&a).unwrap().value + (1.0 - lam) * q.value(&b).unwrap().value;
        assert!(lhs <= rhs + 1e-6);
    }
}

#[test]
fn reversible_quasi_potential() {
    let g = Grid::new(401).unwrap();
    let p = Params::reversible(0.2, 0.8).unwrap();
    let bar = DensityProfile::from_fn(g, |u| logistic(p.affine_potential(u))).unwrap();
    assert!(s_e0(&bar, &p).unwrap().abs() < 1e-14);
    let ones = DensityProfile::constant(g, 1.0).unwrap();
    let oracle = simpson(|u| -logistic(p.affine_potential(u)).ln(), 100_000);
    assert!((s_e0(&ones, &p).unwrap() - oracle).abs() < 1e-5);
    // fine grid oracle for a random profile
    let f = |u: f64| 0.4 + 0.3 * (3.0 * u).cos();
    let rel = |u: f64| {
        let (r, b) = (f(u), logistic(p.affine_potential(u)));
        r * (r / b).ln() + (1.0 - r) * ((1.0 - r) / (1.0 - b)).ln()
    };
    let fine = Grid::new(20001).unwrap();
    let v = s_e0(&DensityProfile::from_fn(fine, f).unwrap(), &p).unwrap();
    assert!((v - simpson(rel, 200_000)).abs() < 1e-8);
}

#[test]
fn asymmetric_trial_examples() {
    let g = Grid::new(201).unwrap();
    let p = base().with_field(-5.0);
    let (rbar, _) = asymmetric_constants(&p);
    let flat = PotentialProfile::new(g, vec![(rbar / (1.0 - rbar)).ln(); g.len()]).unwrap();
    let rho_bar = DensityProfile::constant(g, rbar).unwrap();
    assert!(g_a(&rho_bar, &flat, &p).unwrap().abs() < 1e-14);
    assert!(s_a(&rho_bar, &p).unwrap().value.abs() < 1e-14);
    let rho = DensityProfile::from_fn(g, |u| 0.5 + 0.3 * (2.0 * u).sin()).unwrap();
    let rel = relative_entropy(&rho, &rho_bar);
    assert!((g_a(&rho, &flat, &p).unwrap() - rel).abs() < 1e-12);
    assert!(s_a(&rho, &p).unwrap().value >= rel - 1e-12);
}

#[test]
fn asymmetric_maximizer_follows_pointwise_formula_when_monotone() {
    let g = Grid::new(201).unwrap();
    let p = base().with_field(-5.0);
    // decreasing rho inside (rho_-, rho_+): the pointwise maximizer is increasing
    let rho = DensityProfile::from_fn(g, |u| 0.5 - 0.2 * u).unwrap();
    let phi = asymmetric_maximizer(&rho, &p);
    for i in 0..g.len() {
        let r = rho.values()[i];
        assert!((phi.values()[i] - ((1.0 - r) / r).ln()).abs() < 1e-12);
    }
}

/// Exhaustive maximization over monotone potentials restricted to `levels`
/// equally spaced values in `[phi_-, phi_+]`, by dynamic programming.
fn monotone_grid_search(rho: &DensityProfile, p: &Params, levels: usize) -> f64 {
    let g = rho.grid();
    let w = g.weights();
    let (_, a_a) = asymmetric_constants(p);
    let vals: Vec<f64> = (0..levels)
        .map(|k| p.phi_minus() + (p.phi_plus() - p.phi_minus()) * k as f64 / (levels - 1) as f64)
        .collect();
    let node = |i: usize, f: f64| {
        let r = rho.values()[i];
        w[i] * (neg_entropy(r) + (1.0 - r) * f - softplus(f) - a_a)
    };
    // best[k]: best partial sum with current level index <= k
    let mut best: Vec<f64> = (0..levels).map(|k| node(0, vals[k])).collect();
    for k in 1..levels {
        best[k] = best[k].max(best[k - 1]);
    }
    for i in 1..g.len() {
        let mut next = vec![f64::NEG_INFINITY; levels];
        for k in 0..levels {
            next[k] = best[k] + node(i, vals[k]);
        }
        for k in 1..levels {
            next[k] = next[k].max(next[k - 1]);
        }
        best = next;
    }
    best[levels - 1]
}

#[test]
fn pav_matches_grid_search_and_beats_staircases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = Grid::new(21).unwrap();
    let p = base().with_field(-5.0);
    for _ in 0..10 {
        let rho = DensityProfile::new(g, (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let pav = s_a(&rho, &p).unwrap().value;
        let dp = monotone_grid_search(&rho, &p, 2000);
        assert!(dp <= pav + 1e-10);
        assert!(pav - dp <= 1e-3);
        for _ in 0..2000 {
            let mut v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(p.phi_minus()..p.phi_plus())).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let trial = g_a(&rho, &PotentialProfile::new(g, v).unwrap(), &p).unwrap();
            assert!(trial <= pav + 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trial_functionals_are_concave_in_the_potential(
        e in -20.0f64..1.2,
        b1 in -0.3f64..0.3,
        b2 in -0.3f64..0.3,
        k in 1u32..4,
    ) {
        let p = base().with_field(e);
        let g = Grid::new(101).unwrap();
        let rho = DensityProfile::from_fn(g, |u| 0.5 + 0.3 * (2.0 * u).cos()).unwrap();
        let q = QuasiPotential::new(&p, g).unwrap();
        let bump = |b: f64| {
            PotentialProfile::new(g, g.sample(|u| p.affine_potential(u) + b * (k as f64 * std::f64::consts::PI * (u + 1.0) / 2.0).sin() / (k as f64 * 4.0))).unwrap()
        };
        let (f1, f2) = (bump(b1), bump(b2));
        let mid = PotentialProfile::new(g, f1.values().iter().zip(f2.values()).map(|(a, b)| 0.5 * (a + b)).collect()).unwrap();
        if let (Ok(v1), Ok(v2), Ok(vm)) = (q.trial(&rho, &f1), q.trial(&rho, &f2), q.trial(&rho, &mid)) {
            prop_assert!(vm >= 0.5 * (v1 + v2) - 1e-12);
        }
        let a1 = g_a(&rho, &f1, &p).unwrap();
        let a2 = g_a(&rho, &f2, &p).unwrap();
        prop_assert!(g_a(&rho, &mid, &p).unwrap() >= 0.5 * (a1 + a2) - 1e-12);
    }

    #[test]
    fn quasi_potential_is_nonnegative(seed in 0u64..1000, e in -15.0f64..1.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new(101).unwrap();
        let rho = random_density(&mut rng, g);
        let s = s_e(&rho, &base().with_field(e)).unwrap();
        prop_assert!(s.value >= 0.0);
        let sa = s_a(&rho, &base()).unwrap();
        prop_assert!(sa.value >= -1e-12);
        let _ = chi(0.5);
    }
}
