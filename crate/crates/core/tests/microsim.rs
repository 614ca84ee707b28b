use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use wasep_core::grid::Params;
use wasep_core::microsim::*;
use wasep_core::numerics::logistic;
use wasep_core::Error;

fn params(e: f64) -> Params {
    Params::new(e, 0.2, 0.8).unwrap()
}

fn reversible() -> Params {
    Params::reversible(0.2, 0.8).unwrap()
}

/// Independent null-vector solve: least-squares on `[L^T; 1^T] mu = [0; 1]`.
fn null_vector(l: &DMatrix<f64>) -> Vec<f64> {
    let s = l.nrows();
    let mut a = DMatrix::zeros(s + 1, s);
    a.view_mut((0, 0), (s, s)).copy_from(&l.transpose());
    a.row_mut(s).fill(1.0);
    let mut b = DVector::zeros(s + 1);
    b[s] = 1.0;
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.cholesky().unwrap().solve(&atb).iter().copied().collect()
}

#[test]
fn empty_lattice_only_creates_at_the_boundary() {
    let p = Params::new(0.0, 0.2, 0.8).unwrap();
    let rates = jump_rates(&LatticeConfig::empty(2).unwrap(), &p);
    assert_eq!(rates.len(), 2);
    for t in rates {
        match t.kind {
            Move::Flip { x: -1 } => assert!((t.rate - 2.0 * 0.2).abs() < 1e-15),
            Move::Flip { x: 1 } => assert!((t.rate - 2.0 * 0.8).abs() < 1e-15),
            other => panic!("unexpected move {other:?}"),
        }
    }
}

#[test]
fn full_lattice_exit_rate() {
    let (n, e) = (3usize, -2.0);
    let p = params(e);
    let rates = jump_rates(&LatticeConfig::full(n).unwrap(), &p);
    assert!(rates.iter().all(|t| matches!(t.kind, Move::Flip { .. })));
    let total: f64 = rates.iter().map(|t| t.rate).sum();
    let a = e / (2.0 * n as f64);
    let want = 0.5 * (n * n) as f64 * ((1.0 - 0.2) * (-a).exp() + (1.0 - 0.8) * a.exp());
    assert!((total - want).abs() < 1e-12);
}

#[test]
fn bulk_rates_use_exponential_weights() {
    let (n, e) = (4usize, -3.0);
    let p = params(e);
    // particle at x = 0 may hop right (eta(x+1) - eta(x) = -1) or left
    let mut occ = vec![0u8; 7];
    occ[3] = 1;
    let rates = jump_rates(&LatticeConfig::new(n, occ).unwrap(), &p);
    let speed = 0.5 * (n * n) as f64;
    let a = e / (2.0 * n as f64);
    let right = rates.iter().find(|t| t.kind == Move::Exchange { x: 0 }).unwrap().rate;
    let left = rates.iter().find(|t| t.kind == Move::Exchange { x: -1 }).unwrap().rate;
    assert!((right - speed * a.exp()).abs() < 1e-12);
    assert!((left - speed * (-a).exp()).abs() < 1e-12);
}

#[test]
fn reversible_chain_has_the_product_measure() {
    let p = reversible();
    for n in 2..=4 {
        let mu = exact_stationary(&p, n).unwrap();
        let prod = reversible_measure(&p, n);
        let worst = mu.iter().zip(&prod).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "N = {n}: {worst}");
        assert!(detailed_balance_defect(&prod, &p, n).unwrap() <= 1e-12);
    }
    // the marginals are logistic of the linear potential
    let m = product_potential(&p, 3);
    assert!((m[2] - 0.5 * (p.phi_minus() + p.phi_plus())).abs() < 1e-15);
    assert!((logistic(m[0]) - marginals(&reversible_measure(&p, 3), 5)[0]).abs() < 1e-12);
}

#[test]
fn generator_sanity_for_any_field() {
    for e in [-5.0, -2.0, 0.0, 1.0, 4.0] {
        let p = params(e);
        let l = generator(&p, 2).unwrap();
        for i in 0..l.nrows() {
            assert!(l.row(i).sum().abs() < 1e-12);
            for j in 0..l.ncols() {
                if i != j {
                    assert!(l[(i, j)] >= 0.0);
                }
            }
        }
        let mu = exact_stationary(&p, 2).unwrap();
        assert!(mu.iter().all(|&m| m > 0.0));
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let balance = DVector::from_vec(mu.clone()).transpose() * &l;
        assert!(balance.amax() < 1e-12);
    }
}

#[test]
fn dense_and_iterative_solvers_agree_with_an_independent_null_vector() {
    for (e, n) in [(-2.0, 3usize), (-2.0, 5), (3.0, 5)] {
        let p = params(e);
        let mu = exact_stationary(&p, n).unwrap();
        let oracle = null_vector(&generator(&p, n).unwrap());
        let worst = mu.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "E = {e}, N = {n}: {worst}");
    }
}

#[test]
fn driven_chain_is_not_a_product_measure() {
    let p = params(-2.0);
    let mu = exact_stationary(&p, 3).unwrap();
    let tv = product_fit_distance(&mu, 5);
    assert!(tv > 1e-3, "{tv}");
    assert!(detailed_balance_defect(&mu, &p, 3).unwrap() > 1e-6);
    // at E0 the fit is exact
    let rev = exact_stationary(&reversible(), 3).unwrap();
    assert!(product_fit_distance(&rev, 5) < 1e-12);
}

#[test]
fn exact_solver_guards_its_dimension() {
    assert!(matches!(exact_stationary(&params(-2.0), MAX_EXACT_N + 1), Err(Error::DimensionTooLarge { .. })));
    assert!(exact_stationary(&params(-2.0), 1).is_err());
}

#[test]
fn simulated_occupations_match_the_product_measure() {
    let p = reversible();
    let n = 4;
    let sample = ctmc_simulate(&SimParams::new(p, n, 400.0, 2024, 32)).unwrap();
    let want: Vec<f64> = product_potential(&p, n).iter().map(|&v| logistic(v)).collect();
    for (i, w) in want.iter().enumerate() {
        let z = (sample.mean[i] - w).abs() / sample.std_error[i];
        assert!(z <= 3.0, "site {i}: {} vs {w} (z = {z})", sample.mean[i]);
    }
}

#[test]
fn simulated_occupations_match_the_exact_driven_measure() {
    let p = params(-2.0);
    let n = 3;
    let sample = ctmc_simulate(&SimParams::new(p, n, 400.0, 99, 32)).unwrap();
    let want = marginals(&exact_stationary(&p, n).unwrap(), 2 * n - 1);
    for (i, w) in want.iter().enumerate() {
        let z = (sample.mean[i] - w).abs() / sample.std_error[i];
        assert!(z <= 3.0, "site {i}: {} vs {w} (z = {z})", sample.mean[i]);
    }
}

#[test]
fn seeds_determine_trajectories() {
    let mut sim = SimParams::new(params(-2.0), 6, 2.0, 5, 3);
    sim.observe = vec![0.5, 11.0];
    let a = ctmc_simulate(&sim).unwrap();
    let b = ctmc_simulate(&sim).unwrap();
    for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
        assert_eq!(x.time_average, y.time_average);
        assert_eq!(x.jumps, y.jumps);
        assert_eq!(x.final_config, y.final_config);
        assert_eq!(x.snapshots, y.snapshots);
    }
    assert_eq!(a.trajectories[0].snapshots.len(), 2);
    // streams differ within a run, and seeds across runs
    assert_ne!(a.trajectories[0].time_average, a.trajectories[1].time_average);
    sim.seed = 6;
    let c = ctmc_simulate(&sim).unwrap();
    assert_ne!(a.trajectories[0].time_average, c.trajectories[0].time_average);
    assert_eq!(a.generator, "ChaCha8");
}

#[test]
fn empirical_density_examples() {
    let empty = empirical_density(&LatticeConfig::empty(4).unwrap());
    assert!(empty.values.iter().all(|&v| v == 0.0));
    assert_eq!(empty.integral(), 0.0);

    let full = empirical_density(&LatticeConfig::full(4).unwrap());
    assert!(full.values.iter().all(|&v| v == 1.0));
    assert!((full.integral() - 7.0 / 4.0).abs() < 1e-15);

    let mut occ = vec![0u8; 7];
    occ[3] = 1;
    let single = empirical_density(&LatticeConfig::new(4, occ).unwrap());
    assert_eq!(single.width(), 0.25);
    assert_eq!(single.at(0.0), 1.0);
    assert_eq!(single.at(-0.125), 1.0);
    assert_eq!(single.at(0.124), 1.0);
    assert_eq!(single.at(0.125), 0.0);
    assert_eq!(single.at(-0.126), 0.0);
    assert!((single.integral() - 0.25).abs() < 1e-15);
}

#[test]
fn block_averages() {
    let (c, v) = block_average(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], 4, 2);
    assert_eq!(v, vec![0.5, 1.0, 0.0, 1.0]);
    assert!((c[0] - (-2.5 / 4.0)).abs() < 1e-15);
    assert!((c[3] - 3.0 / 4.0).abs() < 1e-15);
}

#[test]
fn invalid_simulation_parameters() {
    assert!(ctmc_simulate(&SimParams::new(params(-2.0), 1, 1.0, 0, 1)).is_err());
    assert!(ctmc_simulate(&SimParams::new(params(-2.0), 4, 0.0, 0, 1)).is_err());
    assert!(ctmc_simulate(&SimParams::new(params(-2.0), 4, 1.0, 0, 0)).is_err());
    assert!(LatticeConfig::new(3, vec![0, 1, 2, 0, 0]).is_err());
    assert!(LatticeConfig::new(3, vec![0, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generator_rows_and_signs(e in -20.0f64..20.0, rm in 0.01f64..0.9, t in 0.05f64..0.95, n in 2usize..4) {
        let p = Params::new(e, rm, rm + t * (0.99 - rm)).unwrap();
        let l = generator(&p, n).unwrap();
        for i in 0..l.nrows() {
            prop_assert!(l.row(i).sum().abs() < 1e-9 * l[(i, i)].abs().max(1.0));
            for j in 0..l.ncols() {
                if i != j {
                    prop_assert!(l[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn reversible_detailed_balance(rm in 0.05f64..0.9, t in 0.05f64..0.95, n in 2usize..4) {
        let p = Params::reversible(rm, rm + t * (0.95 - rm)).unwrap();
        prop_assert!(detailed_balance_defect(&reversible_measure(&p, n), &p, n).unwrap() <= 1e-12);
    }
}
