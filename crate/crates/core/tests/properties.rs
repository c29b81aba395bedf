#![allow(clippy::needless_range_loop)]

use ethbranch::branch::{operator_phi_matrix, rdm_from_branches, split_by_eth_parts, BranchModel, BranchSet, EthSplit, Propagator};
use ethbranch::expansion::{build_y_operators, split_g_terms, YSplits};
use ethbranch::harness::compare::trace_distance;
use ethbranch::harness::persist::{parse_rdm_csv, rdm_csv};
use ethbranch::harness::ArtifactMeta;
use ethbranch::linalg::{self, c64, conjugate_by, diagonalize, hermitian_defect, max_abs, max_abs_diff, CMat};
use ethbranch::master::{dephasing_solution, integrate_master_equation, lindblad_rhs, DephasingSpec, LindbladSpec};
use ethbranch::random::{gaussian, random_density_matrix, random_hermitian, random_state};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_spec(d: usize, tau: f64, r: &mut ChaCha8Rng) -> LindbladSpec {
    let mut e_s: Vec<f64> = (0..d).map(|_| gaussian(r)).collect();
    e_s.sort_by(f64::total_cmp);
    let mut w = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let x = r.random_range(0.0..2.0);
            w[a][b] = x;
            w[b][a] = x;
        }
    }
    LindbladSpec::new(e_s, random_hermitian(d, 0.7, r), w, tau).unwrap()
}

fn random_model(ds: usize, de: usize, r: &mut ChaCha8Rng) -> BranchModel {
    let s = 1.0 / (de as f64).sqrt();
    let env = diagonalize(&random_hermitian(de, s, r)).unwrap();
    let v = conjugate_by(&env.eigenvectors, &random_hermitian(de, s, r)).unwrap();
    let mut e_s: Vec<f64> = (0..ds).map(|_| gaussian(r)).collect();
    e_s.sort_by(f64::total_cmp);
    let h = linalg::scale(&random_hermitian(ds, 1.0, r), c64::new(r.random_range(0.0..1.0), 0.0));
    BranchModel::from_parts(e_s, h, env.eigenvalues, v).unwrap()
}

fn random_split(de: usize, r: &mut ChaCha8Rng) -> EthSplit {
    EthSplit { o0: gaussian(r), smooth: (0..de).map(|_| gaussian(r)).collect() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lindblad_preserves_trace_and_hermiticity(seed in any::<u64>(), d in 2usize..6, tau in 0.0f64..3.0) {
        let mut r = rng(seed);
        let spec = random_spec(d, tau, &mut r);
        let rho = random_density_matrix(d, &mut r);
        let l = lindblad_rhs(&rho, &spec).unwrap();
        prop_assert!(linalg::trace(&l).norm() < 1e-12);
        prop_assert!(hermitian_defect(&l) < 1e-12);
    }

    #[test]
    fn diagonal_jump_matches_closed_form(seed in any::<u64>(), d in 2usize..5, tau in 0.05f64..1.0, w in 0.1f64..2.0) {
        let mut r = rng(seed);
        let mut e_s: Vec<f64> = (0..d).map(|_| gaussian(&mut r)).collect();
        e_s.sort_by(f64::total_cmp);
        let h_diag: Vec<f64> = (0..d).map(|_| gaussian(&mut r)).collect();
        let spec = LindbladSpec::uniform(e_s.clone(), linalg::diag_matrix(&h_diag), w, tau).unwrap();
        let rho0 = random_density_matrix(d, &mut r);
        let traj = integrate_master_equation(&spec, &rho0, &[0.0, 1.0, 2.0], 0.005).unwrap();
        let dep = DephasingSpec::new(&h_diag, w * tau).unwrap();
        for (t, rho) in traj.times.iter().zip(&traj.rho) {
            prop_assert!(max_abs_diff(rho, &dephasing_solution(&e_s, &rho0, &dep, *t)) < 1e-8);
        }
    }

    #[test]
    fn rdm_is_a_density_matrix(seed in any::<u64>(), ds in 1usize..5, de in 1usize..40) {
        let mut r = rng(seed);
        let b = BranchSet::from_state(&random_state(ds * de, &mut r), ds, 0.0).unwrap();
        let rho = rdm_from_branches(&b);
        prop_assert!(hermitian_defect(&rho) < 1e-14);
        prop_assert!((linalg::trace(&rho) - c64::new(1.0, 0.0)).norm() < 1e-12);
        let eig = diagonalize(&rho).unwrap();
        prop_assert!(eig.eigenvalues.iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn propagation_conserves_norm(seed in any::<u64>(), de in 4usize..24, t in 0.0f64..50.0) {
        let mut r = rng(seed);
        let m = random_model(2, de, &mut r);
        let prop = Propagator::new(&m).unwrap();
        let b = BranchSet::from_state(&random_state(2 * de, &mut r), 2, 0.0).unwrap();
        prop_assert!((prop.propagate(&b, t).unwrap().global_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eth_split_reassembles(seed in any::<u64>(), ds in 1usize..4, de in 2usize..30) {
        let mut r = rng(seed);
        let b = BranchSet::from_state(&random_state(ds * de, &mut r), ds, 0.0).unwrap();
        let o = random_hermitian(de, 1.0, &mut r);
        let parts = split_by_eth_parts(&b, &o, &random_split(de, &mut r)).unwrap();
        let full = operator_phi_matrix(&b, &o).unwrap();
        let sum = &parts[0] + &parts[1] + &parts[2] + &parts[3];
        prop_assert!(max_abs_diff(&sum, &full) <= 1e-12 * max_abs(&full).max(1.0));
    }

    #[test]
    fn ledger_partitions_hold(seed in any::<u64>(), ds in 2usize..4, de in 4usize..20) {
        let mut r = rng(seed);
        let m = random_model(ds, de, &mut r);
        let ys = build_y_operators(&m);
        let splits = YSplits {
            splits: [EthSplit::constant(1.0, de), random_split(de, &mut r), EthSplit::constant(0.0, de), random_split(de, &mut r)],
        };
        let b = BranchSet::from_state(&random_state(ds * de, &mut r), ds, 0.3).unwrap();
        let led = split_g_terms(&b, &m, &ys, &splits).unwrap();
        prop_assert!(led.check().is_ok(), "{:?}", led.check());
        let total: CMat = (1..=4).map(|eta| led.eta_part(2, eta)).fold(CMat::zeros(ds, ds), |a, x| a + x);
        prop_assert!(max_abs_diff(&total, &led.g2) <= 1e-10 * max_abs(&led.g2).max(1.0));
    }

    #[test]
    fn trace_distance_is_a_metric(seed in any::<u64>(), d in 1usize..5) {
        let mut r = rng(seed);
        let (a, b, c) = (random_density_matrix(d, &mut r), random_density_matrix(d, &mut r), random_density_matrix(d, &mut r));
        let ab = trace_distance(&a, &b).unwrap();
        prop_assert!((ab - trace_distance(&b, &a).unwrap()).abs() < 1e-14);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(ab <= trace_distance(&a, &c).unwrap() + trace_distance(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn rdm_csv_round_trips_exactly(seed in any::<u64>(), d in 1usize..4, n in 1usize..6) {
        let mut r = rng(seed);
        let rho: Vec<CMat> = (0..n).map(|_| random_density_matrix(d, &mut r)).collect();
        let times: Vec<f64> = (0..n).map(|k| k as f64 * r.random_range(0.001..1.0)).collect();
        let meta = ArtifactMeta { config_hash: format!("{seed:x}"), seed };
        let s = rdm_csv(&meta, &times, &rho).unwrap();
        let (m2, t2, r2) = parse_rdm_csv(&s).unwrap();
        prop_assert_eq!(&m2, &meta);
        prop_assert_eq!(&t2, &times);
        prop_assert!(rho.iter().zip(&r2).all(|(x, y)| max_abs_diff(x, y) == 0.0));
        prop_assert_eq!(rdm_csv(&m2, &t2, &r2).unwrap(), s);
    }
}
