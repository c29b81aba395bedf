//! Seeded fixtures shared by the benchmarks.

use ethbranch::branch::{BranchModel, BranchSet};
use ethbranch::linalg::{self, c64, conjugate_by, diagonalize, CMat};
use ethbranch::random::{gaussian, random_hermitian, random_state};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hermitian(n: usize, seed: u64) -> CMat {
    random_hermitian(n, 1.0 / (n as f64).sqrt(), &mut rng(seed))
}

/// Two-level system coupled to a random environment of dimension `d_e`.
pub fn model(d_e: usize, dephasing: bool, seed: u64) -> BranchModel {
    let mut r = rng(seed);
    let s = 1.0 / (d_e as f64).sqrt();
    let env = diagonalize(&random_hermitian(d_e, s, &mut r)).unwrap();
    let v = conjugate_by(&env.eigenvectors, &random_hermitian(d_e, s, &mut r)).unwrap();
    let h = if dephasing {
        linalg::diag_matrix(&[-0.25, 0.25])
    } else {
        linalg::scale(&random_hermitian(2, 1.0, &mut r), c64::new(0.3, 0.0))
    };
    let mut e_s = vec![gaussian(&mut r), gaussian(&mut r)];
    e_s.sort_by(f64::total_cmp);
    BranchModel::from_parts(e_s, h, env.eigenvalues, v).unwrap()
}

pub fn branches(d_e: usize, seed: u64) -> BranchSet {
    BranchSet::from_state(&random_state(2 * d_e, &mut rng(seed)), 2, 0.0).unwrap()
}
