//! Seeded generators. Every random draw in the crate goes through ChaCha8
//! so that results are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::Matrix;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("valid normal");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

pub fn normal_vec(rng: &mut Rng, len: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid normal");
    (0..len).map(|_| normal.sample(rng)).collect()
}
