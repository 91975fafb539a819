#![allow(dead_code)]

use std::path::PathBuf;

use autoreparam::data::{load_dataset, DatasetBundle};
use autoreparam::effect::ModelProgram;
use autoreparam::zoo::MODELS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Every zoo model built on its checked-in fixture.
pub fn zoo_models() -> Vec<(&'static str, ModelProgram)> {
    MODELS
        .iter()
        .map(|e| {
            let bundle = match e.file {
                Some(f) => load_dataset(e.dataset, &data_dir().join(f)).unwrap(),
                None => DatasetBundle::default(),
            };
            (e.name, (e.build)(&bundle).unwrap())
        })
        .collect()
}

/// `n` points with coordinates uniform in `[-r, r]`.
pub fn random_points(dim: usize, n: usize, r: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-r..r)).collect())
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
