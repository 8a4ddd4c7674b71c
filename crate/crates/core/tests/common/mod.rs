#![allow(dead_code)]

use std::path::PathBuf;

use gridkern::IndexedNetwork;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(format!("{name}.m"))
}

pub fn load(name: &str) -> IndexedNetwork {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    gridkern::load_case(&text).unwrap()
}

/// Worst `|a - b|` between two sparse matrices, position by position; entries
/// missing from one side count as zero.
pub fn max_positional_diff(a: &gridkern::CscMatrix<f64>, b: &gridkern::CscMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, j, v) in a.iter() {
        worst = worst.max((v - b.get(i, j).unwrap_or(0.0)).abs());
    }
    for (i, j, v) in b.iter() {
        worst = worst.max((v - a.get(i, j).unwrap_or(0.0)).abs());
    }
    worst
}
