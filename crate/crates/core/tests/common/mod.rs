#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank of `j` among the neighbors of `i` by counting; ties go to the lower index.
pub fn rank_by_counting(d: &Array2<f64>, i: usize, j: usize) -> usize {
    let n = d.nrows();
    1 + (0..n)
        .filter(|&l| l != i && l != j)
        .filter(|&l| d[(i, l)] < d[(i, j)] || (d[(i, l)] == d[(i, j)] && l < j))
        .count()
}

pub fn neighborhood(d: &Array2<f64>, i: usize, k: usize) -> BTreeSet<usize> {
    (0..d.nrows())
        .filter(|&j| j != i && rank_by_counting(d, i, j) <= k)
        .collect()
}

fn set_score(near: &Array2<f64>, far: &Array2<f64>, k: usize) -> Vec<f64> {
    let n = near.nrows();
    let norm = 2.0 / (k as f64 * (2.0 * n as f64 - 3.0 * k as f64 - 1.0));
    (0..n)
        .map(|i| {
            let a = neighborhood(near, i, k);
            let b = neighborhood(far, i, k);
            let penalty: usize = a.difference(&b).map(|&j| rank_by_counting(far, i, j) - k).sum();
            1.0 - norm * penalty as f64
        })
        .collect()
}

/// Point-wise continuity from neighborhood sets.
pub fn oracle_ct(original: &Array2<f64>, representation: &Array2<f64>, k: usize) -> Vec<f64> {
    set_score(original, representation, k)
}

/// Point-wise trustworthiness from neighborhood sets.
pub fn oracle_tw(original: &Array2<f64>, representation: &Array2<f64>, k: usize) -> Vec<f64> {
    set_score(representation, original, k)
}

pub fn distances(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        points
            .row(i)
            .iter()
            .zip(points.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

pub fn random_points(n: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dims), |_| rng.random_range(-1.0..1.0))
}

/// Points on a small integer grid, so distances tie often.
pub fn grid_points(n: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dims), |_| rng.random_range(0..3) as f64)
}
