//! Rank-based neighborhood preservation scores: continuity and trustworthiness.
//!
//! Both compare an original point set with a representation of it through
//! the neighbor rankings induced by their distance matrices. Continuity
//! penalizes original neighbors that drop out of the representation
//! neighborhood; trustworthiness penalizes representation neighbors that were
//! not neighbors originally. Each is the other with the roles swapped.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::channel::SpatialPointSet;
use crate::charting::ChannelChart;
use crate::error::{Error, Result};
use crate::features::euclidean_distances;

/// Per-row neighbor ranking; ties are broken by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRanking {
    /// `rank[(i, j)]` in `1..N` for `j != i`, 0 on the diagonal.
    pub rank: Array2<u32>,
    /// `order[(i, k)]` is the index of the `(k+1)`-th nearest neighbor of `i`.
    pub order: Array2<u32>,
}

impl NeighborRanking {
    pub fn len(&self) -> usize {
        self.rank.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.nrows() == 0
    }
}

/// Neighborhood preservation at one neighborhood size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub k: usize,
    pub ct_global: f64,
    pub tw_global: f64,
    pub ct_std: f64,
    pub tw_std: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ct_pointwise: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tw_pointwise: Vec<f64>,
}

/// Default neighborhood size, 5% of the point count rounded down.
pub fn default_k(n: usize) -> usize {
    n / 20
}

/// Largest `K` with a positive normalizer `K (2N - 3K - 1)`.
pub fn max_k(n: usize) -> usize {
    // 3K < 2N - 1
    if n < 2 {
        0
    } else {
        (2 * n - 2) / 3
    }
}

pub fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 1 || k > max_k(n) {
        return Err(Error::Parameter(format!(
            "neighborhood size {k} out of range 1..={} for {n} points",
            max_k(n)
        )));
    }
    Ok(())
}

fn check_distance_matrix(dist: ArrayView2<'_, f64>) -> Result<()> {
    let (n, m) = dist.dim();
    if n != m {
        return Err(Error::Contract(format!("distance matrix is {n} x {m}, not square")));
    }
    for i in 0..n {
        if dist[(i, i)] != 0.0 {
            return Err(Error::Contract(format!(
                "distance matrix diagonal entry {i} is nonzero"
            )));
        }
        for j in (i + 1)..n {
            let (a, b) = (dist[(i, j)], dist[(j, i)]);
            if a != b || a.is_nan() {
                return Err(Error::Contract(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Ranks every point's neighbors by ascending distance.
pub fn rank_neighbors(dist: ArrayView2<'_, f64>) -> Result<NeighborRanking> {
    check_distance_matrix(dist)?;
    let n = dist.nrows();
    let mut rank = Array2::<u32>::zeros((n, n));
    let mut order = Array2::<u32>::zeros((n, n.saturating_sub(1)));
    let mut idx: Vec<u32> = Vec::with_capacity(n);
    for i in 0..n {
        let row = dist.row(i);
        idx.clear();
        idx.extend((0..n as u32).filter(|&j| j as usize != i));
        // stable sort keeps ascending index among equal distances
        idx.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]));
        for (k, &j) in idx.iter().enumerate() {
            rank[(i, j as usize)] = k as u32 + 1;
            order[(i, k)] = j;
        }
    }
    Ok(NeighborRanking { rank, order })
}

/// Point-wise penalty shared by both scores: for each `i`, sum over the
/// `K` nearest neighbors in `near` whose rank in `far` exceeds `K` of
/// `far_rank - K`, normalized so that the result lies in `[0, 1]`.
fn pointwise_score(near: &NeighborRanking, far: &NeighborRanking, k: usize) -> Vec<f64> {
    let n = near.len();
    let norm = 2.0 / (k as f64 * (2 * n - 3 * k - 1) as f64);
    (0..n)
        .map(|i| {
            let mut penalty = 0u64;
            for c in 0..k {
                let j = near.order[(i, c)] as usize;
                let r = far.rank[(i, j)] as usize;
                if r > k {
                    penalty += (r - k) as u64;
                }
            }
            1.0 - norm * penalty as f64
        })
        .collect()
}

fn check_pair(original: &NeighborRanking, representation: &NeighborRanking, k: usize) -> Result<()> {
    if original.len() != representation.len() {
        return Err(Error::Contract(format!(
            "original has {} points, representation {}",
            original.len(),
            representation.len()
        )));
    }
    check_k(original.len(), k)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Continuity from precomputed rankings.
pub fn continuity_ranked(
    original: &NeighborRanking,
    representation: &NeighborRanking,
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    check_pair(original, representation, k)?;
    let pw = pointwise_score(original, representation, k);
    let g = mean_std(&pw).0;
    Ok((pw, g))
}

/// Trustworthiness from precomputed rankings.
pub fn trustworthiness_ranked(
    original: &NeighborRanking,
    representation: &NeighborRanking,
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    check_pair(original, representation, k)?;
    let pw = pointwise_score(representation, original, k);
    let g = mean_std(&pw).0;
    Ok((pw, g))
}

/// Point-wise and global continuity of `representation` w.r.t. `original`.
pub fn continuity(
    original: ArrayView2<'_, f64>,
    representation: ArrayView2<'_, f64>,
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    check_k(original.nrows(), k)?;
    continuity_ranked(&rank_neighbors(original)?, &rank_neighbors(representation)?, k)
}

/// Point-wise and global trustworthiness of `representation` w.r.t. `original`.
pub fn trustworthiness(
    original: ArrayView2<'_, f64>,
    representation: ArrayView2<'_, f64>,
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    check_k(original.nrows(), k)?;
    trustworthiness_ranked(&rank_neighbors(original)?, &rank_neighbors(representation)?, k)
}

/// Full report from precomputed rankings.
pub fn quality_report(original: &NeighborRanking, representation: &NeighborRanking, k: usize) -> Result<QualityReport> {
    let (ct_pointwise, ct_global) = continuity_ranked(original, representation, k)?;
    let (tw_pointwise, tw_global) = trustworthiness_ranked(original, representation, k)?;
    Ok(QualityReport {
        k,
        ct_global,
        tw_global,
        ct_std: mean_std(&ct_pointwise).1,
        tw_std: mean_std(&tw_pointwise).1,
        ct_pointwise,
        tw_pointwise,
    })
}

/// CT/TW between ground-truth positions and a chart.
pub fn evaluate_chart(positions: &SpatialPointSet, chart: &ChannelChart, k: usize) -> Result<QualityReport> {
    if positions.len() != chart.len() {
        return Err(Error::Contract(format!(
            "{} positions but the chart has {} points",
            positions.len(),
            chart.len()
        )));
    }
    let original = rank_neighbors(euclidean_distances(positions.positions.view()).view())?;
    let representation = rank_neighbors(euclidean_distances(chart.points.t()).view())?;
    quality_report(&original, &representation, k)
}

/// `(k, ct, tw)` for every `k` in `ks`.
pub fn sweep(
    original: &NeighborRanking,
    representation: &NeighborRanking,
    ks: &[usize],
) -> Result<Vec<(usize, f64, f64)>> {
    ks.iter()
        .map(|&k| {
            let (_, ct) = continuity_ranked(original, representation, k)?;
            let (_, tw) = trustworthiness_ranked(original, representation, k)?;
            Ok((k, ct, tw))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Array2<f64> {
        let n = xs.len();
        Array2::from_shape_fn((n, n), |(i, j)| (xs[i] - xs[j]).abs())
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
    }

    #[test]
    fn collinear_ranks() {
        let r = rank_neighbors(line(&[0.0, 1.0, 3.0]).view()).unwrap();
        assert_eq!(r.rank[(1, 0)], 1);
        assert_eq!(r.rank[(1, 2)], 2);
        assert_eq!(r.rank[(1, 1)], 0);
    }

    #[test]
    fn ties_rank_by_index() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let r = rank_neighbors(d.view()).unwrap();
        assert_eq!(r.order.row(2).to_vec(), vec![0, 1, 3]);
        assert_eq!(r.rank[(2, 3)], 3);
    }

    #[test]
    fn ranks_match_argsort() {
        let p = random_points(10, 3, 1);
        let d = euclidean_distances(p.view());
        let r = rank_neighbors(d.view()).unwrap();
        for i in 0..10 {
            let mut idx: Vec<usize> = (0..10).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| d[(i, a)].partial_cmp(&d[(i, b)]).unwrap().then(a.cmp(&b)));
            for (k, &j) in idx.iter().enumerate() {
                assert_eq!(r.rank[(i, j)] as usize, k + 1);
            }
            let mut seen: Vec<u32> = (0..10).filter(|&j| j != i).map(|j| r.rank[(i, j)]).collect();
            seen.sort();
            assert_eq!(seen, (1..10).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let d = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(matches!(rank_neighbors(d.view()), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_is_perfect() {
        let d = euclidean_distances(random_points(40, 2, 2).view());
        for k in [1, 2, 5, max_k(40)] {
            assert_eq!(continuity(d.view(), d.view(), k).unwrap().1, 1.0);
            assert_eq!(trustworthiness(d.view(), d.view(), k).unwrap().1, 1.0);
        }
    }

    #[test]
    fn k_range_is_enforced() {
        let d = euclidean_distances(random_points(10, 2, 3).view());
        assert!(continuity(d.view(), d.view(), 0).is_err());
        // 3K < 2N - 1 = 19 -> K <= 6
        assert!(continuity(d.view(), d.view(), 6).is_ok());
        assert!(continuity(d.view(), d.view(), 7).is_err());
    }

    #[test]
    fn one_swapped_neighbor_by_hand() {
        // original on a line 0..5; representation swaps points 4 and 5
        let orig = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let rep = line(&[0.0, 1.0, 2.0, 3.0, 5.0, 4.0]);
        let (ct, _) = continuity(orig.view(), rep.view(), 1).unwrap();
        // N = 6, K = 1: normalizer 2 / (1 * (12 - 3 - 1)) = 1/4
        // i=3: orig NN is 2 (tie 2/4 -> index 2); rep rank of 2 from 3 is 1 -> ok
        // i=4: orig NN is 3; rep: point 4 sits at 5, so 3 is at distance 2,
        //      5 at distance 1 -> rank(4,3) = 2, penalty 1
        // i=5: orig NN is 4; rep: 5 sits at 4, with 3 and 4 both at distance 1,
        //      the tie goes to index 3 -> rank(5,4) = 2, penalty 1
        let expected = [1.0, 1.0, 1.0, 1.0, 0.75, 0.75];
        assert_eq!(ct, expected.to_vec());
    }

    #[test]
    fn duality() {
        let a = euclidean_distances(random_points(15, 3, 4).view());
        let b = euclidean_distances(random_points(15, 2, 5).view());
        let tw = trustworthiness(a.view(), b.view(), 3).unwrap();
        let ct = continuity(b.view(), a.view(), 3).unwrap();
        assert_eq!(tw, ct);
    }

    #[test]
    fn similarity_transform_is_perfect() {
        let pos = random_points(50, 2, 6);
        let (c, s) = (0.6f64, 0.8f64);
        let moved = Array2::from_shape_fn((50, 2), |(i, j)| {
            let (x, y) = (pos[(i, 0)], pos[(i, 1)]);
            3.0 * if j == 0 { c * x - s * y } else { s * x + c * y } + 7.0
        });
        let chart = ChannelChart::from_points(moved.t().to_owned(), "test");
        let rep = evaluate_chart(&SpatialPointSet::new(pos), &chart, 5).unwrap();
        assert_eq!(rep.ct_global, 1.0);
        assert_eq!(rep.tw_global, 1.0);
        assert_eq!(rep.ct_std, 0.0);
    }

    #[test]
    fn collapsed_representation_is_poor() {
        let pos = random_points(200, 2, 7);
        let orig = euclidean_distances(pos.view());
        let rep = Array2::<f64>::zeros((200, 200));
        let (pw, tw) = trustworthiness(orig.view(), rep.view(), 10).unwrap();
        assert!(tw < 0.9, "tw {tw}");
        assert!(pw.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn default_k_is_five_percent() {
        assert_eq!(default_k(2048), 102);
        assert_eq!(default_k(19), 0);
    }
}
