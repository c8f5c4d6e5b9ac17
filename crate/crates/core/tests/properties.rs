mod common;

use std::f64::consts::PI;

use channel_charting::charting::{prox_center, sm_gradient, sm_objective, ChannelChart, TrajectorySideInfo};
use channel_charting::features::{
    apply_transform, dft_matrix, extract_features, pairwise_dissimilarity, raw_second_moment, scale_moment, to_angular,
};
use channel_charting::metrics::{continuity, max_k, rank_neighbors, trustworthiness};
use channel_charting::{channel, Area, ChannelModel, Domain, FeatureConfig, ScenarioSpec, Transform};
use common::{distances, grid_points, oracle_ct, oracle_tw, random_points};
use ndarray::{array, Array2, Array3};
use num_complex::Complex64;
use proptest::prelude::*;

fn small_spec(model: ChannelModel, seed: u64) -> ScenarioSpec {
    let area = Area {
        x_min: -50.0,
        y_min: 30.0,
        width: 100.0,
        height: 50.0,
    };
    ScenarioSpec {
        area,
        num_locations: 24,
        snapshots_per_location: 4,
        curve_points: vec![],
        rng_seed: seed,
        model,
        ..ScenarioSpec::default()
    }
}

fn similarity(points: &Array2<f64>, angle: f64, scale: f64, shift: [f64; 2]) -> Array2<f64> {
    let (s, c) = angle.sin_cos();
    Array2::from_shape_fn(points.dim(), |(i, d)| {
        let (x, y) = (points[(i, 0)], points[(i, 1)]);
        let r = if d == 0 { c * x - s * y } else { s * x + c * y };
        scale * r + shift[d]
    })
}

#[test]
fn ct_tw_match_set_oracle_exhaustively_for_small_n() {
    for n in 3..=8 {
        for seed in 0..6u64 {
            let pairs = [
                (random_points(n, 2, seed), random_points(n, 2, seed + 100)),
                (grid_points(n, 2, seed), grid_points(n, 2, seed + 100)),
            ];
            for (a, b) in &pairs {
                let (da, db) = (distances(a), distances(b));
                for k in 1..=max_k(n) {
                    let (ct, _) = continuity(da.view(), db.view(), k).unwrap();
                    let (tw, _) = trustworthiness(da.view(), db.view(), k).unwrap();
                    let (ct_o, tw_o) = (oracle_ct(&da, &db, k), oracle_tw(&da, &db, k));
                    for i in 0..n {
                        assert!((ct[i] - ct_o[i]).abs() < 1e-12, "ct n={n} k={k} i={i}");
                        assert!((tw[i] - tw_o[i]).abs() < 1e-12, "tw n={n} k={k} i={i}");
                    }
                }
            }
        }
    }
}

#[test]
fn score_goes_negative_above_half_n() {
    // point 0's eleven nearest neighbors all become its farthest
    let x = Array2::from_shape_fn((19, 1), |(i, _)| i as f64);
    let z = Array2::from_shape_fn((19, 1), |(i, _)| match i {
        0 => 0.0,
        1..=11 => 100.0 + i as f64,
        _ => (i - 11) as f64,
    });
    let (ct, _) = continuity(distances(&x).view(), distances(&z).view(), 11).unwrap();
    assert!((ct[0] - (1.0 - 56.0 / 44.0)).abs() < 1e-12);
    let (ct9, _) = continuity(distances(&x).view(), distances(&z).view(), 9).unwrap();
    assert!(ct9.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn ranking_is_a_permutation_per_row() {
    let d = distances(&grid_points(12, 2, 3));
    let r = rank_neighbors(d.view()).unwrap();
    for i in 0..12 {
        let mut seen: Vec<u32> = (0..12).filter(|&j| j != i).map(|j| r.rank[(i, j)]).collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..12).collect::<Vec<u32>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn continuity_and_trustworthiness_are_dual(seed in 0u64..10_000, n in 4usize..40, kf in 0.0f64..1.0) {
        let a = distances(&random_points(n, 3, seed));
        let b = distances(&random_points(n, 2, seed ^ 0x5555));
        let k = 1 + ((max_k(n) - 1) as f64 * kf) as usize;
        let (ct_ab, g1) = continuity(a.view(), b.view(), k).unwrap();
        let (tw_ba, g2) = trustworthiness(b.view(), a.view(), k).unwrap();
        prop_assert_eq!(ct_ab, tw_ba);
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn scores_lie_in_unit_interval_up_to_half_n(seed in 0u64..10_000, n in 4usize..40, kf in 0.0f64..1.0) {
        let a = distances(&grid_points(n, 2, seed));
        let b = distances(&random_points(n, 2, seed + 1));
        let k = 1 + ((n / 2 - 1) as f64 * kf) as usize;
        for v in continuity(a.view(), b.view(), k).unwrap().0.into_iter().chain(trustworthiness(a.view(), b.view(), k).unwrap().0) {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn identical_representation_scores_one(seed in 0u64..10_000, n in 4usize..40, kf in 0.0f64..1.0) {
        let a = distances(&grid_points(n, 2, seed));
        let k = 1 + ((max_k(n) - 1) as f64 * kf) as usize;
        prop_assert_eq!(continuity(a.view(), a.view(), k).unwrap().1, 1.0);
        prop_assert_eq!(trustworthiness(a.view(), a.view(), k).unwrap().1, 1.0);
    }

    #[test]
    fn scores_invariant_to_similarity_of_either_side(
        seed in 0u64..10_000,
        n in 5usize..40,
        angle in -PI..PI,
        scale in 0.1f64..10.0,
        tx in -100.0f64..100.0,
        ty in -100.0f64..100.0,
    ) {
        let x = random_points(n, 2, seed);
        let z = random_points(n, 2, seed + 7);
        let k = (n / 4).max(1);
        let base = (
            continuity(distances(&x).view(), distances(&z).view(), k).unwrap().1,
            trustworthiness(distances(&x).view(), distances(&z).view(), k).unwrap().1,
        );
        let z2 = similarity(&z, angle, scale, [tx, ty]);
        let x2 = similarity(&x, -angle, 1.0 / scale, [ty, tx]);
        for (xa, za) in [(&x, &z2), (&x2, &z)] {
            let moved = (
                continuity(distances(xa).view(), distances(za).view(), k).unwrap().1,
                trustworthiness(distances(xa).view(), distances(za).view(), k).unwrap().1,
            );
            prop_assert_eq!(moved, base);
        }
    }

    #[test]
    fn prox_center_is_an_idempotent_projection(seed in 0u64..10_000, n in 1usize..30) {
        let z = random_points(n, 2, seed).t().to_owned() * 5.0 + 3.0;
        let p = prox_center(z.view());
        for row in p.rows() {
            prop_assert!(row.sum().abs() < 1e-12 * n as f64 * 10.0);
        }
        let pp = prox_center(p.view());
        for (a, b) in p.iter().zip(pp.iter()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
        // closest centered point: the residual is constant per row
        for (zr, pr) in z.rows().into_iter().zip(p.rows()) {
            let shift = zr[0] - pr[0];
            for (a, b) in zr.iter().zip(pr.iter()) {
                prop_assert!((a - b - shift).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sammon_objective_is_rigid_motion_invariant(seed in 0u64..10_000, n in 3usize..25, angle in -PI..PI) {
        let fs = random_points(n, 5, seed);
        let d = channel_charting::DissimilarityMatrix { values: distances(&fs) };
        let z = random_points(n, 2, seed + 1);
        let moved = similarity(&z, angle, 1.0, [2.0, -1.0]);
        let (a, b) = (sm_objective(z.t(), &d), sm_objective(moved.t(), &d));
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn sammon_gradient_sums_to_zero(seed in 0u64..10_000, n in 3usize..25) {
        // translation invariance of the objective
        let d = channel_charting::DissimilarityMatrix { values: distances(&random_points(n, 4, seed)) };
        let z = random_points(n, 2, seed + 3);
        let side = TrajectorySideInfo::single((0..n.min(5)).collect(), 0.7);
        let g = sm_gradient(z.t(), &d, Some(&side));
        for row in g.rows() {
            let scale: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            prop_assert!(row.sum().abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn global_phase_leaves_features_unchanged(seed in 0u64..1000, theta in -PI..PI, nlos in any::<bool>()) {
        let model = if nlos { ChannelModel::scatterer_nlos(8, seed) } else { ChannelModel::VanillaLos };
        let ds = channel::synthesize_dataset(&small_spec(model, seed)).unwrap();
        let mut rotated = ds.clone();
        let phase = Complex64::from_polar(1.0, theta);
        rotated.snapshots.mapv_inplace(|v| v * phase);
        for domain in [Domain::Antenna, Domain::Angular] {
            for transform in [Transform::Complex, Transform::Abs, Transform::Angle] {
                let cfg = FeatureConfig::new(domain, transform, 16.0);
                let a = extract_features(&ds, &cfg).unwrap();
                let b = extract_features(&rotated, &cfg).unwrap();
                for (x, y) in a.vectors.iter().zip(b.vectors.iter()) {
                    let tol = if transform == Transform::Angle { 1e-9 } else { 1e-12 };
                    // angles near the branch cut may wrap
                    let diff = if transform == Transform::Angle { ((x - y + PI).rem_euclid(2.0 * PI) - PI).abs() } else { (x - y).abs() };
                    prop_assert!(diff <= tol * x.abs().max(1e-3), "{:?} {:?}: {} vs {}", domain, transform, x, y);
                }
            }
        }
    }

    #[test]
    fn angular_transform_preserves_frobenius_distances(seed in 0u64..1000, m in 1usize..12) {
        let mut rng_pts = random_points(2 * m, 4, seed).into_iter();
        let mut snap = || Array2::from_shape_fn((3, m), |_| Complex64::new(rng_pts.next().unwrap_or(0.3), rng_pts.next().unwrap_or(-0.2)));
        let (a, b) = (raw_second_moment(snap().view()).unwrap(), raw_second_moment(snap().view()).unwrap());
        let (aa, ab) = (to_angular(&a), to_angular(&b));
        prop_assert!((a.distance(&b) - aa.distance(&ab)).abs() <= 1e-12 * a.distance(&b).max(1e-12));
        prop_assert!((a.frobenius_norm() - aa.frobenius_norm()).abs() <= 1e-12 * a.frobenius_norm().max(1e-12));
        prop_assert!(aa.hermitian_defect() <= 1e-12 * aa.frobenius_norm().max(1e-12));
    }
}

#[test]
fn quarter_turn_phases_leave_features_bit_identical() {
    let ds = channel::synthesize_dataset(&small_spec(ChannelModel::scatterer_nlos(12, 3), 5)).unwrap();
    let cfg = FeatureConfig::default();
    let base = extract_features(&ds, &cfg).unwrap();
    for phase in [
        Complex64::new(0.0, 1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, -1.0),
    ] {
        let mut rotated = ds.clone();
        rotated.snapshots.mapv_inplace(|v| v * phase);
        assert_eq!(extract_features(&rotated, &cfg).unwrap(), base);
    }
}

#[test]
fn unscaled_features_have_unit_norm() {
    let ds = channel::synthesize_dataset(&small_spec(ChannelModel::VanillaLos, 2)).unwrap();
    let m = ds.csi_len();
    for n in 0..ds.num_locations() {
        let raw = raw_second_moment(ds.snapshots.index_axis(ndarray::Axis(0), n)).unwrap();
        let scaled = scale_moment(&raw, f64::INFINITY, m).unwrap();
        assert!((scaled.frobenius_norm() - 1.0).abs() < 1e-12);
        let v = apply_transform(&scaled, Transform::Complex);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn complex_features_in_both_domains_give_equal_dissimilarities() {
    let ds = channel::synthesize_dataset(&small_spec(ChannelModel::scatterer_nlos(10, 9), 4)).unwrap();
    let a = pairwise_dissimilarity(
        &extract_features(&ds, &FeatureConfig::new(Domain::Antenna, Transform::Complex, 16.0)).unwrap(),
    )
    .unwrap();
    let b = pairwise_dissimilarity(
        &extract_features(&ds, &FeatureConfig::new(Domain::Angular, Transform::Complex, 16.0)).unwrap(),
    )
    .unwrap();
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
    }
}

#[test]
fn dft_is_unitary() {
    for m in [1usize, 2, 5, 32] {
        let d = dft_matrix(m);
        let prod = d.dot(&d.t().mapv(|v| v.conj()));
        for ((i, j), v) in prod.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v.re - want).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }
}

#[test]
fn single_snapshot_single_antenna_moment() {
    let s = Array3::from_elem((1, 1, 1), Complex64::new(3.0, 4.0));
    let m = raw_second_moment(s.index_axis(ndarray::Axis(0), 0)).unwrap();
    assert_eq!(m.matrix, array![[Complex64::new(25.0, 0.0)]]);
    let c = ChannelChart::from_points(array![[1.0, 3.0]], "x");
    assert_eq!(c.centering_defect(), 2.0);
}
