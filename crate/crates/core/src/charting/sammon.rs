//! Sammon's mapping solved by forward-backward splitting.
//!
//! The smooth part is the Sammon stress
//! `f(Z) = sum_{n>l, D>0} (D_nl - ||z_n - z_l||)^2 / D_nl`, optionally plus a
//! quadratic trajectory penalty; the non-smooth part is the indicator of the
//! centering constraint `sum_n z_n = 0`, whose prox is mean removal.
//! Step sizes come from a Barzilai-Borwein estimate followed by backtracking
//! until the objective does not increase.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::pca::{classical_mds, pca_points, PcaRoute};
use super::{ChannelChart, Diagnostics};
use crate::error::{Error, Result};
use crate::features::{pairwise_dissimilarity, DissimilarityMatrix, FeatureSet};

/// Guards `(z_n - z_l) / ||z_n - z_l||` at coincident points.
pub const GRAD_EPS: f64 = 1e-12;

/// Accepted steps over which the mean relative decrease is compared with the tolerance.
const STALL_WINDOW: usize = 10;

/// Temporally ordered chart indices of one transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub indices: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySideInfo {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySideInfo {
    pub fn single(indices: Vec<usize>, alpha: f64) -> Self {
        Self {
            trajectories: vec![Trajectory { indices, alpha }],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![usize::MAX; n];
        for (u, t) in self.trajectories.iter().enumerate() {
            if t.indices.len() < 2 {
                return Err(Error::Parameter(format!("trajectory {u} has fewer than two points")));
            }
            if !(t.alpha > 0.0 && t.alpha.is_finite()) {
                return Err(Error::Parameter(format!("trajectory {u} needs a positive weight")));
            }
            for &i in &t.indices {
                if i >= n {
                    return Err(Error::Parameter(format!(
                        "trajectory {u} index {i} out of range for {n} points"
                    )));
                }
                if owner[i] != usize::MAX && owner[i] != u {
                    return Err(Error::Parameter(format!(
                        "index {i} appears in trajectories {} and {u}",
                        owner[i]
                    )));
                }
                owner[i] = u;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbsSettings {
    pub max_iterations: usize,
    /// First step size; estimated from a local Lipschitz probe when absent.
    #[serde(default)]
    pub initial_step: Option<f64>,
    pub shrink: f64,
    pub barzilai_borwein: bool,
    /// Stop once the mean relative objective decrease per accepted step,
    /// over the last few steps, falls below this.
    pub tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for FbsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            initial_step: None,
            shrink: 0.5,
            barzilai_borwein: true,
            tolerance: 1e-7,
            max_backtracks: 60,
        }
    }
}

impl FbsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be positive".into()));
        }
        if let Some(t) = self.initial_step {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Parameter("initial_step must be positive".into()));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Parameter("shrink must lie in (0, 1)".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Parameter("tolerance must be positive".into()));
        }
        if self.max_backtracks == 0 {
            return Err(Error::Parameter("max_backtracks must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `N x D'` copy of a `D' x N` chart for contiguous pair loops.
fn to_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    z.t().as_standard_layout().into_owned()
}

fn check_shapes(z: ArrayView2<'_, f64>, d: &DissimilarityMatrix) {
    assert_eq!(
        z.ncols(),
        d.len(),
        "chart has {} points, dissimilarity matrix {}",
        z.ncols(),
        d.len()
    );
}

fn stress_rows(rows: &Array2<f64>, d: &DissimilarityMatrix) -> f64 {
    let (n, k) = rows.dim();
    let zs = rows.as_slice().expect("standard layout");
    let dv = d.values.view();
    let mut total = 0.0;
    for i in 1..n {
        let zi = &zs[i * k..(i + 1) * k];
        let mut partial = 0.0;
        for l in 0..i {
            let dil = dv[(i, l)];
            if dil > 0.0 {
                let zl = &zs[l * k..(l + 1) * k];
                let r = zi.iter().zip(zl).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let e = dil - r;
                partial += e * e / dil;
            }
        }
        total += partial;
    }
    total
}

/// Sammon stress of chart `z` (`D' x N`).
pub fn sm_objective(z: ArrayView2<'_, f64>, d: &DissimilarityMatrix) -> f64 {
    check_shapes(z, d);
    stress_rows(&to_rows(z), d)
}

/// Trajectory penalty `sum_u alpha_u sum_k ||z_{i_k} - z_{i_{k+1}}||^2`.
pub fn side_info_penalty(z: ArrayView2<'_, f64>, side: &TrajectorySideInfo) -> f64 {
    side.trajectories
        .iter()
        .map(|t| {
            t.alpha
                * t.indices
                    .windows(2)
                    .map(|w| {
                        z.column(w[0])
                            .iter()
                            .zip(z.column(w[1]).iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
        })
        .sum()
}

fn stress_gradient_rows(rows: &Array2<f64>, d: &DissimilarityMatrix) -> Array2<f64> {
    let (n, k) = rows.dim();
    let zs = rows.as_slice().expect("standard layout");
    let dv = d.values.view();
    let mut g = Array2::<f64>::zeros((n, k));
    let gs = g.as_slice_mut().expect("standard layout");
    let mut diff = vec![0.0; k];
    for i in 1..n {
        for l in 0..i {
            let dil = dv[(i, l)];
            if dil <= 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for c in 0..k {
                diff[c] = zs[i * k + c] - zs[l * k + c];
                r2 += diff[c] * diff[c];
            }
            let r = r2.sqrt();
            let coef = 2.0 * (r - dil) / (dil * (r + GRAD_EPS));
            for c in 0..k {
                let v = coef * diff[c];
                gs[i * k + c] += v;
                gs[l * k + c] -= v;
            }
        }
    }
    g
}

fn add_side_gradient(g_rows: &mut Array2<f64>, rows: &Array2<f64>, side: &TrajectorySideInfo) {
    let k = rows.ncols();
    for t in &side.trajectories {
        for w in t.indices.windows(2) {
            let (a, b) = (w[0], w[1]);
            for c in 0..k {
                let v = 2.0 * t.alpha * (rows[(a, c)] - rows[(b, c)]);
                g_rows[(a, c)] += v;
                g_rows[(b, c)] -= v;
            }
        }
    }
}

/// Gradient of the Sammon stress (plus the trajectory penalty when given),
/// `D' x N`.
pub fn sm_gradient(z: ArrayView2<'_, f64>, d: &DissimilarityMatrix, side: Option<&TrajectorySideInfo>) -> Array2<f64> {
    check_shapes(z, d);
    let rows = to_rows(z);
    let mut g = stress_gradient_rows(&rows, d);
    if let Some(s) = side {
        add_side_gradient(&mut g, &rows, s);
    }
    g.t().as_standard_layout().into_owned()
}

/// Projection onto `sum_n z_n = 0`.
pub fn prox_center(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|v| v - mean);
    }
    out
}

fn prox_center_rows(rows: &mut Array2<f64>) {
    for mut col in rows.columns_mut() {
        let mean = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - mean);
    }
}

struct Problem<'a> {
    d: &'a DissimilarityMatrix,
    side: Option<&'a TrajectorySideInfo>,
}

impl Problem<'_> {
    fn objective(&self, rows: &Array2<f64>) -> f64 {
        let mut f = stress_rows(rows, self.d);
        if let Some(s) = self.side {
            f += side_info_penalty(rows.t(), s);
        }
        f
    }

    fn gradient(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut g = stress_gradient_rows(rows, self.d);
        if let Some(s) = self.side {
            add_side_gradient(&mut g, rows, s);
        }
        g
    }
}

fn frob_dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Runs FBS from `init` (`D' x N`) on dissimilarities `d`.
pub fn chart_sm_from_dissimilarity(
    d: &DissimilarityMatrix,
    init: Array2<f64>,
    settings: &FbsSettings,
    side: Option<&TrajectorySideInfo>,
) -> Result<ChannelChart> {
    settings.validate()?;
    check_shapes(init.view(), d);
    let n = d.len();
    if let Some(s) = side {
        s.validate(n)?;
    }
    let method = if side.is_some() { "sm+" } else { "sm" };
    let mut diagnostics = Diagnostics::default();
    record_settings(&mut diagnostics, settings, side);

    let mut z = to_rows(init.view());
    prox_center_rows(&mut z);
    let problem = Problem { d, side };

    if d.values.iter().all(|&v| v == 0.0) {
        let msg = "dissimilarity matrix is identically zero; returning the centered initial chart".to_string();
        log::warn!("{msg}");
        diagnostics.warnings.push(msg);
        diagnostics.final_objective = Some(problem.objective(&z));
        return Ok(finish(z, method, diagnostics));
    }

    let mut f = problem.objective(&z);
    if !f.is_finite() {
        return Err(Error::SolverDivergence { iteration: 0 });
    }
    let mut g = problem.gradient(&z);
    diagnostics.objective_history.push(f);

    let mut tau = match settings.initial_step {
        Some(t) => t,
        None => estimate_step(&problem, &z, &g),
    };
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=settings.max_iterations {
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let mut cand = &z - &(&g * tau);
            prox_center_rows(&mut cand);
            let fc = problem.objective(&cand);
            if fc.is_nan() {
                return Err(Error::SolverDivergence { iteration: it });
            }
            if fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            tau *= settings.shrink;
        }
        let Some((cand, fc)) = accepted else {
            diagnostics.warnings.push(format!(
                "no decrease found after {} backtracks at iteration {it}",
                settings.max_backtracks
            ));
            break;
        };
        if !fc.is_finite() {
            return Err(Error::SolverDivergence { iteration: it });
        }
        let gc = problem.gradient(&cand);
        if settings.barzilai_borwein {
            let s = &cand - &z;
            let y = &gc - &g;
            let sy = frob_dot(&s, &y);
            let ss = frob_dot(&s, &s);
            if sy > 0.0 && ss > 0.0 {
                tau = ss / sy;
            } else {
                tau *= 2.0;
            }
        }
        z = cand;
        g = gc;
        f = fc;
        iterations = it;
        diagnostics.objective_history.push(f);
        let hist = &diagnostics.objective_history;
        if hist.len() > STALL_WINDOW {
            let past = hist[hist.len() - 1 - STALL_WINDOW];
            let rel = (past - f) / f.abs().max(f64::MIN_POSITIVE);
            if rel < settings.tolerance * STALL_WINDOW as f64 {
                converged = true;
                break;
            }
        }
    }
    diagnostics.iterations = iterations;
    diagnostics.final_objective = Some(f);
    diagnostics.settings.insert("converged".into(), converged.to_string());
    Ok(finish(z, method, diagnostics))
}

fn finish(rows: Array2<f64>, method: &str, diagnostics: Diagnostics) -> ChannelChart {
    ChannelChart {
        points: rows.t().as_standard_layout().into_owned(),
        method: method.into(),
        diagnostics,
    }
}

/// `1/L` from a secant estimate of the gradient's Lipschitz constant.
fn estimate_step(problem: &Problem<'_>, z: &Array2<f64>, g: &Array2<f64>) -> f64 {
    let gn = frob_dot(g, g).sqrt();
    let zn = frob_dot(z, z).sqrt();
    if gn == 0.0 {
        return 1.0;
    }
    let h = 1e-4 * zn.max(1e-12) / gn;
    let mut probe = z - &(g * h);
    prox_center_rows(&mut probe);
    let gp = problem.gradient(&probe);
    let dg = &gp - g;
    let s = &probe - z;
    let l = frob_dot(&dg, &dg).sqrt() / frob_dot(&s, &s).sqrt().max(f64::MIN_POSITIVE);
    if l > 0.0 && l.is_finite() {
        1.0 / l
    } else {
        1.0
    }
}

fn record_settings(diag: &mut Diagnostics, s: &FbsSettings, side: Option<&TrajectorySideInfo>) {
    let m = &mut diag.settings;
    m.insert("max_iterations".into(), s.max_iterations.to_string());
    m.insert(
        "initial_step".into(),
        s.initial_step.map_or_else(|| "auto".to_string(), |t| t.to_string()),
    );
    m.insert("shrink".into(), s.shrink.to_string());
    m.insert("barzilai_borwein".into(), s.barzilai_borwein.to_string());
    m.insert("tolerance".into(), s.tolerance.to_string());
    if let Some(side) = side {
        m.insert("trajectories".into(), side.trajectories.len().to_string());
        m.insert(
            "alphas".into(),
            side.trajectories
                .iter()
                .map(|t| t.alpha.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
}

/// Sammon chart of a feature set, initialized with its PCA chart.
pub fn chart_sm(
    features: &FeatureSet,
    dims: usize,
    settings: &FbsSettings,
    side: Option<&TrajectorySideInfo>,
) -> Result<ChannelChart> {
    let d = pairwise_dissimilarity(features)?;
    let (init, warnings) = {
        let (p, _, w) = pca_points(features.vectors.view(), dims, PcaRoute::Auto)?;
        (p, w)
    };
    let mut chart = chart_sm_from_dissimilarity(&d, init, settings, side)?;
    chart.diagnostics.warnings.splice(0..0, warnings);
    Ok(chart)
}

/// Sammon chart from dissimilarities alone, initialized by classical MDS.
pub fn chart_sm_dissimilarity_only(
    d: &DissimilarityMatrix,
    dims: usize,
    settings: &FbsSettings,
    side: Option<&TrajectorySideInfo>,
) -> Result<ChannelChart> {
    let (init, warnings) = classical_mds(d, dims)?;
    let mut chart = chart_sm_from_dissimilarity(d, init, settings, side)?;
    chart.diagnostics.warnings.splice(0..0, warnings);
    Ok(chart)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::euclidean_distances;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist_of(points: &Array2<f64>) -> DissimilarityMatrix {
        DissimilarityMatrix {
            values: euclidean_distances(points.t()),
        }
    }

    fn random_chart(dims: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((dims, n), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn perfect_embedding_has_zero_objective_and_gradient() {
        let z = random_chart(2, 12, 1);
        let d = dist_of(&z);
        assert!(sm_objective(z.view(), &d) < 1e-24);
        let g = sm_gradient(z.view(), &d, None);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn three_point_hand_case() {
        // D = [[0,1,2],[1,0,1],[2,1,0]], z = (0), (2), (3) on a line
        let d = DissimilarityMatrix {
            values: array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]],
        };
        let z = array![[0.0, 2.0, 3.0]];
        // pairs: (1,0): (1-2)^2/1 = 1; (2,0): (2-3)^2/2 = 0.5; (2,1): (1-1)^2 = 0
        assert!((sm_objective(z.view(), &d) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_dissimilarity_pairs_are_skipped() {
        let d = DissimilarityMatrix {
            values: array![[0.0, 0.0], [0.0, 0.0]],
        };
        let z = array![[0.0, 5.0]];
        assert_eq!(sm_objective(z.view(), &d), 0.0);
        assert!(sm_gradient(z.view(), &d, None).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_a_perfect_embedding_increases_stress() {
        let z = random_chart(2, 8, 2);
        let d = dist_of(&z);
        let base = sm_objective(z.view(), &d);
        for c in [0.5, 0.9, 1.1, 2.0] {
            assert!(sm_objective((&z * c).view(), &d) > base);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = random_chart(2, 6, 3);
        let d = dist_of(&random_chart(3, 6, 4));
        let g = sm_gradient(z.view(), &d, None);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..6 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[(i, j)] += h;
                zm[(i, j)] -= h;
                let fd = (sm_objective(zp.view(), &d) - sm_objective(zm.view(), &d)) / (2.0 * h);
                assert!(
                    (fd - g[(i, j)]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "{fd} vs {}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn side_gradient_vanishes_mid_trajectory() {
        let z = array![[0.0, 1.0, 2.0], [0.0, 0.5, 1.0]];
        let d = DissimilarityMatrix {
            values: Array2::zeros((3, 3)),
        };
        let side = TrajectorySideInfo::single(vec![0, 1, 2], 3.0);
        let g = sm_gradient(z.view(), &d, Some(&side));
        assert!(g.column(1).iter().all(|v| v.abs() < 1e-15));
        assert!(g.column(0).iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn side_gradient_matches_penalty_derivative() {
        let z = random_chart(2, 5, 5);
        let d = dist_of(&random_chart(2, 5, 6));
        let side = TrajectorySideInfo::single(vec![4, 1, 3], 0.7);
        let g = sm_gradient(z.view(), &d, Some(&side));
        let total = |z: &Array2<f64>| sm_objective(z.view(), &d) + side_info_penalty(z.view(), &side);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..5 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[(i, j)] += h;
                zm[(i, j)] -= h;
                let fd = (total(&zp) - total(&zm)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn prox_center_properties() {
        let z = random_chart(3, 10, 7);
        let c = prox_center(z.view());
        for row in c.rows() {
            assert!(row.mean().unwrap().abs() < 1e-14);
        }
        for (a, b) in prox_center(c.view()).iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let same = Array2::from_shape_fn((2, 4), |(i, _)| i as f64 + 3.0);
        assert!(prox_center(same.view()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn side_info_validation() {
        assert!(TrajectorySideInfo::single(vec![0], 1.0).validate(5).is_err());
        assert!(TrajectorySideInfo::single(vec![0, 9], 1.0).validate(5).is_err());
        assert!(TrajectorySideInfo::single(vec![0, 1], 0.0).validate(5).is_err());
        let overlapping = TrajectorySideInfo {
            trajectories: vec![
                Trajectory {
                    indices: vec![0, 1],
                    alpha: 1.0,
                },
                Trajectory {
                    indices: vec![1, 2],
                    alpha: 1.0,
                },
            ],
        };
        assert!(overlapping.validate(5).is_err());
        assert!(TrajectorySideInfo::single(vec![3, 1, 2], 1.0).validate(5).is_ok());
    }

    #[test]
    fn recovers_perturbed_planar_geometry() {
        let truth = prox_center(random_chart(2, 30, 8).view());
        let d = dist_of(&truth);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = &truth + &Array2::from_shape_fn((2, 30), |_| 0.05 * (rng.random::<f64>() - 0.5));
        let chart = chart_sm_from_dissimilarity(&d, init, &FbsSettings::default(), None).unwrap();
        let hist = &chart.diagnostics.objective_history;
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        assert!(
            chart.diagnostics.final_objective.unwrap() < 1e-8,
            "{:?}",
            chart.diagnostics.final_objective
        );
        assert!(chart.centering_defect() < 1e-12);
    }

    #[test]
    fn zero_dissimilarity_returns_centered_init() {
        let d = DissimilarityMatrix {
            values: Array2::zeros((4, 4)),
        };
        let init = array![[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 4.0]];
        let chart = chart_sm_from_dissimilarity(&d, init.clone(), &FbsSettings::default(), None).unwrap();
        assert_eq!(chart.points, prox_center(init.view()));
        assert_eq!(chart.diagnostics.warnings.len(), 1);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let d = dist_of(&random_chart(2, 4, 10));
        let bad = FbsSettings {
            shrink: 1.5,
            ..FbsSettings::default()
        };
        assert!(chart_sm_from_dissimilarity(&d, random_chart(2, 4, 11), &bad, None).is_err());
    }

    #[test]
    fn stronger_penalty_tightens_trajectory() {
        let truth = prox_center(random_chart(2, 25, 12).view());
        let d = dist_of(&truth);
        let traj: Vec<usize> = (0..8).collect();
        let gap = |alpha: f64| {
            let side = TrajectorySideInfo::single(traj.clone(), alpha);
            let chart = chart_sm_from_dissimilarity(&d, truth.clone(), &FbsSettings::default(), Some(&side)).unwrap();
            traj.windows(2)
                .map(|w| {
                    let (a, b) = (chart.points.column(w[0]), chart.points.column(w[1]));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .fold(0.0, f64::max)
        };
        let gaps: Vec<f64> = [0.1, 1.0, 10.0, 100.0, 1000.0].iter().map(|&a| gap(a)).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[4] < 0.05 * gaps[0], "{gaps:?}");
    }
}
