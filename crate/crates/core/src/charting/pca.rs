use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{ChannelChart, Diagnostics};
use crate::error::{Error, Result};
use crate::features::{DissimilarityMatrix, FeatureSet};

/// Which symmetric matrix is eigendecomposed.
///
/// Both give the same chart: the Gram route uses the `N x N` matrix
/// `F F^T` of centered features, the covariance route the `M' x M'` matrix
/// `F^T F` and maps its eigenvectors back through `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaRoute {
    Gram,
    Covariance,
    /// Whichever of the two is smaller.
    Auto,
}

/// Relative eigenvalue floor below which a component counts as absent.
const RANK_TOL: f64 = 1e-12;

/// Top-`dims` principal coordinates of the rows of `vectors` (`N x M'`).
///
/// Returns the `dims x N` chart, its eigenvalues (descending), and warnings
/// for components that had to be zero-padded.
pub fn pca_points(
    vectors: ArrayView2<'_, f64>,
    dims: usize,
    route: PcaRoute,
) -> Result<(Array2<f64>, Vec<f64>, Vec<String>)> {
    let (n, m) = vectors.dim();
    if n < 2 {
        return Err(Error::Contract("PCA needs at least two points".into()));
    }
    if dims == 0 {
        return Err(Error::Parameter("chart dimension must be positive".into()));
    }
    let mean = vectors.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m));
    let centered = &vectors - &mean.insert_axis(Axis(0));
    let route = match route {
        PcaRoute::Auto if n <= m => PcaRoute::Gram,
        PcaRoute::Auto => PcaRoute::Covariance,
        r => r,
    };
    let sym = match route {
        PcaRoute::Gram => centered.dot(&centered.t()),
        _ => centered.t().dot(&centered),
    };
    let (values, vecs) = top_eigenpairs(&sym, dims);
    let mut points = Array2::zeros((dims, n));
    let mut warnings = Vec::new();
    let floor = values.first().copied().unwrap_or(0.0).max(0.0) * RANK_TOL * sym.nrows() as f64;
    let mut kept = Vec::with_capacity(dims);
    for d in 0..dims {
        let lambda = values.get(d).copied().unwrap_or(0.0);
        if d >= values.len() || lambda <= floor || lambda <= 0.0 {
            warnings.push(format!(
                "feature rank below {dims}: chart coordinate {d} padded with zeros"
            ));
            kept.push(0.0);
            continue;
        }
        let v = vecs.column(d);
        let row = match route {
            PcaRoute::Gram => v.mapv(|x| x * lambda.sqrt()),
            _ => centered.dot(&v),
        };
        points.row_mut(d).assign(&fix_sign(row));
        kept.push(lambda);
    }
    Ok((points, kept, warnings))
}

/// Flips `row` so that its largest-magnitude entry is positive.
fn fix_sign(row: Array1<f64>) -> Array1<f64> {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row.get(best).is_some_and(|&v| v < 0.0) {
        -row
    } else {
        row
    }
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue, at most `k`.
fn top_eigenpairs(sym: &Array2<f64>, k: usize) -> (Vec<f64>, Array2<f64>) {
    let n = sym.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (sym[(i, j)] + sym[(j, i)]));
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((n, idx.len()), |(r, c)| eig.eigenvectors[(r, idx[c])]);
    (values, vecs)
}

/// PCA channel chart of a feature set.
pub fn chart_pca(features: &FeatureSet, dims: usize) -> Result<ChannelChart> {
    let (points, eigenvalues, warnings) = pca_points(features.vectors.view(), dims, PcaRoute::Auto)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut diagnostics = Diagnostics {
        warnings,
        ..Diagnostics::default()
    };
    diagnostics.settings.insert("dims".into(), dims.to_string());
    diagnostics.settings.insert(
        "eigenvalues".into(),
        eigenvalues
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    Ok(ChannelChart {
        points,
        method: "pca".into(),
        diagnostics,
    })
}

/// Classical multidimensional scaling: principal coordinates of the
/// double-centered `-D^2 / 2`. Equals PCA of the features whenever the
/// dissimilarities are their Euclidean distances.
pub fn classical_mds(d: &DissimilarityMatrix, dims: usize) -> Result<(Array2<f64>, Vec<String>)> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Contract("MDS needs at least two points".into()));
    }
    let sq = d.values.mapv(|v| -0.5 * v * v);
    let row_mean = sq.mean_axis(Axis(1)).expect("nonempty");
    let total = row_mean.mean().expect("nonempty");
    let gram = Array2::from_shape_fn((n, n), |(i, j)| sq[(i, j)] - row_mean[i] - row_mean[j] + total);
    let (values, vecs) = top_eigenpairs(&gram, dims);
    let floor = values.first().copied().unwrap_or(0.0).max(0.0) * RANK_TOL * n as f64;
    let mut points = Array2::zeros((dims, n));
    let mut warnings = Vec::new();
    for dd in 0..dims {
        let lambda = values.get(dd).copied().unwrap_or(0.0);
        if lambda <= floor || lambda <= 0.0 {
            warnings.push(format!(
                "dissimilarity rank below {dims}: coordinate {dd} padded with zeros"
            ));
            continue;
        }
        points
            .row_mut(dd)
            .assign(&fix_sign(vecs.column(dd).mapv(|x| x * lambda.sqrt())));
    }
    Ok((points, warnings))
}
