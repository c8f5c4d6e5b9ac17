//! Channel features built from the raw second moment of CSI snapshots.
//!
//! Per location: `H = (1/T) sum h h^H`, rescaled by a power of its Frobenius
//! norm to undo path loss, optionally conjugated by the unitary DFT matrix
//! (beamspace), then flattened through an element-wise map.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiDataset, SpatialPointSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Antenna,
    Angular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Complex,
    Real,
    Imag,
    Angle,
    Abs,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Antenna, Domain::Angular];

    pub fn code(self) -> u8 {
        match self {
            Domain::Antenna => 0,
            Domain::Angular => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Antenna => "antenna",
            Domain::Angular => "angular",
        }
    }
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::Complex,
        Transform::Real,
        Transform::Imag,
        Transform::Angle,
        Transform::Abs,
    ];

    pub fn code(self) -> u8 {
        match self {
            Transform::Complex => 0,
            Transform::Real => 1,
            Transform::Imag => 2,
            Transform::Angle => 3,
            Transform::Abs => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Complex => "complex",
            Transform::Real => "real",
            Transform::Imag => "imag",
            Transform::Angle => "angle",
            Transform::Abs => "abs",
        }
    }

    /// Real values produced per complex matrix entry.
    pub fn width(self) -> usize {
        match self {
            Transform::Complex => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown domain {s:?}")))
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown transform {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub domain: Domain,
    pub transform: Transform,
    /// Scaling parameter; `inf` normalizes every moment to unit Frobenius norm.
    pub sigma: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Angular,
            transform: Transform::Abs,
            sigma: 16.0,
        }
    }
}

impl FeatureConfig {
    pub fn new(domain: Domain, transform: Transform, sigma: f64) -> Self {
        Self {
            domain,
            transform,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.domain, self.transform)
    }
}

/// Hermitian `M x M` raw second moment (or a transformed version of it).
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub matrix: Array2<Complex64>,
}

impl SecondMoment {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest `|H - H^H|` entry.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.dim();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn distance(&self, other: &SecondMoment) -> f64 {
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// One real feature vector per location.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// `N x M'`.
    pub vectors: Array2<f64>,
    pub config: FeatureConfig,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Symmetric matrix of pairwise feature distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub values: Array2<f64>,
}

impl DissimilarityMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn get(&self, n: usize, l: usize) -> f64 {
        self.values[(n, l)]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// `(1/T) sum_t h_t h_t^H` over the rows of `snapshots` (`T x M`).
pub fn raw_second_moment(snapshots: ArrayView2<'_, Complex64>) -> Result<SecondMoment> {
    let (t, m) = snapshots.dim();
    if t == 0 {
        return Err(Error::Contract("second moment needs at least one snapshot".into()));
    }
    if snapshots.iter().any(|h| !(h.re.is_finite() && h.im.is_finite())) {
        return Err(Error::Contract("non-finite CSI snapshot".into()));
    }
    let mut acc = Array2::<Complex64>::zeros((m, m));
    for h in snapshots.outer_iter() {
        for i in 0..m {
            let hi = h[i];
            for j in 0..m {
                acc[(i, j)] += hi * h[j].conj();
            }
        }
    }
    let scale = 1.0 / t as f64;
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = (acc[(i, j)] + acc[(j, i)].conj()) * (0.5 * scale);
        }
    }
    Ok(SecondMoment { matrix: out })
}

/// Scaling exponent `beta = 1 + 1/(2 sigma)`; `sigma = inf` gives 1.
pub fn scaling_exponent(sigma: f64) -> f64 {
    if sigma.is_infinite() {
        1.0
    } else {
        1.0 + 1.0 / (2.0 * sigma)
    }
}

/// Scale factor `B^(beta-1) / ||H||_F^beta` applied to a moment of norm `norm`.
pub fn scale_factor(norm: f64, sigma: f64, num_antennas: usize) -> f64 {
    let beta = scaling_exponent(sigma);
    (num_antennas as f64).powf(beta - 1.0) / norm.powf(beta)
}

/// Path-loss compensating rescale of a raw second moment.
pub fn scale_moment(moment: &SecondMoment, sigma: f64, num_antennas: usize) -> Result<SecondMoment> {
    let norm = moment.frobenius_norm();
    if norm.is_nan() || norm <= 0.0 || norm.is_infinite() {
        return Err(Error::DegenerateFeature { index: 0 });
    }
    let c = scale_factor(norm, sigma, num_antennas);
    Ok(SecondMoment {
        matrix: moment.matrix.mapv(|v| v * c),
    })
}

/// Unitary DFT matrix with entries `exp(-j 2pi k l / M) / sqrt(M)`.
pub fn dft_matrix(m: usize) -> Array2<Complex64> {
    let norm = 1.0 / (m as f64).sqrt();
    Array2::from_shape_fn((m, m), |(k, l)| {
        // reduce k*l mod m first so the phase stays accurate for large m
        let idx = (k * l) % m;
        Complex64::from_polar(norm, -2.0 * PI * idx as f64 / m as f64)
    })
}

/// Beamspace moment `D H D^H`.
pub fn to_angular(moment: &SecondMoment) -> SecondMoment {
    to_angular_with(moment, &dft_matrix(moment.dim()))
}

fn to_angular_with(moment: &SecondMoment, dft: &Array2<Complex64>) -> SecondMoment {
    let dft_h = dft.t().mapv(|v| v.conj());
    let left = dft.dot(&moment.matrix);
    SecondMoment {
        matrix: left.dot(&dft_h),
    }
}

/// Flattens `moment` row-major through the element-wise `transform`.
pub fn apply_transform(moment: &SecondMoment, transform: Transform) -> Vec<f64> {
    let mut out = Vec::with_capacity(moment.matrix.len() * transform.width());
    push_transformed(moment, transform, &mut out);
    out
}

fn push_transformed(moment: &SecondMoment, transform: Transform, out: &mut Vec<f64>) {
    for v in moment.matrix.iter() {
        match transform {
            Transform::Complex => {
                out.push(v.re);
                out.push(v.im);
            }
            Transform::Real => out.push(v.re),
            Transform::Imag => out.push(v.im),
            Transform::Angle => out.push(principal_arg(*v)),
            Transform::Abs => out.push(v.norm()),
        }
    }
}

/// Argument in `(-pi, pi]`.
fn principal_arg(v: Complex64) -> f64 {
    let a = v.im.atan2(v.re);
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Feature vector of a single snapshot stack (`T x M`).
pub fn location_feature(
    snapshots: ArrayView2<'_, Complex64>,
    config: &FeatureConfig,
    num_antennas: usize,
    dft: Option<&Array2<Complex64>>,
) -> Result<Vec<f64>> {
    let raw = raw_second_moment(snapshots)?;
    let scaled = scale_moment(&raw, config.sigma, num_antennas)?;
    let moment = match config.domain {
        Domain::Antenna => scaled,
        Domain::Angular => match dft {
            Some(d) => to_angular_with(&scaled, d),
            None => to_angular(&scaled),
        },
    };
    Ok(apply_transform(&moment, config.transform))
}

/// Features for every location of `dataset`.
pub fn extract_features(dataset: &CsiDataset, config: &FeatureConfig) -> Result<FeatureSet> {
    config.validate()?;
    let (n, _, m) = dataset.snapshots.dim();
    let width = m * m * config.transform.width();
    let dft = dft_matrix(m);
    let num_antennas = dataset.spec.array.num_antennas;
    let mut vectors = Array2::zeros((n, width));
    for (loc, stack) in dataset.snapshots.axis_iter(Axis(0)).enumerate() {
        let f = location_feature(stack, config, num_antennas, Some(&dft)).map_err(|e| match e {
            Error::DegenerateFeature { .. } => Error::DegenerateFeature { index: loc },
            other => other,
        })?;
        vectors.row_mut(loc).assign(&ndarray::ArrayView1::from(&f));
    }
    Ok(FeatureSet {
        vectors,
        config: *config,
    })
}

/// Euclidean distances between all rows of `points` (`N x d`).
pub fn euclidean_distances(points: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let a = points.row(i);
        for j in (i + 1)..n {
            let b = points.row(j);
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                let t = x - y;
                s += t * t;
            }
            let v = s.sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn pairwise_dissimilarity(features: &FeatureSet) -> Result<DissimilarityMatrix> {
    if features.len() < 2 {
        return Err(Error::Contract(
            "pairwise dissimilarity needs at least two locations".into(),
        ));
    }
    Ok(DissimilarityMatrix {
        values: euclidean_distances(features.vectors.view()),
    })
}

/// `(spatial distance, feature dissimilarity)` for every pair `n < l`.
///
/// With `max_pairs`, every k-th pair is kept so that at most `max_pairs` are
/// emitted.
pub fn distance_vs_dissimilarity(
    features: &FeatureSet,
    positions: &SpatialPointSet,
    max_pairs: Option<usize>,
) -> Result<Vec<(f64, f64)>> {
    let n = features.len();
    if n != positions.len() {
        return Err(Error::Contract(format!(
            "{} feature vectors but {} positions",
            n,
            positions.len()
        )));
    }
    let total = n * n.saturating_sub(1) / 2;
    let stride = match max_pairs {
        Some(0) => return Ok(Vec::new()),
        Some(k) if k < total => total.div_ceil(k),
        _ => 1,
    };
    let mut out = Vec::with_capacity(total / stride + 1);
    let mut idx = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if idx.is_multiple_of(stride) {
                let spatial = crate::channel::dist2(positions.point(i), positions.point(j));
                let diss = features
                    .vectors
                    .row(i)
                    .iter()
                    .zip(features.vectors.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                out.push((spatial, diss));
            }
            idx += 1;
        }
    }
    Ok(out)
}
