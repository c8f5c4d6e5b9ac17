//! Channel-chart learners: PCA, Sammon's mapping (with optional trajectory
//! side information), and a deep autoencoder.
//!
//! Every learner consumes features (or their dissimilarities) only; ground
//! truth positions never enter this module.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub mod autoencoder;
pub mod pca;
pub mod sammon;

pub use autoencoder::{ae_forward, ae_train, Activation, AutoencoderParams, AutoencoderSpec, Layer, TrainingSettings};
pub use pca::{chart_pca, classical_mds, pca_points, PcaRoute};
pub use sammon::{
    chart_sm, chart_sm_dissimilarity_only, chart_sm_from_dissimilarity, prox_center, sm_gradient, sm_objective,
    FbsSettings, Trajectory, TrajectorySideInfo,
};

/// Solver bookkeeping attached to a chart.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_objective: Option<f64>,
    /// Objective after every accepted iterate, starting with the initial point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Hyperparameters and other run facts, stringified.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
}

/// Learned low-dimensional point set, one column per location.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelChart {
    /// `D' x N`.
    pub points: Array2<f64>,
    pub method: String,
    pub diagnostics: Diagnostics,
}

impl ChannelChart {
    pub fn from_points(points: Array2<f64>, method: impl Into<String>) -> Self {
        Self {
            points,
            method: method.into(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dims(&self) -> usize {
        self.points.nrows()
    }

    /// Largest absolute per-coordinate mean.
    pub fn centering_defect(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.mean().unwrap_or(0.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Frobenius residual `min_R ||a - R b||` over orthogonal `R` (`d x N` inputs).
///
/// Charts are only defined up to rotation and reflection, so comparisons go
/// through this rather than coordinate-wise.
pub fn procrustes_residual(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "procrustes inputs differ in shape");
    let m = a.dot(&b.t());
    let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = dm.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let r = u * vt;
    let rot = Array2::from_shape_fn((r.nrows(), r.ncols()), |(i, j)| r[(i, j)]);
    let diff = &a - &rot.dot(&b);
    diff.iter().map(|v| v * v).sum::<f64>().sqrt()
}
