//! Stage runners that chain the modules and persist every artifact.
//!
//! An output directory holds
//!
//! ```text
//! dataset.ccds, dataset.ccds.toml   CSI and its scenario
//! features.ccfs                     feature matrix
//! pairs.csv                         spatial distance vs. dissimilarity
//! feature_table.csv                 per-(domain, transform) CT/TW, on request
//! <method>/chart.csv                chart with ground truth columns
//! <method>/diagnostics.toml         solver record
//! <method>/method.toml              settings the chart was made with
//! <method>/params.ccae              autoencoder weights
//! <method>/report.toml              CT/TW at the default K
//! <method>/report_k<K>.toml         CT/TW at other requested K
//! <method>/sweep.csv                CT/TW against K
//! summary.csv                       one row per method
//! ```
//!
//! Charting only ever sees features and the scenario's curve indices;
//! positions enter at evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::channel::{synthesize_dataset, CsiDataset, ScenarioSpec, SpatialPointSet};
use crate::charting::{ae_train, chart_pca, chart_sm, AutoencoderParams, ChannelChart};
use crate::config::{ExperimentConfig, MethodSpec};
use crate::error::{Error, Result};
use crate::features::{
    distance_vs_dissimilarity, euclidean_distances, extract_features, pairwise_dissimilarity, Domain, FeatureConfig,
    FeatureSet, Transform,
};
use crate::io;
use crate::metrics::{default_k, quality_report, rank_neighbors, sweep, NeighborRanking, QualityReport};

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.ccds")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features.ccfs")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.csv")
    }

    pub fn feature_table(&self) -> PathBuf {
        self.root.join("feature_table.csv")
    }

    pub fn feature_table_report(&self, config: &FeatureConfig) -> PathBuf {
        self.root.join("feature_table").join(format!("{}.toml", config.label()))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn method_dir(&self, method: &str) -> PathBuf {
        self.root.join(method)
    }

    pub fn chart(&self, method: &str) -> PathBuf {
        self.method_dir(method).join("chart.csv")
    }

    pub fn diagnostics(&self, method: &str) -> PathBuf {
        self.method_dir(method).join("diagnostics.toml")
    }

    pub fn method_record(&self, method: &str) -> PathBuf {
        self.method_dir(method).join("method.toml")
    }

    pub fn params(&self, method: &str) -> PathBuf {
        self.method_dir(method).join("params.ccae")
    }
}

/// Diagnostics file next to a chart CSV.
pub fn diagnostics_beside(chart: &Path) -> PathBuf {
    chart.with_file_name("diagnostics.toml")
}

/// Summary facts of a generated campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub num_locations: usize,
    pub snapshots: usize,
    pub csi_len: usize,
    pub model: &'static str,
    pub median_spacing_m: f64,
}

impl ScenarioSummary {
    pub fn of(dataset: &CsiDataset) -> Self {
        Self {
            num_locations: dataset.num_locations(),
            snapshots: dataset.num_snapshots(),
            csi_len: dataset.csi_len(),
            model: dataset.spec.model.label(),
            median_spacing_m: dataset.positions.median_nearest_neighbor_spacing(),
        }
    }
}

pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<CsiDataset> {
    let dataset = synthesize_dataset(&cfg.scenario)?;
    io::write_dataset(&Layout::new(out).dataset(), &dataset)?;
    Ok(dataset)
}

/// Extracts and stores features, plus the distance/dissimilarity pairs.
pub fn run_features(cfg: &ExperimentConfig, dataset: &CsiDataset, out: &Path) -> Result<FeatureSet> {
    let layout = Layout::new(out);
    let features = extract_features(dataset, &cfg.feature)?;
    io::write_features(&layout.features(), &features)?;
    if cfg.evaluation.max_pairs > 0 && features.len() >= 2 {
        let pairs = distance_vs_dissimilarity(&features, &dataset.positions, Some(cfg.evaluation.max_pairs))?;
        io::write_pairs(&layout.pairs(), &pairs)?;
    }
    Ok(features)
}

/// CT/TW of one feature configuration, feature space against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub config: FeatureConfig,
    pub report: QualityReport,
}

/// Scores every (domain, transform) pair with the configured `sigma`.
pub fn feature_table(dataset: &CsiDataset, sigma: f64, k: usize) -> Result<Vec<FeatureRow>> {
    let spatial = rank_neighbors(euclidean_distances(dataset.positions.positions.view()).view())?;
    let mut rows = Vec::new();
    for domain in Domain::ALL {
        for transform in Transform::ALL {
            let config = FeatureConfig::new(domain, transform, sigma);
            let features = extract_features(dataset, &config)?;
            let d = pairwise_dissimilarity(&features)?;
            let report = quality_report(&spatial, &rank_neighbors(d.view())?, k)?;
            log::info!(
                "feature {}: CT {:.3} TW {:.3}",
                config.label(),
                report.ct_global,
                report.tw_global
            );
            rows.push(FeatureRow { config, report });
        }
    }
    Ok(rows)
}

pub fn run_feature_table(cfg: &ExperimentConfig, dataset: &CsiDataset, out: &Path) -> Result<Vec<FeatureRow>> {
    let layout = Layout::new(out);
    let k = default_k(dataset.num_locations());
    let rows = feature_table(dataset, cfg.feature.sigma, k)?;
    let mut csv = String::from("domain,transform,sigma,k,ct,tw,ct_std,tw_std\n");
    for row in &rows {
        let r = &row.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.config.domain,
            row.config.transform,
            row.config.sigma,
            r.k,
            r.ct_global,
            r.tw_global,
            r.ct_std,
            r.tw_std
        ));
        let mut stored = r.clone();
        if !cfg.evaluation.pointwise {
            stored.ct_pointwise.clear();
            stored.tw_pointwise.clear();
        }
        io::write_report(&layout.feature_table_report(&row.config), &stored)?;
    }
    io::atomic_write(&layout.feature_table(), csv.as_bytes())?;
    Ok(rows)
}

/// Runs one charting method on features alone.
pub fn chart_with(
    method: &MethodSpec,
    features: &FeatureSet,
    scenario: &ScenarioSpec,
    dims: usize,
) -> Result<(ChannelChart, Option<AutoencoderParams>)> {
    match method {
        MethodSpec::Pca => Ok((chart_pca(features, dims)?, None)),
        MethodSpec::Sm { fbs } => Ok((chart_sm(features, dims, fbs, None)?, None)),
        MethodSpec::SmPlus { fbs, .. } => {
            let side = method.side_info(scenario)?;
            Ok((chart_sm(features, dims, fbs, side.as_ref())?, None))
        }
        MethodSpec::Ae { autoencoder } => {
            let (params, chart) = ae_train(autoencoder, features, dims)?;
            Ok((chart, Some(params)))
        }
    }
}

#[derive(Serialize)]
struct MethodRecord<'a> {
    chart_dims: usize,
    feature: &'a FeatureConfig,
    method: &'a MethodSpec,
}

fn method_record(cfg: &ExperimentConfig, method: &MethodSpec) -> Result<String> {
    let record = MethodRecord {
        chart_dims: cfg.chart_dims,
        feature: &cfg.feature,
        method,
    };
    toml::to_string(&record).map_err(|e| Error::Config {
        key: "methods".into(),
        message: e.to_string(),
    })
}

/// Charts the features and stores the chart (with ground truth columns when
/// positions are given), its diagnostics and, for the autoencoder, weights.
pub fn run_chart(
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    features: &FeatureSet,
    positions: Option<&SpatialPointSet>,
    out: &Path,
) -> Result<ChannelChart> {
    let layout = Layout::new(out);
    let name = method.name();
    let (chart, params) = chart_with(method, features, &cfg.scenario, cfg.chart_dims)?;
    io::write_chart(&layout.chart(name), &chart, positions)?;
    io::write_diagnostics(&layout.diagnostics(name), &chart)?;
    if let Some(p) = &params {
        io::write_params(&layout.params(name), p)?;
    }
    io::atomic_write(&layout.method_record(name), method_record(cfg, method)?.as_bytes())?;
    Ok(chart)
}

/// Reports at each requested K and the CT/TW sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<QualityReport>,
    pub sweep: Vec<(usize, f64, f64)>,
    pub default_k: usize,
}

impl Evaluation {
    pub fn default_report(&self) -> &QualityReport {
        self.reports
            .iter()
            .find(|r| r.k == self.default_k)
            .unwrap_or(&self.reports[0])
    }
}

pub fn evaluate(
    spatial: &NeighborRanking,
    chart: &ChannelChart,
    report_ks: &[usize],
    sweep_ks: &[usize],
    pointwise: bool,
) -> Result<Evaluation> {
    if spatial.len() != chart.len() {
        return Err(Error::Contract(format!(
            "{} positions but the chart has {} points",
            spatial.len(),
            chart.len()
        )));
    }
    let rows = chart.points.t().as_standard_layout().into_owned();
    let rep = rank_neighbors(euclidean_distances(rows.view()).view())?;
    let mut reports = Vec::with_capacity(report_ks.len());
    for &k in report_ks {
        let mut r = quality_report(spatial, &rep, k)?;
        if !pointwise {
            r.ct_pointwise.clear();
            r.tw_pointwise.clear();
        }
        reports.push(r);
    }
    Ok(Evaluation {
        reports,
        sweep: sweep(spatial, &rep, sweep_ks)?,
        default_k: default_k(chart.len()),
    })
}

pub fn spatial_ranking(positions: &SpatialPointSet) -> Result<NeighborRanking> {
    rank_neighbors(euclidean_distances(positions.positions.view()).view())
}

/// Writes `report.toml` (default K), `report_k<K>.toml` and `sweep.csv` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    for r in &eval.reports {
        let name = if r.k == eval.default_k {
            "report.toml".to_string()
        } else {
            format!("report_k{}.toml", r.k)
        };
        io::write_report(&dir.join(name), r)?;
    }
    io::write_sweep(&dir.join("sweep.csv"), &eval.sweep)
}

/// Evaluates a stored chart against a stored dataset.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    chart: &ChannelChart,
    dataset: &CsiDataset,
    out: &Path,
) -> Result<Evaluation> {
    let n = dataset.num_locations();
    let mut report_ks = vec![default_k(n)];
    for &k in &cfg.evaluation.k_values {
        if !report_ks.contains(&k) {
            report_ks.push(k);
        }
    }
    let top = cfg.evaluation.sweep_max_k.min(crate::metrics::max_k(n));
    let mut sweep_ks: Vec<usize> = (1..=top).chain(report_ks.iter().copied()).collect();
    sweep_ks.sort_unstable();
    sweep_ks.dedup();
    let eval = evaluate(
        &spatial_ranking(&dataset.positions)?,
        chart,
        &report_ks,
        &sweep_ks,
        cfg.evaluation.pointwise,
    )?;
    write_evaluation(out, &eval)?;
    Ok(eval)
}

/// One line of the final summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub model: String,
    pub report: QualityReport,
    pub iterations: usize,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub scenario: ScenarioSummary,
    pub rows: Vec<SummaryRow>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,model,k,ct,tw,ct_std,tw_std\n");
    for r in rows {
        let q = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method, r.model, q.k, q.ct_global, q.tw_global, q.ct_std, q.tw_std
        ));
    }
    out
}

fn load_dataset_if_current(layout: &Layout, spec: &ScenarioSpec) -> Option<CsiDataset> {
    let stored = io::read_scenario(&io::dataset_sidecar(&layout.dataset())).ok()?;
    if &stored != spec {
        return None;
    }
    io::read_dataset(&layout.dataset()).ok()
}

fn load_features_if_current(layout: &Layout, cfg: &FeatureConfig, n: usize) -> Option<FeatureSet> {
    let f = io::read_features(&layout.features()).ok()?;
    (f.config == *cfg && f.len() == n).then_some(f)
}

fn load_chart_if_current(
    layout: &Layout,
    name: &str,
    record: &str,
    n: usize,
    needs_params: bool,
) -> Option<ChannelChart> {
    let stored = fs::read_to_string(layout.method_record(name)).ok()?;
    if stored != record || (needs_params && !layout.params(name).exists()) {
        return None;
    }
    let mut chart = io::read_chart(&layout.chart(name)).ok()?;
    let (method, diagnostics) = io::read_diagnostics(&layout.diagnostics(name)).ok()?;
    if chart.len() != n {
        return None;
    }
    chart.method = method;
    chart.diagnostics = diagnostics;
    Some(chart)
}

/// Generate, extract features, chart with every method, evaluate.
///
/// Stored intermediates whose inputs and settings match the configuration
/// are reused instead of recomputed.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let layout = Layout::new(out);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::atomic_write(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;

    let (dataset, mut fresh) = match load_dataset_if_current(&layout, &cfg.scenario) {
        Some(d) => {
            log::info!("reusing {}", layout.dataset().display());
            (d, false)
        }
        None => {
            log::info!("generating {} locations", cfg.scenario.num_locations);
            (run_generate(cfg, out)?, true)
        }
    };
    let scenario = ScenarioSummary::of(&dataset);
    let n = dataset.num_locations();

    let features = match (!fresh)
        .then(|| load_features_if_current(&layout, &cfg.feature, n))
        .flatten()
    {
        Some(f) => {
            log::info!("reusing {}", layout.features().display());
            f
        }
        None => {
            fresh = true;
            log::info!("extracting {} features", cfg.feature.label());
            run_features(cfg, &dataset, out)?
        }
    };

    let spatial = spatial_ranking(&dataset.positions)?;
    let report_ks = cfg.report_ks();
    let sweep_ks = cfg.sweep_ks();
    let mut rows = Vec::new();
    for method in &cfg.methods {
        let name = method.name();
        let record = method_record(cfg, method)?;
        let needs_params = matches!(method, MethodSpec::Ae { .. });
        let cached = (!fresh)
            .then(|| load_chart_if_current(&layout, name, &record, n, needs_params))
            .flatten();
        let resumed = cached.is_some();
        let chart = match cached {
            Some(c) => {
                log::info!("reusing chart {name}");
                c
            }
            None => {
                log::info!("charting with {name}");
                run_chart(cfg, method, &features, Some(&dataset.positions), out)?
            }
        };
        let eval = evaluate(&spatial, &chart, &report_ks, &sweep_ks, cfg.evaluation.pointwise)?;
        write_evaluation(&layout.method_dir(name), &eval)?;
        let report = eval.default_report().clone();
        log::info!(
            "{name}: CT {:.3} TW {:.3} at K={}",
            report.ct_global,
            report.tw_global,
            report.k
        );
        rows.push(SummaryRow {
            method: name.to_string(),
            model: scenario.model.to_string(),
            report,
            iterations: chart.diagnostics.iterations,
            resumed,
        });
    }
    io::atomic_write(&layout.summary(), summary_csv(&rows).as_bytes())?;
    Ok(PipelineSummary { scenario, rows })
}
