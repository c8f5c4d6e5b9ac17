//! Experiment configuration, read from TOML.
//!
//! Every table is optional and falls back to the defaults of the type it
//! configures; unknown keys anywhere are rejected. A minimal file is
//!
//! ```toml
//! schema_version = 1
//! ```
//!
//! which runs all four methods on the default vanilla line-of-sight scenario.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{vip_curve, ChannelModel, ScenarioSpec, DEFAULT_CURVE_POINTS};
use crate::charting::{AutoencoderSpec, FbsSettings, Trajectory, TrajectorySideInfo};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::metrics::check_k;

pub const SCHEMA_VERSION: u32 = 1;

/// One charting method and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Pca,
    Sm {
        #[serde(default)]
        fbs: FbsSettings,
    },
    /// Sammon's mapping with trajectory side information. Without explicit
    /// trajectories the scenario's curve is used as a single trajectory.
    SmPlus {
        #[serde(default)]
        fbs: FbsSettings,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        trajectories: Vec<Trajectory>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Ae {
        #[serde(default)]
        autoencoder: AutoencoderSpec,
    },
}

fn default_alpha() -> f64 {
    1.0
}

impl MethodSpec {
    pub const NAMES: [&'static str; 4] = ["pca", "sm", "sm_plus", "ae"];

    /// Default settings for a method name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "pca" => MethodSpec::Pca,
            "sm" => MethodSpec::Sm {
                fbs: FbsSettings::default(),
            },
            "sm_plus" | "sm+" => MethodSpec::SmPlus {
                fbs: FbsSettings::default(),
                trajectories: Vec::new(),
                alpha: default_alpha(),
            },
            "ae" => MethodSpec::Ae {
                autoencoder: AutoencoderSpec::default(),
            },
            _ => return None,
        })
    }

    /// Name used for output directories and summaries.
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Pca => "pca",
            MethodSpec::Sm { .. } => "sm",
            MethodSpec::SmPlus { .. } => "sm_plus",
            MethodSpec::Ae { .. } => "ae",
        }
    }

    /// Trajectory side information for SM+, `None` for the other methods.
    pub fn side_info(&self, scenario: &ScenarioSpec) -> Result<Option<TrajectorySideInfo>> {
        let MethodSpec::SmPlus {
            trajectories, alpha, ..
        } = self
        else {
            return Ok(None);
        };
        if !trajectories.is_empty() {
            return Ok(Some(TrajectorySideInfo {
                trajectories: trajectories.clone(),
            }));
        }
        let len = scenario.curve_points.len();
        if len < 2 {
            return Err(Error::Config {
                key: "methods.trajectories".into(),
                message: "sm_plus needs explicit trajectories when the scenario has no curve".into(),
            });
        }
        Ok(Some(TrajectorySideInfo::single((0..len).collect(), *alpha)))
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            MethodSpec::Pca => Ok(()),
            MethodSpec::Sm { fbs } => fbs.validate(),
            MethodSpec::SmPlus {
                fbs,
                trajectories,
                alpha,
            } => {
                fbs.validate()?;
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::Config {
                        key: "methods.alpha".into(),
                        message: format!("must be positive, got {alpha}"),
                    });
                }
                if !trajectories.is_empty() {
                    TrajectorySideInfo {
                        trajectories: trajectories.clone(),
                    }
                    .validate(n)?;
                }
                Ok(())
            }
            MethodSpec::Ae { autoencoder } => {
                autoencoder.validate()?;
                if n < autoencoder.training.batch_size {
                    return Err(Error::Config {
                        key: "methods.autoencoder.training.batch_size".into(),
                        message: format!("{} exceeds the {n} locations", autoencoder.training.batch_size),
                    });
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Neighborhood sizes with a full report; empty means the 5% default only.
    pub k_values: Vec<usize>,
    /// The CT/TW sweep covers `1..=sweep_max_k` plus every reported size.
    pub sweep_max_k: usize,
    /// Include point-wise values in reports.
    pub pointwise: bool,
    /// Cap on emitted distance/dissimilarity pairs; 0 disables the file.
    pub max_pairs: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            k_values: Vec::new(),
            sweep_max_k: 100,
            pointwise: true,
            max_pairs: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Global seed; when set it replaces every per-component seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_chart_dims")]
    pub chart_dims: usize,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub feature: FeatureConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_chart_dims() -> usize {
    2
}

fn default_methods() -> Vec<MethodSpec> {
    MethodSpec::NAMES
        .iter()
        .filter_map(|n| MethodSpec::by_name(n))
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: None,
            output_dir: default_output_dir(),
            chart_dims: default_chart_dims(),
            scenario: ScenarioSpec::default(),
            feature: FeatureConfig::default(),
            methods: default_methods(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates a configuration.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.message().to_string(),
        })?;
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let at = inner
                .span()
                .map(|s| format!(" (line {})", line_of(text, s.start)))
                .unwrap_or_default();
            Error::Config {
                key: if path == "." { "<document>".into() } else { path },
                message: format!("{}{at}", inner.message()),
            }
        })?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.message().to_string(),
        })?;
        let curve_given = raw
            .get("scenario")
            .and_then(|s| s.as_table())
            .is_some_and(|s| s.contains_key("curve_points"));
        if !curve_given {
            cfg.scenario.curve_points = vip_curve(&cfg.scenario.area, DEFAULT_CURVE_POINTS);
        }
        if let Some(seed) = cfg.seed {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.to_string(),
        })
    }

    /// Derives every seed from one value.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.scenario.rng_seed = seed;
        if let ChannelModel::ScattererNlos { scatterer_seed, .. } = &mut self.scenario.model {
            *scatterer_seed = seed.wrapping_add(1);
        }
        for m in &mut self.methods {
            if let MethodSpec::Ae { autoencoder } = m {
                autoencoder.training.init_seed = seed.wrapping_add(2);
                autoencoder.training.shuffle_seed = seed.wrapping_add(3);
            }
        }
    }

    /// Neighborhood sizes with a full report, default size first.
    pub fn report_ks(&self) -> Vec<usize> {
        let mut ks = vec![crate::metrics::default_k(self.scenario.num_locations)];
        for &k in &self.evaluation.k_values {
            if !ks.contains(&k) {
                ks.push(k);
            }
        }
        ks
    }

    /// Neighborhood sizes of the CT/TW sweep, ascending.
    pub fn sweep_ks(&self) -> Vec<usize> {
        let n = self.scenario.num_locations;
        let top = self.evaluation.sweep_max_k.min(crate::metrics::max_k(n));
        let mut ks: Vec<usize> = (1..=top).chain(self.report_ks()).filter(|&k| k >= 1).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                key: "schema_version".into(),
                message: format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            });
        }
        if self.chart_dims == 0 {
            return Err(Error::Config {
                key: "chart_dims".into(),
                message: "must be positive".into(),
            });
        }
        self.scenario.validate()?;
        self.feature.validate().map_err(|e| Error::Config {
            key: "feature.sigma".into(),
            message: e.to_string(),
        })?;
        if self.methods.is_empty() {
            return Err(Error::Config {
                key: "methods".into(),
                message: "at least one method is required".into(),
            });
        }
        let n = self.scenario.num_locations;
        for m in &self.methods {
            m.validate(n)?;
        }
        if n >= 2 {
            for &k in &self.evaluation.k_values {
                check_k(n, k).map_err(|e| Error::Config {
                    key: "evaluation.k_values".into(),
                    message: e.to_string(),
                })?;
            }
        }
        Ok(())
    }
}
