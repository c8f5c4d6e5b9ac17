//! Fixtures shared by the benchmarks under `benches/`.

use channel_charting::channel::synthesize_dataset;
use channel_charting::features::extract_features;
use channel_charting::{Area, CsiDataset, FeatureConfig, FeatureSet, ScenarioSpec};

/// Line-of-sight dataset with `n` locations and no curve.
pub fn dataset(n: usize) -> CsiDataset {
    let spec = ScenarioSpec {
        num_locations: n,
        area: Area::default(),
        curve_points: Vec::new(),
        ..ScenarioSpec::default()
    };
    synthesize_dataset(&spec).expect("valid benchmark scenario")
}

pub fn features(n: usize) -> FeatureSet {
    extract_features(&dataset(n), &FeatureConfig::default()).expect("features")
}
