//! Channel charting: learn low-dimensional maps of transmitter locations from
//! multi-antenna CSI alone, and score how well they preserve neighborhoods.
//!
//! The crate is organized along the processing chain:
//! [`channel`] synthesizes CSI, [`features`] turns it into real feature
//! vectors, [`charting`] learns charts, [`metrics`] scores them, and
//! [`pipeline`] wires everything to files.

pub mod channel;
pub mod charting;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;

pub use channel::{Area, ArrayGeometry, ChannelModel, CsiDataset, ScattererField, ScenarioSpec, SpatialPointSet};
pub use charting::{ChannelChart, Diagnostics};
pub use error::{Error, ErrorClass, Result};
pub use features::{DissimilarityMatrix, Domain, FeatureConfig, FeatureSet, SecondMoment, Transform};
pub use metrics::{NeighborRanking, QualityReport};
