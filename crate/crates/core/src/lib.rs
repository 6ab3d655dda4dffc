//! Stratified evaluation of trajectory predictors.
//!
//! Scenes are split along agent density and road geometry, every scene is
//! evaluated with and without its semantic map, and per-stratum min-of-K
//! ADE/FDE are reported next to the map-dependency score (MIE).

pub mod classify;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod scene;
pub mod synth;

pub use classify::{ClassifyConfig, Partition};
pub use metrics::{Grouping, MetricConfig};
pub use scene::*;
