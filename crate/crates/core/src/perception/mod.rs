//! Synthetic RGB-D frames and the material-localization pipeline.

pub mod color;
pub mod depth;
pub mod evaluation;
pub mod frame;
pub mod kmeans;
pub mod metrics;
pub mod pipeline;
pub mod render;
