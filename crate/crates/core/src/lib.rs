//! Depth-guided hard pixel mining for semantic segmentation.
//!
//! The crate covers the whole pipeline at desk scale: typed image grids and
//! their file formats, hard-pixel weight maps built from depth error and
//! depth-aware region error, the loss family that consumes them, a small
//! encoder-decoder network with manual gradients, a procedural RGB-D scene
//! generator, and segmentation metrics.

pub mod error;
pub mod grids;
pub mod hardmine;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synthdata;
pub mod tinynet;

pub use error::{Error, Result};
pub use grids::{DepthMap, Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap, SegProbMap};
pub use hardmine::{CellGrid, CurriculumPace, DlrPartition, FusionOp};
pub use io::RgbImage;
pub use losses::{Baseline, CompositeLoss, LossConfig, Targets, WeightSource};
pub use metrics::{ConfusionMatrix, CorrelationReport, SegMetrics};
pub use synthdata::{Dataset, Scene, SceneSpec};
pub use tinynet::{NetSpec, ParamStore, TrainConfig};
