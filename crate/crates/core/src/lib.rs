//! Resolution-retaining sub-sampling of point clouds for segmentation
//! backends that accept a fixed number of points per input.
//!
//! A cloud is partitioned into k-nearest-neighbour balls of exactly `N`
//! points (the last one holds the remainder) using a KD-tree that is rebuilt
//! over the unclaimed points whenever a ball would overlap one already
//! taken. Each ball becomes a feature batch; per-point predictions come back
//! as batches and merge one-to-one onto the parent cloud.
//!
//! Runnable tours live in `examples/`:
//!
//! | example | capability |
//! |---|---|
//! | `subsample` | partition a cloud and inspect the sub-samples |
//! | `knn` | exact k-nearest-neighbour queries |
//! | `features` | feature assembly, class weights, train/val/test split |
//! | `metrics` | confusion matrix and the three report formats |
//! | `batches` | write and read back a batch directory |
//! | `pipeline` | end to end: synthesize, sample, fit, predict, merge, score |

pub mod baseline;
pub mod cli;
pub mod cloud;
pub mod features;
pub mod io;
pub mod kdtree;
pub mod metrics;
pub mod sampling;
pub mod synth;

pub use cloud::{Channel, ClassId, ClassMap, FeatureSchema, PointCloud, PointIndex, SubSample, SubSampleSet};
pub use features::{assemble, class_weights, split, FeatureMatrix};
pub use kdtree::KdTree;
pub use metrics::{confusion, report, ConfusionMatrix, MetricsReport};
pub use sampling::{merge, subsample, KdssConfig, RebuildPolicy};
