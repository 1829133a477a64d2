//! Closer-surfaces evaluation for bird's-eye-view 3D detection.
//!
//! Besides the usual BEV and 3D IoU, predictions are scored by how well they
//! reproduce the two box surfaces facing the sensor ([`geometry::closer_surfaces_gap`]).
//! The crate also provides closest-vertex regression targets, greedy matching
//! with R11/R40 average precision, report tooling and a seeded scene
//! generator.

pub mod dataio;
pub mod edgehead;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod reports;
pub mod synth;

pub use dataio::{read_jsonl, read_kitti_labels, write_jsonl, Dataset, Frame};
pub use geometry::{bev_iou, closer_surfaces_gap, iou_3d, BevBox, Box3D, Point2};
pub use matching::{average_precision, evaluate, Detection, EvalLevel, EvalReport, GroundTruth};
pub use metrics::{MetricConfig, MetricKind, RecallMode};
