//! Detection calibration toolkit.
//!
//! - [`geometry`]: boxes and IoU.
//! - [`tensor`], [`bda`]: background-denoising attention over a pyramid
//!   level, with its input gradients and a finite-difference checker.
//! - [`idc`]: size-adaptive thresholds, dynamic IoU and label assignment.
//! - [`metrics`]: COCO-style AP, AP50, AP75 and size-bucketed AP.
//! - [`dataio`]: COCO ingestion, area-ratio statistics, patient splits and
//!   synthetic scenarios.
//! - [`cli`]: the `detcal` batch front end.

pub mod bda;
pub mod cli;
pub mod dataio;
mod dd;
pub mod error;
pub mod geometry;
pub mod idc;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{area, iou, iou_matrix, BBox, IouMatrix};
pub use idc::{
    adaptive_threshold, alpha_schedule, assign_labels, assign_labels_with, dynamic_iou, AssignmentConfig,
    AssignmentResult, Label, Scenario, ThresholdPolicy, TrainingProgress,
};
pub use metrics::{average_precision, evaluate, evaluate_with, match_detections, Detection, EvalReport, GroundTruth};
