//! Annotation ingestion, dataset statistics, patient-level splits and
//! synthetic scenarios.

pub mod coco;
pub mod split;
pub mod stats;
pub mod synth;

pub use coco::{
    load_coco, load_coco_with, load_detections, save_coco, save_coco_with, Annotation, Category, DatasetIndex,
    ImageInfo, DEFAULT_PATIENT_FIELD,
};
pub use split::{patient_split, PatientKey, SplitSummary};
pub use stats::{area_ratio, compute_stats, StatsConfig, StatsReport, DEFAULT_AR_BINS, SMALL_AREA_RATIO};
pub use synth::{detections_from_assignment, regress_toward, scenario_ground_truth, synth_scenario, SynthSpec};
