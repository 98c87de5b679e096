//! IoU-dynamic calibration: size-adaptive positive thresholds, the dynamic
//! IoU blend of anchor and regression overlap, its training-progress
//! schedule, and the resulting label assignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentConfig {
    /// Growth rate of the threshold with object scale.
    pub lambda_exp: f64,
    /// Final anchor-IoU weight of the schedule.
    pub alpha0: f64,
    /// Exponent of the anchor/regression disagreement penalty.
    pub gamma_exp: f64,
    /// Reference object side length in pixels (square root of the minimal area).
    pub area_scale: f64,
    pub floor: f64,
    pub base: f64,
    pub slope: f64,
}

impl AssignmentConfig {
    pub const DEFAULT_LAMBDA: f64 = 0.55;
    pub const DEFAULT_ALPHA0: f64 = 0.6;
    pub const DEFAULT_GAMMA: f64 = 1.5;
    pub const DEFAULT_AREA_SCALE: f64 = 32.0;

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_exp,
            self.alpha0,
            self.gamma_exp,
            self.area_scale,
            self.floor,
            self.base,
            self.slope,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("non-finite assignment config {self:?}")));
        }
        if self.lambda_exp <= 0.0 {
            return Err(Error::Domain(format!(
                "lambda_exp must be > 0, got {}",
                self.lambda_exp
            )));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::Domain(format!("alpha0 must be in (0, 1], got {}", self.alpha0)));
        }
        if self.gamma_exp <= 0.0 {
            return Err(Error::Domain(format!("gamma_exp must be > 0, got {}", self.gamma_exp)));
        }
        if self.area_scale <= 0.0 {
            return Err(Error::Domain(format!(
                "area_scale must be > 0, got {}",
                self.area_scale
            )));
        }
        Ok(())
    }
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            lambda_exp: Self::DEFAULT_LAMBDA,
            alpha0: Self::DEFAULT_ALPHA0,
            gamma_exp: Self::DEFAULT_GAMMA,
            area_scale: Self::DEFAULT_AREA_SCALE,
            floor: 0.25,
            base: 0.2,
            slope: 0.15,
        }
    }
}

/// Fraction of training completed, `epoch / epochs`, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TrainingProgress(f64);

impl TrainingProgress {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("training progress {p} outside [0, 1]")));
        }
        Ok(TrainingProgress(p))
    }

    pub fn from_epochs(epoch: u32, epochs: u32) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::Domain("zero total epochs".into()));
        }
        Self::new(epoch as f64 / epochs as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TrainingProgress {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<TrainingProgress> for f64 {
    fn from(p: TrainingProgress) -> f64 {
        p.0
    }
}

/// Positive-sample threshold for a ground truth of size `w x h`:
/// `max(floor, base + slope * (sqrt(w * h) / area_scale)^lambda)`.
pub fn adaptive_threshold(w: f64, h: f64, cfg: &AssignmentConfig) -> Result<f64> {
    if !(w >= 0.0 && h >= 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::Domain(format!(
            "object size {w}x{h} must be finite and non-negative"
        )));
    }
    let ratio = (w * h).sqrt() / cfg.area_scale;
    Ok(cfg.floor.max(cfg.base + cfg.slope * ratio.powf(cfg.lambda_exp)))
}

/// Anchor-IoU weight: 1 before 10% of training, then linear down to
/// `alpha0` at 50%, constant afterwards.
pub fn alpha_schedule(progress: TrainingProgress, alpha0: f64) -> Result<f64> {
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(Error::Domain(format!("alpha0 must be in (0, 1], got {alpha0}")));
    }
    let p = progress.value();
    Ok(if p < 0.1 {
        1.0
    } else if p < 0.5 {
        ((alpha0 - 1.0) / (0.5 - 0.1)) * (p - 0.1) + 1.0
    } else {
        alpha0
    })
}

/// `alpha * A + (1 - alpha) * R - (1 - alpha) * |A - R|^gamma`, where `A` is
/// the anchor IoU and `R` the regression-box IoU with the same ground truth.
#[inline]
pub fn dynamic_iou(a_iou: f64, r_iou: f64, alpha: f64, gamma_exp: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a_iou) || !(0.0..=1.0).contains(&r_iou) {
        return Err(Error::Domain(format!("IoU values ({a_iou}, {r_iou}) outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(gamma_exp > 0.0) || !gamma_exp.is_finite() {
        return Err(Error::Domain(format!("gamma_exp must be > 0, got {gamma_exp}")));
    }
    Ok(dynamic_iou_unchecked(a_iou, r_iou, alpha, gamma_exp))
}

#[inline]
fn dynamic_iou_unchecked(a_iou: f64, r_iou: f64, alpha: f64, gamma_exp: f64) -> f64 {
    let rest = 1.0 - alpha;
    alpha * a_iou + rest * r_iou - rest * (a_iou - r_iou).abs().powf(gamma_exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub labels: Vec<Label>,
    /// Ground truth with the highest dynamic IoU; `None` when there are none.
    pub matched_gt: Vec<Option<usize>>,
    /// Dynamic IoU against the matched ground truth.
    pub diou: Vec<Option<f64>>,
    /// Threshold of the matched ground truth.
    pub threshold_used: Vec<Option<f64>>,
}

impl AssignmentResult {
    fn all_negative(n: usize) -> Self {
        AssignmentResult {
            labels: vec![Label::Negative; n],
            matched_gt: vec![None; n],
            diou: vec![None; n],
            threshold_used: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Positive)
            .map(|(i, _)| i)
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }
}

/// How per-ground-truth positive thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Size-adaptive thresholds from [`adaptive_threshold`].
    Adaptive,
    /// The same threshold for every ground truth.
    Uniform(f64),
}

/// Anchors per IoU-matrix block; bounds the working set of large batches.
const BLOCK: usize = 2048;

/// Labels anchors against ground truths with size-adaptive thresholds.
///
/// `regressed[i]` is the current regression box of `anchors[i]`. Each anchor
/// matches the ground truth with the largest dynamic IoU (lowest index on
/// ties) and is positive when that value strictly exceeds the ground truth's
/// threshold.
pub fn assign_labels(
    anchors: &[BBox],
    regressed: &[BBox],
    gts: &[BBox],
    progress: TrainingProgress,
    cfg: &AssignmentConfig,
) -> Result<AssignmentResult> {
    assign_labels_with(anchors, regressed, gts, progress, cfg, ThresholdPolicy::Adaptive)
}

pub fn assign_labels_with(
    anchors: &[BBox],
    regressed: &[BBox],
    gts: &[BBox],
    progress: TrainingProgress,
    cfg: &AssignmentConfig,
    policy: ThresholdPolicy,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    if anchors.len() != regressed.len() {
        return Err(Error::Dimension(format!(
            "{} anchors but {} regression boxes",
            anchors.len(),
            regressed.len()
        )));
    }
    for b in anchors.iter().chain(regressed).chain(gts) {
        b.validate()?;
    }
    if gts.is_empty() {
        return Ok(AssignmentResult::all_negative(anchors.len()));
    }

    let alpha = alpha_schedule(progress, cfg.alpha0)?;
    let thresholds = gts
        .iter()
        .map(|g| match policy {
            ThresholdPolicy::Adaptive => adaptive_threshold(g.w, g.h, cfg),
            ThresholdPolicy::Uniform(t) => Ok(t),
        })
        .collect::<Result<Vec<_>>>()?;

    let per_block: Vec<Vec<(usize, f64)>> = anchors
        .par_chunks(BLOCK)
        .zip(regressed.par_chunks(BLOCK))
        .map(|(a_blk, r_blk)| {
            let a_iou = iou_matrix(a_blk, gts);
            let r_iou = iou_matrix(r_blk, gts);
            (0..a_blk.len())
                .map(|i| best_match(a_iou.row(i), r_iou.row(i), alpha, cfg.gamma_exp))
                .collect()
        })
        .collect();

    let n = anchors.len();
    let mut out = AssignmentResult {
        labels: Vec::with_capacity(n),
        matched_gt: Vec::with_capacity(n),
        diou: Vec::with_capacity(n),
        threshold_used: Vec::with_capacity(n),
    };
    for (j, d) in per_block.into_iter().flatten() {
        let t = thresholds[j];
        out.labels.push(if d > t { Label::Positive } else { Label::Negative });
        out.matched_gt.push(Some(j));
        out.diou.push(Some(d));
        out.threshold_used.push(Some(t));
    }
    Ok(out)
}

/// Argmax of the dynamic IoU over one anchor's row; first index wins ties.
#[inline]
fn best_match(a_row: &[f64], r_row: &[f64], alpha: f64, gamma_exp: f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, (&a, &r)) in a_row.iter().zip(r_row).enumerate() {
        let d = dynamic_iou_unchecked(a, r, alpha, gamma_exp);
        if d > best.1 {
            best = (j, d);
        }
    }
    best
}

/// A complete assignment problem, as exchanged through JSON scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub anchors: Vec<BBox>,
    pub regressed: Vec<BBox>,
    pub gts: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AssignmentConfig>,
}
