use serde::{Deserialize, Serialize};

use super::coco::{Annotation, Category, DatasetIndex, ImageInfo};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::idc::{AssignmentResult, Label, Scenario};
use crate::metrics::Detection;
use crate::rng::PortableRng;

/// Parameters of a synthetic assignment scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_anchors: usize,
    pub n_gts: usize,
    pub image_w: f64,
    pub image_h: f64,
    /// Side lengths of ground-truth boxes are drawn from `[min, max]`.
    pub gt_size_range: (f64, f64),
    /// Relative magnitude of the regression perturbation.
    pub noise: f64,
    /// Fraction of the way each regression box moves from its anchor to the
    /// nearest ground truth.
    #[serde(default = "default_pull")]
    pub pull: f64,
    pub seed: u64,
}

fn default_pull() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gt_size_range;
        if !(self.image_w > 0.0 && self.image_h > 0.0) || !self.image_w.is_finite() || !self.image_h.is_finite() {
            return Err(Error::Domain(format!(
                "image size {}x{} must be positive",
                self.image_w, self.image_h
            )));
        }
        if !(lo > 0.0 && lo <= hi) || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid size range [{lo}, {hi}]")));
        }
        if hi > self.image_w || hi > self.image_h {
            return Err(Error::Domain(format!(
                "size range up to {hi} does not fit a {}x{} image",
                self.image_w, self.image_h
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Domain(format!("noise {} must be >= 0", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.pull) {
            return Err(Error::Domain(format!("pull {} outside [0, 1]", self.pull)));
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Moves `anchor` a fraction `pull` toward `target`, then perturbs position
/// by up to `noise` times the box size and each side by up to `noise` of
/// itself.
pub fn regress_toward(anchor: &BBox, target: &BBox, pull: f64, noise: f64, rng: &mut PortableRng) -> BBox {
    let w = lerp(anchor.w, target.w, pull);
    let h = lerp(anchor.h, target.h, pull);
    let x = lerp(anchor.x, target.x, pull);
    let y = lerp(anchor.y, target.y, pull);
    if noise == 0.0 {
        return BBox::new(x, y, w, h);
    }
    let mut jitter = || noise * rng.uniform(-1.0, 1.0);
    let (dx, dy, sw, sh) = (jitter(), jitter(), jitter(), jitter());
    BBox::new(
        x + dx * w,
        y + dy * h,
        (w * (1.0 + sw)).max(0.0),
        (h * (1.0 + sh)).max(0.0),
    )
}

fn nearest(anchor: &BBox, gts: &[BBox]) -> Option<usize> {
    let (ax, ay) = anchor.center();
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gts.iter().enumerate() {
        let (gx, gy) = g.center();
        let d = (ax - gx).powi(2) + (ay - gy).powi(2);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Builds ground truths, a jittered anchor grid and regression boxes.
/// Output depends only on `spec`.
pub fn synth_scenario(spec: &SynthSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = PortableRng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.gt_size_range;

    let gts: Vec<BBox> = (0..spec.n_gts)
        .map(|_| {
            let w = rng.uniform(lo, hi);
            let h = rng.uniform(lo, hi);
            let x = rng.uniform(0.0, spec.image_w - w);
            let y = rng.uniform(0.0, spec.image_h - h);
            BBox::new(x, y, w, h)
        })
        .collect();

    let n = spec.n_anchors;
    let mut anchors = Vec::with_capacity(n);
    if n > 0 {
        let cols = ((n as f64 * spec.image_w / spec.image_h).sqrt().ceil() as usize).clamp(1, n);
        let rows = n.div_ceil(cols);
        let (cell_w, cell_h) = (spec.image_w / cols as f64, spec.image_h / rows as f64);
        let side = 0.5 * (lo + hi);
        for i in 0..n {
            let (c, r) = (i % cols, i / cols);
            let cx = (c as f64 + 0.5 + rng.uniform(-0.25, 0.25)) * cell_w;
            let cy = (r as f64 + 0.5 + rng.uniform(-0.25, 0.25)) * cell_h;
            anchors.push(BBox::new(cx - 0.5 * side, cy - 0.5 * side, side, side));
        }
    }

    let regressed = anchors
        .iter()
        .map(|a| {
            let target = nearest(a, &gts).map_or(*a, |j| gts[j]);
            regress_toward(a, &target, spec.pull, spec.noise, &mut rng)
        })
        .collect();

    Ok(Scenario {
        anchors,
        regressed,
        gts,
        progress: None,
        config: None,
    })
}

/// Wraps a scenario's ground truths as a one-image COCO dataset.
pub fn scenario_ground_truth(scenario: &Scenario, image_w: u32, image_h: u32) -> DatasetIndex {
    DatasetIndex {
        images: vec![ImageInfo {
            id: 1,
            width: image_w,
            height: image_h,
            file_name: None,
            patient_id: None,
        }],
        annotations: scenario
            .gts
            .iter()
            .enumerate()
            .map(|(i, b)| Annotation {
                id: i as u64 + 1,
                image_id: 1,
                category_id: 1,
                bbox: *b,
            })
            .collect(),
        categories: vec![Category {
            id: 1,
            name: "object".into(),
        }],
    }
}

/// Regression boxes of positive anchors as detections on image 1, scored by
/// their dynamic IoU clamped to `[0, 1]`.
pub fn detections_from_assignment(scenario: &Scenario, result: &AssignmentResult) -> Vec<Detection> {
    result
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == Label::Positive)
        .map(|(i, _)| Detection {
            image_id: 1,
            category_id: 1,
            bbox: scenario.regressed[i],
            score: result.diou[i].unwrap_or(0.0).clamp(0.0, 1.0),
        })
        .collect()
}
