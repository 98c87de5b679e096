//! COCO-style average precision.
//!
//! Detections are matched greedily per image and category in descending
//! score order. Precision is made monotone (the envelope) and sampled at 101
//! recall points; AP averages those samples, and the headline AP averages
//! over the ten IoU thresholds 0.50:0.05:0.95. Size-stratified APs ignore
//! ground truths outside the size bucket, along with any detection that
//! matches an ignored ground truth or is unmatched and itself outside the
//! bucket.
//!
//! Score ties are broken by input order of the detections, both within an
//! image and when pooling across images.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// One detector output in the COCO results format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

/// Area buckets in pixels², half-open `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn bounds(self) -> (f64, f64) {
        const S: f64 = 32.0 * 32.0;
        const M: f64 = 96.0 * 96.0;
        match self {
            AreaRange::All => (0.0, f64::INFINITY),
            AreaRange::Small => (0.0, S),
            AreaRange::Medium => (S, M),
            AreaRange::Large => (M, f64::INFINITY),
        }
    }

    pub fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.bounds();
        area >= lo && area < hi
    }
}

/// `n` evenly spaced points from `start` to `stop` inclusive, computed as
/// `start + i * step` with the last point pinned to `stop` (the arithmetic
/// of numpy's `linspace`, which the reference COCO tooling uses).
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
            v[n - 1] = stop;
            v
        }
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

/// Recall sample points 0.00, 0.01, ..., 1.00.
pub fn recall_grid() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMatch {
    /// Index into the input detections.
    pub det_index: usize,
    pub true_positive: bool,
    /// Index into the input ground truths when matched.
    pub gt_index: Option<usize>,
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("IoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

fn check_inputs(dets: &[Detection], gts: &[GroundTruth]) -> Result<()> {
    for d in dets {
        d.bbox.validate()?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Domain(format!("detection score {} outside [0, 1]", d.score)));
        }
    }
    for g in gts {
        g.bbox.validate()?;
    }
    Ok(())
}

/// Indices sorted by descending score, stable in input order.
fn score_order(dets: &[Detection], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
}

/// Greedy matching of one image/category group at several thresholds.
///
/// `det_idx` must already be in score order and `gt_idx` must list
/// non-ignored ground truths first. Returns, per threshold, the matched
/// position into `gt_idx` for every detection.
fn match_group(
    dets: &[Detection],
    gts: &[GroundTruth],
    det_idx: &[usize],
    gt_idx: &[usize],
    gt_ignored: &[bool],
    thresholds: &[f64],
) -> Vec<Vec<Option<usize>>> {
    let ious: Vec<Vec<f64>> = det_idx
        .iter()
        .map(|&d| gt_idx.iter().map(|&g| iou(&dets[d].bbox, &gts[g].bbox)).collect())
        .collect();
    thresholds
        .iter()
        .map(|&t| {
            let mut gt_taken = vec![false; gt_idx.len()];
            ious.iter()
                .map(|row| {
                    let mut best_iou = t.min(1.0 - 1e-10);
                    let mut best: Option<usize> = None;
                    for (g, &v) in row.iter().enumerate() {
                        if gt_taken[g] {
                            continue;
                        }
                        // Once matched to a regular GT, ignored ones cannot win.
                        if let Some(m) = best {
                            if !gt_ignored[m] && gt_ignored[g] {
                                break;
                            }
                        }
                        if v < best_iou {
                            continue;
                        }
                        best_iou = v;
                        best = Some(g);
                    }
                    if let Some(m) = best {
                        gt_taken[m] = true;
                    }
                    best
                })
                .collect()
        })
        .collect()
}

type GroupKey = (u64, u64);

fn group_by_key<T>(items: &[T], key: impl Fn(&T) -> GroupKey) -> BTreeMap<GroupKey, Vec<usize>> {
    let mut map: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        map.entry(key(it)).or_default().push(i);
    }
    map
}

/// Marks each detection true or false positive at one IoU threshold.
///
/// The result is in descending score order. Each ground truth is claimed at
/// most once, by the highest-scoring detection of the same image and
/// category that reaches `iou_thresh` with it.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Result<Vec<DetectionMatch>> {
    check_threshold(iou_thresh)?;
    check_inputs(dets, gts)?;
    let gt_groups = group_by_key(gts, |g| (g.image_id, g.category_id));
    let det_groups = group_by_key(dets, |d| (d.image_id, d.category_id));
    let mut matched_gt: Vec<Option<usize>> = vec![None; dets.len()];
    for (key, mut det_idx) in det_groups {
        score_order(dets, &mut det_idx);
        let gt_idx = gt_groups.get(&key).cloned().unwrap_or_default();
        let ignored = vec![false; gt_idx.len()];
        let m = match_group(dets, gts, &det_idx, &gt_idx, &ignored, &[iou_thresh]);
        for (d, g) in det_idx.iter().zip(&m[0]) {
            matched_gt[*d] = g.map(|g| gt_idx[g]);
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    score_order(dets, &mut order);
    Ok(order
        .into_iter()
        .map(|d| DetectionMatch {
            det_index: d,
            true_positive: matched_gt[d].is_some(),
            gt_index: matched_gt[d],
        })
        .collect())
}

/// Envelope precision sampled at [`recall_grid`] for a TP/FP sequence in
/// score order. `None` when there are no ground truths.
pub fn interpolated_precision(flags: &[bool], n_gt: usize) -> Option<Vec<f64>> {
    if n_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    Some(
        recall_grid()
            .into_iter()
            .map(|r| {
                let pos = recall.partition_point(|&rc| rc < r);
                precision.get(pos).copied().unwrap_or(0.0)
            })
            .collect(),
    )
}

/// 101-point interpolated AP; `None` (undefined) when `n_gt == 0`.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    interpolated_precision(flags, n_gt).map(|p| p.iter().sum::<f64>() / p.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalParams {
    /// Keep at most this many top-scoring detections per image and category.
    pub max_dets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_threshold: f64,
    /// Interpolated precision at each point of the report's recall grid,
    /// averaged over categories that have ground truth.
    pub precision: Vec<f64>,
}

/// AP values are `None` where the bucket holds no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub iou_thresholds: Vec<f64>,
    /// AP over all sizes at each IoU threshold.
    pub ap_per_threshold: Vec<Option<f64>>,
    pub recall_grid: Vec<f64>,
    pub pr_curves: Vec<PrCurve>,
}

impl EvalReport {
    /// The six headline metrics in reporting order.
    pub fn headline(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap75", self.ap75),
            ("ap_s", self.ap_s),
            ("ap_m", self.ap_m),
            ("ap_l", self.ap_l),
        ]
    }

    /// `iou_threshold,recall,precision` rows.
    pub fn write_pr_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iou_threshold,recall,precision")?;
        for curve in &self.pr_curves {
            for (r, p) in self.recall_grid.iter().zip(&curve.precision) {
                writeln!(w, "{},{},{}", curve.iou_threshold, r, p)?;
            }
        }
        Ok(())
    }
}

/// Per-detection outcome inside one (category, area) cell.
struct Scored {
    score: f64,
    det_index: usize,
    /// Per threshold: `Some(true)` TP, `Some(false)` FP, `None` ignored.
    outcome: Vec<Option<bool>>,
}

pub fn evaluate(dets: &[Detection], gts: &[GroundTruth]) -> Result<EvalReport> {
    evaluate_with(dets, gts, &EvalParams::default())
}

pub fn evaluate_with(dets: &[Detection], gts: &[GroundTruth], params: &EvalParams) -> Result<EvalReport> {
    check_inputs(dets, gts)?;
    let thresholds = iou_thresholds();
    let categories: BTreeSet<u64> = gts.iter().map(|g| g.category_id).collect();
    let gt_groups = group_by_key(gts, |g| (g.category_id, g.image_id));
    let mut det_groups = group_by_key(dets, |d| (d.category_id, d.image_id));
    for idx in det_groups.values_mut() {
        score_order(dets, idx);
        if let Some(cap) = params.max_dets {
            idx.truncate(cap);
        }
    }
    let keys: BTreeSet<GroupKey> = gt_groups
        .keys()
        .chain(det_groups.keys())
        .filter(|(cat, _)| categories.contains(cat))
        .copied()
        .collect();

    // cells[(category, area)] = (non-ignored GT count, scored detections)
    let per_group: Vec<(GroupKey, Vec<(AreaRange, usize, Vec<Scored>)>)> = keys
        .into_par_iter()
        .map(|key| {
            let gt_all = gt_groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let det_idx = det_groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let cells = AreaRange::ALL
                .iter()
                .map(|&range| {
                    let (mut gt_idx, mut ignored): (Vec<usize>, Vec<bool>) = (Vec::new(), Vec::new());
                    for pass_ignored in [false, true] {
                        for &g in gt_all {
                            let ig = !range.contains(gts[g].bbox.area());
                            if ig == pass_ignored {
                                gt_idx.push(g);
                                ignored.push(ig);
                            }
                        }
                    }
                    let n_pos = ignored.iter().filter(|i| !**i).count();
                    let matches = match_group(dets, gts, det_idx, &gt_idx, &ignored, &thresholds);
                    let scored = det_idx
                        .iter()
                        .enumerate()
                        .map(|(k, &d)| {
                            let out_of_range = !range.contains(dets[d].bbox.area());
                            let outcome = matches
                                .iter()
                                .map(|m| match m[k] {
                                    Some(g) if ignored[g] => None,
                                    Some(_) => Some(true),
                                    None if out_of_range => None,
                                    None => Some(false),
                                })
                                .collect();
                            Scored {
                                score: dets[d].score,
                                det_index: d,
                                outcome,
                            }
                        })
                        .collect();
                    (range, n_pos, scored)
                })
                .collect();
            (key, cells)
        })
        .collect();

    let mut cells: BTreeMap<(u64, AreaRange), (usize, Vec<Scored>)> = BTreeMap::new();
    for ((cat, _), group_cells) in per_group {
        for (range, n_pos, scored) in group_cells {
            let cell = cells.entry((cat, range)).or_insert_with(|| (0, Vec::new()));
            cell.0 += n_pos;
            cell.1.extend(scored);
        }
    }

    // precision[(range, t)] = per-category interpolated curves (defined ones only)
    let mut curves: BTreeMap<(AreaRange, usize), Vec<Vec<f64>>> = BTreeMap::new();
    for ((_, range), (n_pos, mut scored)) in cells {
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.det_index.cmp(&b.det_index)));
        for t in 0..thresholds.len() {
            let flags: Vec<bool> = scored.iter().filter_map(|s| s.outcome[t]).collect();
            if let Some(p) = interpolated_precision(&flags, n_pos) {
                curves.entry((range, t)).or_default().push(p);
            }
        }
    }

    let mean_curve = |range: AreaRange, t: usize| -> Option<Vec<f64>> {
        let cs = curves.get(&(range, t))?;
        let n = cs.len() as f64;
        Some(
            (0..cs[0].len())
                .map(|r| cs.iter().map(|c| c[r]).sum::<f64>() / n)
                .collect(),
        )
    };
    let ap_at = |range: AreaRange, t: usize| -> Option<f64> {
        let cs = curves.get(&(range, t))?;
        let per_cat: Vec<f64> = cs.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        Some(per_cat.iter().sum::<f64>() / per_cat.len() as f64)
    };
    let ap_mean = |range: AreaRange| -> Option<f64> {
        let v: Option<Vec<f64>> = (0..thresholds.len()).map(|t| ap_at(range, t)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };

    let t50 = 0;
    let t75 = 5;
    let ap_per_threshold: Vec<Option<f64>> = (0..thresholds.len()).map(|t| ap_at(AreaRange::All, t)).collect();
    let pr_curves = (0..thresholds.len())
        .filter_map(|t| {
            mean_curve(AreaRange::All, t).map(|precision| PrCurve {
                iou_threshold: thresholds[t],
                precision,
            })
        })
        .collect();

    Ok(EvalReport {
        ap: ap_mean(AreaRange::All),
        ap50: ap_per_threshold[t50],
        ap75: ap_per_threshold[t75],
        ap_s: ap_mean(AreaRange::Small),
        ap_m: ap_mean(AreaRange::Medium),
        ap_l: ap_mean(AreaRange::Large),
        iou_thresholds: thresholds,
        ap_per_threshold,
        recall_grid: recall_grid(),
        pr_curves,
    })
}
