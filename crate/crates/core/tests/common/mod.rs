//! Oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use detcal::dataio::{Annotation, Category, DatasetIndex, ImageInfo};
use detcal::rng::PortableRng;
use detcal::{adaptive_threshold, alpha_schedule, dynamic_iou, iou, AssignmentConfig, BBox, Detection, GroundTruth};
use detcal::{Label, TrainingProgress};

pub const SCALAR_ORACLE: &str = include_str!("../fixtures/scalar_oracle.csv");

#[derive(Debug, Clone, Copy)]
pub enum ScalarCase {
    Threshold {
        w: f64,
        h: f64,
        area_scale: f64,
        lambda: f64,
    },
    Diou {
        a: f64,
        r: f64,
        alpha: f64,
        gamma: f64,
    },
    Schedule {
        p: f64,
        alpha0: f64,
    },
}

/// `(case, expected)` rows of the 50-digit reference table.
pub fn scalar_oracle() -> Vec<(ScalarCase, f64)> {
    SCALAR_ORACLE
        .lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut parts = line.split(',');
            let kind = parts.next().unwrap();
            let v: Vec<f64> = parts.map(|s| s.parse().unwrap()).collect();
            let case = match kind {
                "T" => ScalarCase::Threshold {
                    w: v[0],
                    h: v[1],
                    area_scale: v[2],
                    lambda: v[3],
                },
                "D" => ScalarCase::Diou {
                    a: v[0],
                    r: v[1],
                    alpha: v[2],
                    gamma: v[3],
                },
                "S" => ScalarCase::Schedule { p: v[0], alpha0: v[1] },
                other => panic!("unknown row kind {other}"),
            };
            (case, *v.last().unwrap())
        })
        .collect()
}

pub fn eval_scalar(case: ScalarCase) -> f64 {
    match case {
        ScalarCase::Threshold {
            w,
            h,
            area_scale,
            lambda,
        } => {
            let cfg = AssignmentConfig {
                area_scale,
                lambda_exp: lambda,
                ..Default::default()
            };
            adaptive_threshold(w, h, &cfg).unwrap()
        }
        ScalarCase::Diou { a, r, alpha, gamma } => dynamic_iou(a, r, alpha, gamma).unwrap(),
        ScalarCase::Schedule { p, alpha0 } => alpha_schedule(TrainingProgress::new(p).unwrap(), alpha0).unwrap(),
    }
}

/// Naive all-pairs assignment with scalar calls.
pub struct BruteAssignment {
    pub labels: Vec<Label>,
    pub matched: Vec<Option<usize>>,
}

pub fn brute_force_assign(
    anchors: &[BBox],
    regressed: &[BBox],
    gts: &[BBox],
    progress: f64,
    cfg: &AssignmentConfig,
) -> BruteAssignment {
    let alpha = alpha_schedule(TrainingProgress::new(progress).unwrap(), cfg.alpha0).unwrap();
    let mut labels = Vec::new();
    let mut matched = Vec::new();
    for i in 0..anchors.len() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            let d = dynamic_iou(iou(&anchors[i], g), iou(&regressed[i], g), alpha, cfg.gamma_exp).unwrap();
            match best {
                Some((_, bd)) if d <= bd => {}
                _ => best = Some((j, d)),
            }
        }
        match best {
            Some((j, d)) => {
                let t = adaptive_threshold(gts[j].w, gts[j].h, cfg).unwrap();
                labels.push(if d > t { Label::Positive } else { Label::Negative });
                matched.push(Some(j));
            }
            None => {
                labels.push(Label::Negative);
                matched.push(None);
            }
        }
    }
    BruteAssignment { labels, matched }
}

pub fn random_box(rng: &mut PortableRng, extent: f64, min_side: f64, max_side: f64) -> BBox {
    let w = rng.uniform(min_side, max_side);
    let h = rng.uniform(min_side, max_side);
    BBox::new(rng.uniform(0.0, extent - w), rng.uniform(0.0, extent - h), w, h)
}

pub fn jitter(rng: &mut PortableRng, b: &BBox, amount: f64) -> BBox {
    BBox::new(
        b.x + amount * b.w * rng.uniform(-1.0, 1.0),
        b.y + amount * b.h * rng.uniform(-1.0, 1.0),
        b.w * (1.0 + amount * rng.uniform(-1.0, 1.0)),
        b.h * (1.0 + amount * rng.uniform(-1.0, 1.0)),
    )
}

pub struct AssignInstance {
    pub anchors: Vec<BBox>,
    pub regressed: Vec<BBox>,
    pub gts: Vec<BBox>,
    pub progress: f64,
}

/// Up to `max_anchors` anchors and `max_gts` ground truths on a 512 px
/// canvas; some anchors sit near a ground truth so every label occurs.
pub fn random_assign_instance(seed: u64, max_anchors: usize, max_gts: usize) -> AssignInstance {
    let mut rng = PortableRng::seed_from_u64(seed);
    let n_gts = rng.range_inclusive(0, max_gts);
    let n_anchors = rng.range_inclusive(1, max_anchors);
    let gts: Vec<BBox> = (0..n_gts).map(|_| random_box(&mut rng, 512.0, 4.0, 96.0)).collect();
    let mut anchors = Vec::with_capacity(n_anchors);
    let mut regressed = Vec::with_capacity(n_anchors);
    for _ in 0..n_anchors {
        let a = if !gts.is_empty() && rng.unit() < 0.5 {
            let g = gts[rng.below(gts.len() as u64) as usize];
            jitter(&mut rng, &g, 0.4)
        } else {
            random_box(&mut rng, 512.0, 4.0, 96.0)
        };
        let r = jitter(&mut rng, &a, 0.3);
        anchors.push(a);
        regressed.push(r);
    }
    let progress = match rng.below(4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.unit(),
    };
    AssignInstance {
        anchors,
        regressed,
        gts,
        progress,
    }
}

/// Small evaluation instance: up to 5 images, up to 8 ground truths and 8
/// detections per image, two categories, box sides spanning all size buckets.
pub fn random_eval_instance(seed: u64) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut rng = PortableRng::seed_from_u64(seed);
    let n_images = rng.range_inclusive(1, 5) as u64;
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for image_id in 1..=n_images {
        let n_gt = rng.range_inclusive(0, 8);
        let image_gts: Vec<GroundTruth> = (0..n_gt)
            .map(|_| GroundTruth {
                image_id,
                category_id: rng.range_inclusive(1, 2) as u64,
                bbox: random_box(&mut rng, 400.0, 5.0, 160.0),
            })
            .collect();
        let n_det = rng.range_inclusive(0, 8);
        for _ in 0..n_det {
            let (category_id, bbox) = if !image_gts.is_empty() && rng.unit() < 0.7 {
                let g = image_gts[rng.below(image_gts.len() as u64) as usize];
                (g.category_id, jitter(&mut rng, &g.bbox, 0.2))
            } else {
                (
                    rng.range_inclusive(1, 2) as u64,
                    random_box(&mut rng, 400.0, 5.0, 160.0),
                )
            };
            dets.push(Detection {
                image_id,
                category_id,
                bbox,
                score: rng.unit(),
            });
        }
        gts.extend(image_gts);
    }
    (dets, gts)
}

/// Box IoU as the COCO tooling computes it: `w * h` areas, intersection from
/// clipped extents.
fn coco_box_iou(d: &BBox, g: &BBox) -> f64 {
    let iw = (d.x + d.w).min(g.x + g.w) - d.x.max(g.x);
    if iw <= 0.0 {
        return 0.0;
    }
    let ih = (d.y + d.h).min(g.y + g.h) - d.y.max(g.y);
    if ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (d.w * d.h + g.w * g.h - inter)
}

struct ImageEval {
    dt_scores: Vec<f64>,
    dt_input_index: Vec<usize>,
    /// [threshold][det] matched
    dt_matched: Vec<Vec<bool>>,
    dt_ignore: Vec<Vec<bool>>,
    n_pos: usize,
}

fn np_linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

/// Line-by-line transcription of the COCO bbox evaluation loops
/// (evaluateImg, accumulate, summarize) with uncapped detections and
/// half-open area ranges. Returns `[AP, AP50, AP75, AP_S, AP_M, AP_L]`.
pub fn reference_coco_eval(dets: &[Detection], gts: &[GroundTruth]) -> [Option<f64>; 6] {
    let iou_thrs = np_linspace(0.5, 0.95, 10);
    let rec_thrs = np_linspace(0.0, 1.0, 101);
    let area_rngs = [
        (0.0, 1e10_f64.powi(2)),
        (0.0, 32.0 * 32.0),
        (32.0 * 32.0, 96.0 * 96.0),
        (96.0 * 96.0, 1e10_f64.powi(2)),
    ];
    let img_ids: BTreeSet<u64> = gts
        .iter()
        .map(|g| g.image_id)
        .chain(dets.iter().map(|d| d.image_id))
        .collect();
    let cat_ids: BTreeSet<u64> = gts.iter().map(|g| g.category_id).collect();

    let t_n = iou_thrs.len();
    let r_n = rec_thrs.len();
    let k_n = cat_ids.len();
    let a_n = area_rngs.len();
    // precision[t][r][k][a], -1 where undefined
    let mut precision = vec![vec![vec![vec![-1.0_f64; a_n]; k_n]; r_n]; t_n];

    for (k, &cat) in cat_ids.iter().enumerate() {
        for (a, &(lo, hi)) in area_rngs.iter().enumerate() {
            let mut evals: Vec<ImageEval> = Vec::new();
            for &img in &img_ids {
                let g_list: Vec<&GroundTruth> = gts
                    .iter()
                    .filter(|g| g.image_id == img && g.category_id == cat)
                    .collect();
                let mut d_list: Vec<(usize, &Detection)> = dets
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.image_id == img && d.category_id == cat)
                    .collect();
                if g_list.is_empty() && d_list.is_empty() {
                    continue;
                }
                let g_ignore_raw: Vec<bool> = g_list
                    .iter()
                    .map(|g| {
                        let ar = g.bbox.w * g.bbox.h;
                        ar < lo || ar >= hi
                    })
                    .collect();
                // gt sorted so that ignored ones come last (stable)
                let mut g_order: Vec<usize> = (0..g_list.len()).collect();
                g_order.sort_by_key(|&i| g_ignore_raw[i]);
                let g_sorted: Vec<&GroundTruth> = g_order.iter().map(|&i| g_list[i]).collect();
                let g_ig: Vec<bool> = g_order.iter().map(|&i| g_ignore_raw[i]).collect();
                // dets by descending score (stable)
                d_list.sort_by(|x, y| y.1.score.partial_cmp(&x.1.score).unwrap());

                let ious: Vec<Vec<f64>> = d_list
                    .iter()
                    .map(|(_, d)| g_sorted.iter().map(|g| coco_box_iou(&d.bbox, &g.bbox)).collect())
                    .collect();

                let mut dt_matched = vec![vec![false; d_list.len()]; t_n];
                let mut dt_ignore = vec![vec![false; d_list.len()]; t_n];
                for (tind, &t) in iou_thrs.iter().enumerate() {
                    let mut gtm = vec![false; g_sorted.len()];
                    for dind in 0..d_list.len() {
                        let mut best = t.min(1.0 - 1e-10);
                        let mut m: isize = -1;
                        for gind in 0..g_sorted.len() {
                            if gtm[gind] {
                                continue;
                            }
                            if m > -1 && !g_ig[m as usize] && g_ig[gind] {
                                break;
                            }
                            if ious[dind][gind] < best {
                                continue;
                            }
                            best = ious[dind][gind];
                            m = gind as isize;
                        }
                        if m == -1 {
                            continue;
                        }
                        dt_ignore[tind][dind] = g_ig[m as usize];
                        dt_matched[tind][dind] = true;
                        gtm[m as usize] = true;
                    }
                }
                for (dind, (_, d)) in d_list.iter().enumerate() {
                    let ar = d.bbox.w * d.bbox.h;
                    let out = ar < lo || ar >= hi;
                    for tind in 0..t_n {
                        if !dt_matched[tind][dind] && out {
                            dt_ignore[tind][dind] = true;
                        }
                    }
                }
                evals.push(ImageEval {
                    dt_scores: d_list.iter().map(|(_, d)| d.score).collect(),
                    dt_input_index: d_list.iter().map(|(i, _)| *i).collect(),
                    dt_matched,
                    dt_ignore,
                    n_pos: g_ig.iter().filter(|i| !**i).count(),
                });
            }

            let npig: usize = evals.iter().map(|e| e.n_pos).sum();
            if npig == 0 {
                continue;
            }
            let mut pooled: Vec<(f64, usize, usize, usize)> = Vec::new(); // score, input index, eval, det
            for (e_i, e) in evals.iter().enumerate() {
                for d in 0..e.dt_scores.len() {
                    pooled.push((e.dt_scores[d], e.dt_input_index[d], e_i, d));
                }
            }
            pooled.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

            for tind in 0..t_n {
                let mut tp_sum = 0.0;
                let mut fp_sum = 0.0;
                let mut rc = Vec::new();
                let mut pr = Vec::new();
                for &(_, _, e_i, d) in &pooled {
                    let e = &evals[e_i];
                    let ig = e.dt_ignore[tind][d];
                    let m = e.dt_matched[tind][d];
                    if m && !ig {
                        tp_sum += 1.0;
                    }
                    if !m && !ig {
                        fp_sum += 1.0;
                    }
                    rc.push(tp_sum / npig as f64);
                    pr.push(tp_sum / (fp_sum + tp_sum + f64::EPSILON));
                }
                for i in (1..pr.len()).rev() {
                    if pr[i] > pr[i - 1] {
                        pr[i - 1] = pr[i];
                    }
                }
                for (ri, &r) in rec_thrs.iter().enumerate() {
                    let pos = rc.iter().position(|&c| c >= r);
                    precision[tind][ri][k][a] = match pos {
                        Some(p) => pr[p],
                        None => 0.0,
                    };
                }
            }
        }
    }

    let summarize = |a: usize, t: Option<usize>| -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (tind, per_r) in precision.iter().enumerate() {
            if t.is_some_and(|t| t != tind) {
                continue;
            }
            for per_k in per_r {
                for per_a in per_k {
                    let v = per_a[a];
                    if v > -1.0 {
                        sum += v;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    };
    let t50 = iou_thrs.iter().position(|&t| t == 0.5);
    let t75 = iou_thrs.iter().position(|&t| t == 0.75);
    [
        summarize(0, None),
        summarize(0, t50),
        summarize(0, t75),
        summarize(1, None),
        summarize(2, None),
        summarize(3, None),
    ]
}

/// Random COCO index with a random patient structure. Some images carry no
/// patient id and form singleton groups.
pub fn random_patient_dataset(seed: u64) -> DatasetIndex {
    let mut rng = PortableRng::seed_from_u64(seed);
    let n_images = rng.range_inclusive(1, 120) as u64;
    let n_patients = rng.range_inclusive(1, 40) as u64;
    let images = (1..=n_images)
        .map(|id| ImageInfo {
            id,
            width: 640,
            height: 480,
            file_name: Some(format!("img_{id}.png")),
            patient_id: if rng.unit() < 0.1 {
                None
            } else {
                Some(format!("P{:03}", rng.below(n_patients)))
            },
        })
        .collect::<Vec<_>>();
    let annotations = images
        .iter()
        .enumerate()
        .map(|(i, im)| Annotation {
            id: i as u64 + 1,
            image_id: im.id,
            category_id: 1,
            bbox: BBox::new(10.0, 10.0, 20.0, 20.0),
        })
        .collect();
    DatasetIndex {
        images,
        annotations,
        categories: vec![Category {
            id: 1,
            name: "lesion".into(),
        }],
    }
}

/// Image count per patient group.
pub fn group_sizes(idx: &DatasetIndex) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for im in &idx.images {
        let key = match &im.patient_id {
            Some(p) => format!("p:{p}"),
            None => format!("i:{}", im.id),
        };
        *m.entry(key).or_insert(0) += 1;
    }
    m
}
