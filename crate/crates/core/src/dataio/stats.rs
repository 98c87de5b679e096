use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::coco::DatasetIndex;
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;

/// Objects covering at most this fraction of their image count as small.
pub const SMALL_AREA_RATIO: f64 = 0.005;

pub const DEFAULT_AR_BINS: [f64; 8] = [0.0, 0.001, 0.0025, 0.005, 0.01, 0.02, 0.05, 1.0];

/// Fraction of the image covered by the annotation's box.
pub fn area_ratio(ann: &GroundTruth, image_w: f64, image_h: f64) -> Result<f64> {
    if !(image_w > 0.0 && image_h > 0.0) || !image_w.is_finite() || !image_h.is_finite() {
        return Err(Error::Domain(format!(
            "image size {image_w}x{image_h} must be positive"
        )));
    }
    Ok(ann.bbox.area() / (image_w * image_h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    /// Strictly increasing histogram edges; bin `i` is `[edges[i], edges[i+1])`
    /// and the last bin also includes its right edge.
    pub ar_bins: Vec<f64>,
    pub small_threshold: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            ar_bins: DEFAULT_AR_BINS.to_vec(),
            small_threshold: SMALL_AREA_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_images: usize,
    pub n_instances: usize,
    /// Number of images holding exactly `k` instances, keyed by `k`.
    pub instances_per_image: BTreeMap<usize, usize>,
    /// Per-annotation area ratio, clamped to `[0, 1]`, in annotation order.
    pub ar_values: Vec<f64>,
    pub ar_bin_edges: Vec<f64>,
    pub ar_histogram: Vec<usize>,
    /// Ratios falling outside the histogram edges.
    pub ar_out_of_range: usize,
    pub small_threshold: f64,
    /// `None` for a dataset without annotations.
    pub small_fraction: Option<f64>,
}

impl StatsReport {
    /// `bin_edge,count` rows, one per bin, keyed by its left edge.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_edge,count")?;
        for (edge, count) in self.ar_bin_edges.iter().zip(&self.ar_histogram) {
            writeln!(w, "{edge},{count}")?;
        }
        Ok(())
    }
}

/// Bin index of `v` for the given edges, or `None` outside them.
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len();
    if n < 2 || v < edges[0] || v > edges[n - 1] {
        return None;
    }
    let pos = edges.partition_point(|&e| e <= v);
    Some(pos.saturating_sub(1).min(n - 2))
}

pub fn compute_stats(idx: &DatasetIndex, cfg: &StatsConfig) -> Result<StatsReport> {
    let edges = &cfg.ar_bins;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain(format!(
            "histogram edges must be strictly increasing with at least two entries, got {edges:?}"
        )));
    }
    let dims: BTreeMap<u64, (f64, f64)> = idx
        .images
        .iter()
        .map(|im| (im.id, (im.width as f64, im.height as f64)))
        .collect();

    let mut per_image: BTreeMap<u64, usize> = idx.images.iter().map(|im| (im.id, 0)).collect();
    let mut ar_values = Vec::with_capacity(idx.annotations.len());
    let mut ar_histogram = vec![0; edges.len() - 1];
    let mut ar_out_of_range = 0;
    let mut small = 0;
    for ann in &idx.annotations {
        *per_image.entry(ann.image_id).or_default() += 1;
        let (w, h) = dims
            .get(&ann.image_id)
            .copied()
            .ok_or_else(|| Error::Schema(format!("annotation {} has no image", ann.id)))?;
        let ar = area_ratio(&ann.ground_truth(), w, h)?.clamp(0.0, 1.0);
        if ar <= cfg.small_threshold {
            small += 1;
        }
        match bin_index(edges, ar) {
            Some(b) => ar_histogram[b] += 1,
            None => ar_out_of_range += 1,
        }
        ar_values.push(ar);
    }

    let mut instances_per_image = BTreeMap::new();
    for count in per_image.values() {
        *instances_per_image.entry(*count).or_default() += 1;
    }

    let n = idx.annotations.len();
    Ok(StatsReport {
        n_images: idx.images.len(),
        n_instances: n,
        instances_per_image,
        ar_values,
        ar_bin_edges: edges.clone(),
        ar_histogram,
        ar_out_of_range,
        small_threshold: cfg.small_threshold,
        small_fraction: (n > 0).then(|| small as f64 / n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::coco::{Annotation, ImageInfo};
    use crate::geometry::BBox;

    fn gt(w: f64, h: f64) -> GroundTruth {
        GroundTruth {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(0.0, 0.0, w, h),
        }
    }

    #[test]
    fn area_ratio_examples() {
        assert_eq!(area_ratio(&gt(1333.0, 800.0), 1333.0, 800.0).unwrap(), 1.0);
        assert_eq!(area_ratio(&gt(0.0, 5.0), 1333.0, 800.0).unwrap(), 0.0);
        let ar = area_ratio(&gt(80.0, 60.0), 1333.0, 800.0).unwrap();
        assert!((ar - 0.004_501_125_281_320_33).abs() < 1e-15);
        assert!(ar <= SMALL_AREA_RATIO);
        assert!(matches!(area_ratio(&gt(1.0, 1.0), 0.0, 800.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bins() {
        let e = [0.0, 0.5, 1.0];
        assert_eq!(bin_index(&e, 0.0), Some(0));
        assert_eq!(bin_index(&e, 0.5), Some(1));
        assert_eq!(bin_index(&e, 1.0), Some(1));
        assert_eq!(bin_index(&e, 1.5), None);
        assert_eq!(bin_index(&e, -0.1), None);
    }

    #[test]
    fn empty_dataset() {
        let r = compute_stats(&DatasetIndex::default(), &StatsConfig::default()).unwrap();
        assert_eq!((r.n_images, r.n_instances), (0, 0));
        assert_eq!(r.small_fraction, None);
        assert!(r.ar_histogram.iter().all(|&c| c == 0));
    }

    #[test]
    fn single_small_annotation() {
        let idx = DatasetIndex {
            images: vec![
                ImageInfo {
                    id: 1,
                    width: 1333,
                    height: 800,
                    file_name: None,
                    patient_id: None,
                },
                ImageInfo {
                    id: 2,
                    width: 1333,
                    height: 800,
                    file_name: None,
                    patient_id: None,
                },
            ],
            annotations: vec![Annotation {
                id: 1,
                image_id: 1,
                category_id: 1,
                bbox: BBox::new(10.0, 10.0, 80.0, 60.0),
            }],
            categories: vec![],
        };
        let r = compute_stats(&idx, &StatsConfig::default()).unwrap();
        assert_eq!(r.small_fraction, Some(1.0));
        assert_eq!(r.ar_histogram, vec![0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(r.instances_per_image, BTreeMap::from([(0, 1), (1, 1)]));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("bin_edge,count\n0,0\n0.001,0\n0.0025,1\n"));
    }

    #[test]
    fn bad_edges_rejected() {
        let cfg = StatsConfig {
            ar_bins: vec![0.0, 0.5, 0.5],
            ..Default::default()
        };
        assert!(compute_stats(&DatasetIndex::default(), &cfg).is_err());
    }
}
