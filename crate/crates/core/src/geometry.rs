//! Axis-aligned box arithmetic.
//!
//! Boxes are stored COCO-style as top-left corner plus size, in pixels.
//! Overlap computations convert to corner-pair form internally.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box: left edge `x`, top edge `y`, width `w`, height `h`.
///
/// Serializes as the COCO `[x, y, w, h]` array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Checks finiteness and non-negative size.
    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite box {self:?}")));
        }
        if self.w < 0.0 || self.h < 0.0 {
            return Err(Error::Domain(format!("negative box size {self:?}")));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Geometric mean of the sides, `sqrt(w * h)`.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.area().sqrt()
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Box area `w * h`.
#[inline]
pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union. Zero when both boxes are degenerate.
#[inline]
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x2(), a.y2());
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x2(), b.y2());
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    // Corner-form areas so that identical boxes give inter == union exactly.
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

/// Dense row-major matrix of pairwise IoU values.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl IouMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Rows below this size are computed serially.
const PAR_ROWS: usize = 256;

/// Entry `(i, j)` is `iou(&lhs[i], &rhs[j])`.
pub fn iou_matrix(lhs: &[BBox], rhs: &[BBox]) -> IouMatrix {
    let cols = rhs.len();
    let mut data = vec![0.0; lhs.len() * cols];
    if cols > 0 {
        let fill = |(a, row): (&BBox, &mut [f64])| {
            for (out, b) in row.iter_mut().zip(rhs) {
                *out = iou(a, b);
            }
        };
        if lhs.len() >= PAR_ROWS {
            lhs.par_iter().zip(data.par_chunks_mut(cols)).for_each(fill);
        } else {
            lhs.iter().zip(data.chunks_mut(cols)).for_each(fill);
        }
    }
    IouMatrix {
        rows: lhs.len(),
        cols,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn area_examples() {
        assert_eq!(area(&BBox::new(0.0, 0.0, 0.0, 10.0)), 0.0);
        assert_eq!(area(&BBox::new(5.0, 5.0, 32.0, 32.0)), 1024.0);
        assert_eq!(area(&BBox::new(0.0, 0.0, 80.0, 60.0)), 4800.0);
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(3.5, 7.25, 12.0, 9.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(100.0, 100.0, 5.0, 5.0);
        assert_eq!(iou(&a, &far), 0.0);
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_and_degenerate() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
        let z = BBox::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(iou(&z, &a), 0.0);
    }

    #[test]
    fn validate_rejects_bad_boxes() {
        assert!(BBox::new(0.0, 0.0, -1.0, 1.0).validate().is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).validate().is_err());
        assert!(BBox::new(0.0, 0.0, 0.0, 0.0).validate().is_ok());
    }

    #[test]
    fn matrix_shapes() {
        let a = BBox::new(0.0, 0.0, 4.0, 4.0);
        let m = iou_matrix(&[], &[a]);
        assert_eq!(m.rows(), 0);
        let m = iou_matrix(&[a], &[a]);
        assert_eq!(m.to_nested(), vec![vec![1.0]]);
        let m = iou_matrix(&[a, a], &[]);
        assert_eq!((m.rows(), m.cols()), (2, 0));
    }

    #[test]
    fn serde_as_array() {
        let b: BBox = serde_json::from_str("[1, 2.5, 3, 4]").unwrap();
        assert_eq!(b, BBox::new(1.0, 2.5, 3.0, 4.0));
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.5,3.0,4.0]");
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn arb_sized_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 1.0..40.0f64, 1.0..40.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn iou_translation_invariant(a in arb_sized_box(), b in arb_sized_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let shifted = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            prop_assert!((shifted - iou(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn matrix_matches_scalar(lhs in prop::collection::vec(arb_box(), 0..50), rhs in prop::collection::vec(arb_box(), 0..50)) {
            let m = iou_matrix(&lhs, &rhs);
            for (i, a) in lhs.iter().enumerate() {
                for (j, b) in rhs.iter().enumerate() {
                    prop_assert_eq!(m.get(i, j).to_bits(), iou(a, b).to_bits());
                }
            }
        }
    }
}
