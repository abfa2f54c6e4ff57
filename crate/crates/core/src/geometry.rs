//! Axis-aligned box arithmetic.
//!
//! Boxes use continuous corner coordinates `(x1, y1, x2, y2)` without the
//! legacy "+1" pixel inflation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("negative extent: x1={x1}, y1={y1}, x2={x2}, y2={y2}")]
    NegativeExtent { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// One candidate detection.
///
/// `index` is the box's stable ordinal within its detection set. It never
/// changes and is the deterministic tie-breaker whenever two scores are equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub class_id: u32,
    pub index: usize,
}

impl BBox {
    /// Validating constructor used at ingestion.
    pub fn new(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        score: f64,
        class_id: u32,
        index: usize,
    ) -> Result<Self, BoxError> {
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score,
            class_id,
            index,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from COCO `[x, y, width, height]`.
    pub fn from_xywh(
        xywh: [f64; 4],
        score: f64,
        class_id: u32,
        index: usize,
    ) -> Result<Self, BoxError> {
        let [x, y, w, h] = xywh;
        if !(w >= 0.0 && h >= 0.0) {
            return Err(BoxError::NegativeExtent {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
            });
        }
        Self::new(x, y, x + w, y + h, score, class_id, index)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        if ![self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return Err(BoxError::NegativeExtent {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(BoxError::ScoreOutOfRange(self.score));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        area(self)
    }

    #[inline]
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

#[inline]
pub fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

/// Area of the overlap rectangle, 0 for disjoint boxes.
#[inline]
pub fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union.
///
/// Every operation here is commutative in its two arguments, so the result
/// is bitwise symmetric. Two zero-area boxes have IOU 0.
#[inline]
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2, 0.5, 0, 0).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&bx(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&bx(5.0, 5.0, 5.0, 9.0)), 0.0);
        assert_eq!(area(&bx(0.0, 0.0, 3.0, 7.0)), 21.0);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_relative_eq!(iou(&a, &bx(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_area_pairs() {
        let p = bx(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = bx(0.0, 5.0, 10.0, 5.0);
        assert_eq!(iou(&line, &bx(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn rejects_invalid() {
        assert!(matches!(
            BBox::new(5.0, 0.0, 4.0, 1.0, 0.5, 0, 0),
            Err(BoxError::NegativeExtent { .. })
        ));
        assert!(matches!(
            BBox::new(0.0, 0.0, 1.0, 1.0, 1.5, 0, 0),
            Err(BoxError::ScoreOutOfRange(_))
        ));
        assert!(matches!(
            BBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.5, 0, 0),
            Err(BoxError::NonFinite)
        ));
        assert!(BBox::from_xywh([0.0, 0.0, -1.0, 2.0], 0.5, 0, 0).is_err());
    }

    #[test]
    fn xywh_conversion() {
        let b = BBox::from_xywh([10.0, 20.0, 30.0, 40.0], 0.7, 3, 0).unwrap();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (10.0, 20.0, 40.0, 60.0));
        assert_eq!(b.to_xywh(), [10.0, 20.0, 30.0, 40.0]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab.to_bits(), iou(&b, &a).to_bits());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assume!(area(&a) > 0.0);
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn translation_invariant(a in arb_box(), b in arb_box(), dx in -64i32..64, dy in -64i32..64) {
            // integer shifts keep the arithmetic well-conditioned
            let shift = |m: &BBox| bx(m.x1 + dx as f64, m.y1 + dy as f64, m.x2 + dx as f64, m.y2 + dy as f64);
            let before = iou(&a, &b);
            let after = iou(&shift(&a), &shift(&b));
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
