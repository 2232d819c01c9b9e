//! Axis-aligned boxes and intersection-over-union.
//!
//! Boxes are continuous rectangles: `area = (x_max - x_min) * (y_max - y_min)`
//! with no `+1` pixel correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box from corner coordinates. Returns `None` when a corner is
    /// not finite or the box is inverted.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Option<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.is_valid().then_some(b)
    }

    /// Builds a box from the COCO `[x, y, width, height]` encoding.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Option<Self> {
        if !(w >= 0.0 && h >= 0.0) {
            return None;
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union (Jaccard index). Zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn identical_boxes() {
        assert_eq!(iou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)), 0.0);
    }

    #[test]
    fn half_shifted_boxes() {
        // intersection 2, union 6
        let v = iou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_edges_do_not_intersect() {
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(1., 0., 2., 1.)), 0.0);
    }

    #[test]
    fn degenerate_boxes_give_zero() {
        let p = b(3., 3., 3., 3.);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(iou(&p, &b(0., 0., 5., 5.)), 0.0);
    }

    #[test]
    fn xywh_conversion() {
        let bb = BBox::from_xywh(10., 20., 30., 40.).unwrap();
        assert_eq!(bb, b(10., 20., 40., 60.));
        assert_eq!(bb.to_xywh(), [10., 20., 30., 40.]);
        assert!(BBox::from_xywh(0., 0., -1., 2.).is_none());
        assert!(BBox::from_xywh(0., 0., f64::NAN, 2.).is_none());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in arb_box(), c in arb_box()) {
            prop_assert_eq!(iou(&a, &c), iou(&c, &a));
        }

        #[test]
        fn iou_is_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-9);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_is_translation_invariant(
            a in arb_box(),
            c in arb_box(),
            dx in -64i32..64,
            dy in -64i32..64,
        ) {
            // dyadic offsets keep the translated coordinates close to exact
            let (dx, dy) = (dx as f64 * 0.5, dy as f64 * 0.5);
            let before = iou(&a, &c);
            let after = iou(&a.translate(dx, dy), &c.translate(dx, dy));
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
