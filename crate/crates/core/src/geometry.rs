//! Axis-aligned boxes, IoU-family overlaps, `{t, b, l, r}` decoding and
//! greedy non-maximum suppression.
//!
//! Coordinates are continuous: `area = (x2 - x1) * (y2 - y1)` with no pixel
//! correction. Zero-area boxes are valid inputs.

use crate::error::{Error, Result};

/// An axis-aligned rectangle with a confidence score and a class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub class_id: usize,
}

impl BBox {
    /// Builds a validated box with score 1 and class 0.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score: 1.0,
            class_id: 0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64, class_id: usize) -> Result<Self> {
        self.score = score;
        self.class_id = class_id;
        self.validate()?;
        Ok(self)
    }

    /// Checks finiteness, ordered corners and the score range.
    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite box coordinates {coords:?}"
            )));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::domain(format!("box has negative extent {coords:?}")));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::domain(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    fn enclosing_area(&self, other: &BBox) -> f64 {
        let w = self.x2.max(other.x2) - self.x1.min(other.x1);
        let h = self.y2.max(other.y2) - self.y1.min(other.y1);
        w * h
    }
}

/// The sampling point from which `{t, b, l, r}` distances are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint {
    pub x: f64,
    pub y: f64,
}

impl AnchorPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::domain(format!("non-finite anchor ({x}, {y})")));
        }
        Ok(AnchorPoint { x, y })
    }
}

/// Distances from an anchor to the top, bottom, left and right edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeOffsets {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl EdgeOffsets {
    pub fn new(top: f64, bottom: f64, left: f64, right: f64) -> Self {
        EdgeOffsets {
            top,
            bottom,
            left,
            right,
        }
    }

    /// Offsets in `[t, b, l, r]` order.
    pub fn to_array(self) -> [f64; 4] {
        [self.top, self.bottom, self.left, self.right]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        EdgeOffsets::new(a[0], a[1], a[2], a[3])
    }

    /// Offsets that reproduce `bbox` from `anchor`. Components are negative
    /// when the anchor lies outside the box.
    pub fn between(anchor: AnchorPoint, bbox: &BBox) -> Self {
        EdgeOffsets {
            top: anchor.y - bbox.y1,
            bottom: bbox.y2 - anchor.y,
            left: anchor.x - bbox.x1,
            right: bbox.x2 - anchor.x,
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclose = a.enclosing_area(b);
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    // Two coincident or collinear degenerate boxes have no enclosing area.
    let penalty = if enclose <= 0.0 {
        0.0
    } else {
        (enclose - union) / enclose
    };
    Ok((iou - penalty).clamp(-1.0, 1.0))
}

/// Places a box around `anchor` using non-negative edge distances.
pub fn decode_box(anchor: AnchorPoint, offsets: EdgeOffsets) -> Result<BBox> {
    let a = offsets.to_array();
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain(format!(
            "edge offsets must be finite and >= 0, got {a:?}"
        )));
    }
    BBox::new(
        anchor.x - offsets.left,
        anchor.y - offsets.top,
        anchor.x + offsets.right,
        anchor.y + offsets.bottom,
    )
}

/// Greedy per-class non-maximum suppression.
///
/// Boxes are visited by descending score (ties: lower index first). A box is
/// dropped when its IoU with an already kept box of the same class exceeds
/// `iou_threshold`. Returns kept indices in visiting order.
pub fn nms(boxes: &[BBox], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::domain(format!(
            "nms threshold {iou_threshold} outside [0, 1]"
        )));
    }
    for b in boxes {
        b.validate()?;
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .total_cmp(&boxes[i].score)
            .then_with(|| i.cmp(&j))
    });

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let candidate = &boxes[i];
        let suppressed = kept.iter().any(|&k| {
            boxes[k].class_id == candidate.class_id
                && iou_unchecked(&boxes[k], candidate) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(
            iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)).unwrap(),
            0.0
        );
        let v = iou(&a, &bx(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        let bad = BBox {
            x1: 0.0,
            y1: 2.0,
            x2: 1.0,
            y2: 1.0,
            score: 0.5,
            class_id: 0,
        };
        let good = bx(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(iou(&bad, &good), Err(Error::Domain(_))));
        assert!(matches!(giou(&good, &bad), Err(Error::Domain(_))));
        assert!(good.with_score(1.5, 0).is_err());
    }

    #[test]
    fn giou_examples() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
        let v = giou(&a, &bx(2.0, 0.0, 3.0, 1.0)).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn giou_tends_to_minus_one_with_separation() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let mut prev = f64::INFINITY;
        for gap in [10.0, 100.0, 1000.0] {
            let g = giou(&a, &bx(gap, gap, gap + 1.0, gap + 1.0)).unwrap();
            assert!(g < prev);
            assert!(g > -1.0);
            prev = g;
        }
        assert!(prev < -0.999);
    }

    #[test]
    fn degenerate_boxes_behave_as_points() {
        let p = bx(0.5, 0.5, 0.5, 0.5);
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&p, &a).unwrap(), 0.0);
        assert_eq!(iou(&p, &p).unwrap(), 0.0);
        assert_eq!(giou(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn decode_box_examples() {
        let anchor = AnchorPoint::new(5.0, 5.0).unwrap();
        let b = decode_box(anchor, EdgeOffsets::new(1.0, 2.0, 3.0, 4.0)).unwrap();
        assert_eq!(b.corners(), [2.0, 4.0, 9.0, 7.0]);

        let z = decode_box(anchor, EdgeOffsets::new(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(z.corners(), [5.0, 5.0, 5.0, 5.0]);
        assert_eq!(z.area(), 0.0);

        let origin = AnchorPoint::new(0.0, 0.0).unwrap();
        let u = decode_box(origin, EdgeOffsets::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(u.corners(), [-1.0, -1.0, 1.0, 1.0]);

        assert!(decode_box(anchor, EdgeOffsets::new(-0.1, 0.0, 0.0, 0.0)).is_err());
        assert!(AnchorPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn nms_basic_cases() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(nms(&[a], 0.6).unwrap(), vec![0]);

        let hi = a.with_score(0.9, 0).unwrap();
        let lo = a.with_score(0.8, 0).unwrap();
        assert_eq!(nms(&[lo, hi], 0.6).unwrap(), vec![1]);

        // Different classes never suppress each other.
        let other = a.with_score(0.8, 1).unwrap();
        assert_eq!(nms(&[hi, other], 0.6).unwrap(), vec![0, 1]);

        // Equal scores: the lower index wins.
        assert_eq!(nms(&[lo, lo], 0.6).unwrap(), vec![0]);

        assert!(nms(&[a], 1.5).is_err());
        assert!(nms(&[a], -0.1).is_err());
        assert!(nms(&[], 0.5).unwrap().is_empty());
    }

    #[test]
    fn nms_threshold_one_suppresses_nothing() {
        let a = bx(0.0, 0.0, 2.0, 2.0).with_score(0.9, 0).unwrap();
        let b = bx(0.1, 0.0, 2.0, 2.0).with_score(0.8, 0).unwrap();
        let c = bx(0.0, 0.0, 2.0, 2.0).with_score(0.7, 0).unwrap();
        // IoU(a, c) = 1, which does not exceed 1.0.
        assert_eq!(nms(&[a, b, c], 1.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(nms(&[a, b, c], 0.99).unwrap(), vec![0, 1]);
    }
}
