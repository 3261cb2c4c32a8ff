//! Axis-aligned boxes in normalized `xyxy` form and inclusive frame intervals.
//!
//! Boxes are stored as fractions of the frame size. Every overlap measure
//! guards its denominator, so degenerate (zero-area) boxes never produce NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized axis-aligned box, `x1 <= x2`, `y1 <= y2`, all coordinates in `[0, 1]`.
///
/// Serialized as a `[x1, y1, x2, y2]` array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box {coords:?} has non-finite coordinates"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidArgument(format!(
                "box {coords:?} is not ordered (need x1 <= x2 and y1 <= y2)"
            )));
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!(
                "box {coords:?} lies outside the unit square"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from arbitrary corners: clamps to the unit square and
    /// reorders each axis.
    pub fn from_corners_clamped(xa: f64, ya: f64, xb: f64, yb: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        let (xa, ya, xb, yb) = (c(xa), c(ya), c(xb), c(yb));
        Self {
            x1: xa.min(xb),
            y1: ya.min(yb),
            x2: xa.max(xb),
            y2: ya.max(yb),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
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

    /// `[cx, cy, w, h]`
    pub fn to_cxcywh(&self) -> [f64; 4] {
        [
            (self.x1 + self.x2) / 2.0,
            (self.y1 + self.y2) / 2.0,
            self.width(),
            self.height(),
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - |C \ (A ∪ B)| / |C|` with `C` the enclosing box.
/// Falls back to plain IoU when the enclosing box has no area.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let enclosing = union_box(a, b).area();
    if enclosing <= 0.0 {
        return iou;
    }
    // Rounding can make `enclosing - union` slightly negative when C = A ∪ B.
    let gap = (enclosing - union).max(0.0);
    (iou - gap / enclosing).clamp(-1.0, 1.0)
}

/// Smallest box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// L1 distance between the `cxcywh` forms of two boxes.
pub fn box_l1(a: &BBox, b: &BBox) -> f64 {
    a.to_cxcywh()
        .iter()
        .zip(b.to_cxcywh().iter())
        .map(|(p, q)| (p - q).abs())
        .sum()
}

/// Inclusive frame interval `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "IntervalRepr")]
pub struct Interval {
    start: u32,
    end: u32,
}

#[derive(Deserialize)]
struct IntervalRepr {
    start: u32,
    end: u32,
}

impl TryFrom<IntervalRepr> for Interval {
    type Error = Error;

    fn try_from(r: IntervalRepr) -> Result<Self> {
        Interval::new(r.start, r.end)
    }
}

impl Interval {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!(
                "interval [{start}, {end}] ends before it starts"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn single(frame: u32) -> Self {
        Self {
            start: frame,
            end: frame,
        }
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn end(&self) -> u32 {
        self.end
    }

    /// Number of frames covered, counting both ends.
    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(Interval { start, end })
    }
}

/// Frames in both intervals over frames in either, inclusive counting.
pub fn temporal_iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.len()) as f64;
    let union = a.len() as f64 + b.len() as f64 - inter;
    inter / union
}
