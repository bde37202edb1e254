//! Axis-aligned box math: unions, IOU, the horizontally clipped IOU used for
//! ground-truth alignment, and the line-of-sight predicate used by the edge
//! proposal features.
//!
//! Coordinates are image pixels with the origin at the top-left corner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("union of an empty box list")]
    EmptyUnion,
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// An axis-aligned box. Invariant: finite, `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;
    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// A 2D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 > x2 || y1 > y2 {
            return Err(GeometryError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from two arbitrary corners, reordering as needed.
    pub fn from_corners(ax: f64, ay: f64, bx: f64, by: f64) -> Result<Self, GeometryError> {
        Self::new(ax.min(bx), ay.min(by), ax.max(bx), ay.max(by))
    }

    /// Smallest box enclosing a set of points.
    pub fn enclosing(points: &[(f64, f64)]) -> Result<Self, GeometryError> {
        let (first, rest) = points.split_first().ok_or(GeometryError::EmptyUnion)?;
        let mut b = (first.0, first.1, first.0, first.1);
        for p in rest {
            b = (b.0.min(p.0), b.1.min(p.1), b.2.max(p.0), b.3.max(p.1));
        }
        Self::new(b.0, b.1, b.2, b.3)
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
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point {
            x: 0.5 * (self.x1 + self.x2),
            y: 0.5 * (self.y1 + self.y2),
        }
    }

    /// Corners in the fixed order top-left, top-right, bottom-left, bottom-right.
    pub fn corners(&self) -> [Point; 4] {
        [
            Point { x: self.x1, y: self.y1 },
            Point { x: self.x2, y: self.y1 },
            Point { x: self.x1, y: self.y2 },
            Point { x: self.x2, y: self.y2 },
        ]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Grows the box by `pad` on all sides.
    pub fn padded(&self, pad: f64) -> BBox {
        BBox {
            x1: self.x1 - pad,
            y1: self.y1 - pad,
            x2: self.x2 + pad,
            y2: self.y2 + pad,
        }
    }

    /// Clamps to `[0, width] x [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    fn union_with(&self, o: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
            x2: self.x2.max(o.x2),
            y2: self.y2.max(o.y2),
        }
    }
}

/// Smallest box containing every input box.
pub fn union_bbox(boxes: &[BBox]) -> Result<BBox, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyUnion)?;
    Ok(rest.iter().fold(*first, |acc, b| acc.union_with(b)))
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IOU after clipping the GT box's x-range to the prediction's x-range.
///
/// Clipping to the prediction's span is the best any horizontal clip of `gt`
/// can do, so this is the "optimal horizontal clip" IOU. Disjoint x-ranges
/// give 0.
pub fn clipped_iou(gt: &BBox, pred: &BBox) -> f64 {
    let x1 = gt.x1.max(pred.x1);
    let x2 = gt.x2.min(pred.x2);
    if x1 > x2 {
        return 0.0;
    }
    let clipped = BBox {
        x1,
        y1: gt.y1,
        x2,
        y2: gt.y2,
    };
    iou(&clipped, pred)
}

/// True when the open segment between the centers of `a` and `b` touches no
/// obstacle box. Coincident centers have line of sight by convention.
///
/// The endpoints are put in a canonical order first so the predicate is
/// exactly symmetric under floating point.
pub fn line_of_sight(a: &BBox, b: &BBox, obstacles: &[BBox]) -> bool {
    let (ca, cb) = (a.center(), b.center());
    let (p, q) = if (ca.x, ca.y) <= (cb.x, cb.y) { (ca, cb) } else { (cb, ca) };
    if p == q {
        return true;
    }
    !obstacles.iter().any(|o| open_segment_hits_box(p, q, o))
}

/// Liang-Barsky clip of the segment `p + t (q - p)` against the closed box;
/// a hit requires a parameter strictly inside (0, 1).
fn open_segment_hits_box(p: Point, q: Point, r: &BBox) -> bool {
    let d = (q.x - p.x, q.y - p.y);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.0, p.x - r.x1),
        (d.0, r.x2 - p.x),
        (-d.1, p.y - r.y1),
        (d.1, r.y2 - p.y),
    ];
    for (den, num) in checks {
        if den == 0.0 {
            if num < 0.0 {
                return false;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    // [t0, t1] is the part of [0, 1] inside the box; the open segment excludes
    // the endpoints themselves.
    t1 > 0.0 && t0 < 1.0
}
