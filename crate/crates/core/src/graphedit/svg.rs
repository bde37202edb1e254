//! SVG overlay of a prediction: line boxes colored by entity class and
//! relationships drawn between entity centers.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::geometry::{union_bbox, BBox, Point};

const CLASS_COLORS: [&str; 4] = ["blue", "cyan", "yellow", "magenta"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationshipVerdict {
    Correct,
    Incorrect,
}

impl RelationshipVerdict {
    fn color(self) -> &'static str {
        match self {
            RelationshipVerdict::Correct => "green",
            RelationshipVerdict::Incorrect => "red",
        }
    }
}

fn center(pred: &Prediction, entity: usize) -> Option<Point> {
    let boxes: Vec<BBox> = pred.entities.get(entity)?.lines.iter().map(|l| l.bbox).collect();
    union_bbox(&boxes).ok().map(|b| b.center())
}

/// Renders `pred` over a `width x height` canvas. `verdicts`, when given, has
/// one entry per predicted relationship; `missed` holds endpoints of GT
/// relationships that were not found, drawn dashed in yellow.
pub fn render_svg(
    pred: &Prediction,
    width: f64,
    height: f64,
    verdicts: Option<&[RelationshipVerdict]>,
    missed: &[(Point, Point)],
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for e in &pred.entities {
        let color = CLASS_COLORS[e.class % CLASS_COLORS.len()];
        for l in &e.lines {
            let b = l.bbox;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#,
                b.x1,
                b.y1,
                b.width(),
                b.height()
            );
        }
    }
    for (k, [a, b]) in pred.relationships.iter().enumerate() {
        let (Some(p), Some(q)) = (center(pred, *a), center(pred, *b)) else {
            continue;
        };
        let color = verdicts.and_then(|v| v.get(k)).map_or("black", |v| v.color());
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
            p.x, p.y, q.x, q.y
        );
    }
    for (p, q) in missed {
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="yellow" stroke-width="2" stroke-dasharray="6 4"/>"#,
            p.x, p.y, q.x, q.y
        );
    }
    s.push_str("</svg>\n");
    s
}
