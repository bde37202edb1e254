//! Pairwise edge proposal: geometric pair features, a 2-layer scorer evaluated
//! on both pair orders, and top-half selection capped at 900 edges.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::TextLine;
use crate::exec::Execution;
use crate::geometry::{line_of_sight, BBox, Point};
use crate::gnn::{sigmoid, GnnError, Mlp2, Real};
use crate::protocol::PROPOSAL_EDGE_CAP;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("image has zero extent ({width}x{height})")]
    ZeroImage { width: f64, height: f64 },
    #[error("a pair must join two distinct lines (both are line {0})")]
    SameLine(usize),
    #[error("line {id} has {got} class scores, expected {expected}")]
    ClassCount { id: usize, got: usize, expected: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// Feature width for `class_count` classes.
pub fn proposal_feature_dim(class_count: usize) -> usize {
    25 + 2 * class_count
}

/// A scored unordered line pair, `i < j` by line id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCandidate {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

struct Norm {
    w: f64,
    h: f64,
}

impl Norm {
    fn new(width: f64, height: f64) -> Result<Self, ProposalError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(ProposalError::ZeroImage { width, height });
        }
        Ok(Self { w: width, h: height })
    }

    fn point(&self, p: Point) -> (f64, f64) {
        (p.x / self.w, p.y / self.h)
    }
}

fn points(b: &BBox, n: &Norm) -> [(f64, f64); 5] {
    let c = b.corners();
    [
        n.point(c[0]),
        n.point(c[1]),
        n.point(c[2]),
        n.point(c[3]),
        n.point(b.center()),
    ]
}

fn pair_features(a: &TextLine, b: &TextLine, los: bool, n: &Norm) -> Vec<f64> {
    let pa = points(&a.bbox, n);
    let pb = points(&b.bbox, n);
    let mut f = Vec::with_capacity(25 + a.class_scores.len() + b.class_scores.len());
    for k in 0..5 {
        f.push(pb[k].0 - pa[k].0);
        f.push(pb[k].1 - pa[k].1);
    }
    f.extend([
        a.bbox.height() / n.h,
        a.bbox.width() / n.w,
        b.bbox.height() / n.h,
        b.bbox.width() / n.w,
    ]);
    for k in 0..4 {
        f.push((pb[k].0 - pa[k].0).hypot(pb[k].1 - pa[k].1));
    }
    f.extend([pa[4].0, pa[4].1, pb[4].0, pb[4].1]);
    f.push(if los { 1.0 } else { 0.0 });
    f.extend([a.confidence, b.confidence]);
    f.extend(&a.class_scores);
    f.extend(&b.class_scores);
    f
}

fn obstacles(lines: &[TextLine], a: usize, b: usize) -> Vec<BBox> {
    lines
        .iter()
        .filter(|l| l.id != a && l.id != b)
        .map(|l| l.bbox)
        .collect()
}

/// Features for the ordered pair `(a, b)`. Line of sight is blocked by every
/// line in `lines` other than `a` and `b`.
///
/// Layout: center and corner deltas `(dx, dy)` in the order top-left,
/// top-right, bottom-left, bottom-right, center; `[h_a, w_a, h_b, w_b]`; the 4
/// corresponding-corner distances; `[cx_a, cy_a, cx_b, cy_b]`; the
/// line-of-sight flag; both confidences; both class-score vectors. All
/// coordinates are divided by the image width or height.
pub fn build_proposal_features(
    a: &TextLine,
    b: &TextLine,
    lines: &[TextLine],
    image_width: f64,
    image_height: f64,
) -> Result<Vec<f64>, ProposalError> {
    if a.id == b.id {
        return Err(ProposalError::SameLine(a.id));
    }
    let n = Norm::new(image_width, image_height)?;
    let los = line_of_sight(&a.bbox, &b.bbox, &obstacles(lines, a.id, b.id));
    Ok(pair_features(a, b, los, &n))
}

/// Both orderings of one unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub i: usize,
    pub j: usize,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

/// Features for every unordered pair of `lines`, in `(index i < index j)`
/// order. Pair ids are stored smaller-first.
pub fn all_pair_features(
    lines: &[TextLine],
    image_width: f64,
    image_height: f64,
    class_count: usize,
    exec: Execution,
) -> Result<Vec<PairFeatures>, ProposalError> {
    let n = Norm::new(image_width, image_height)?;
    for l in lines {
        if l.class_scores.len() != class_count {
            return Err(ProposalError::ClassCount {
                id: l.id,
                got: l.class_scores.len(),
                expected: class_count,
            });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..lines.len())
        .flat_map(|i| (i + 1..lines.len()).map(move |j| (i, j)))
        .collect();
    let boxes: Vec<BBox> = lines.iter().map(|l| l.bbox).collect();
    let out = exec.map(&pairs, |&(x, y)| {
        let (mut a, mut b) = (&lines[x], &lines[y]);
        if a.id > b.id {
            std::mem::swap(&mut a, &mut b);
        }
        let obs: Vec<BBox> = boxes
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != x && k != y)
            .map(|(_, b)| *b)
            .collect();
        let los = line_of_sight(&a.bbox, &b.bbox, &obs);
        PairFeatures {
            i: a.id,
            j: b.id,
            forward: pair_features(a, b, los, &n),
            backward: pair_features(b, a, los, &n),
        }
    });
    for p in &out {
        if p.i == p.j {
            return Err(ProposalError::SameLine(p.i));
        }
    }
    Ok(out)
}

/// Logit of one pair: the mean of the scorer's outputs over both orders.
pub fn pair_logit<T: Real>(mlp: &Mlp2<T>, pair: &PairFeatures) -> Result<T, GnnError> {
    let conv = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
    let a = mlp.forward(&conv(&pair.forward))?[0];
    let b = mlp.forward(&conv(&pair.backward))?[0];
    Ok((a + b) * T::from_f64(0.5))
}

/// Scores every unordered pair of `lines`.
pub fn score_pairs<T: Real>(
    lines: &[TextLine],
    image_width: f64,
    image_height: f64,
    class_count: usize,
    mlp: &Mlp2<T>,
    exec: Execution,
) -> Result<Vec<EdgeCandidate>, ProposalError> {
    let pairs = all_pair_features(lines, image_width, image_height, class_count, exec)?;
    score_pair_features(&pairs, mlp, exec)
}

pub fn score_pair_features<T: Real>(
    pairs: &[PairFeatures],
    mlp: &Mlp2<T>,
    exec: Execution,
) -> Result<Vec<EdgeCandidate>, ProposalError> {
    let scored = exec.try_map(pairs, |p| {
        pair_logit(mlp, p).map(|l| EdgeCandidate {
            i: p.i,
            j: p.j,
            score: sigmoid(l).to_f64(),
        })
    })?;
    Ok(scored)
}

/// How many of `candidates` pairs survive selection.
pub fn selection_size(candidates: usize) -> usize {
    candidates.div_ceil(2).min(PROPOSAL_EDGE_CAP)
}

/// Keeps the best `min(ceil(P / 2), 900)` candidates, ties broken by
/// ascending `(i, j)`. The result is sorted by `(i, j)`.
pub fn select_edges(candidates: &[EdgeCandidate]) -> Vec<EdgeCandidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
    });
    sorted.truncate(selection_size(candidates.len()));
    sorted.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)).then(Ordering::Equal));
    sorted
}
