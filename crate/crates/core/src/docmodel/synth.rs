//! Deterministic synthetic forms: a grid of question/answer cells with known
//! ground truth, optional two-line answers and oversegmented detections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassSet, DocError, Document, Entity, TextLine};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub rows: usize,
    pub cols: usize,
    /// Probability that an answer spans two lines.
    pub multiline_prob: f64,
    /// Probability that a GT line is detected as two fragments.
    pub overseg_prob: f64,
    /// Maximum weight of uniform noise mixed into input class scores.
    pub jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 2,
            multiline_prob: 0.3,
            overseg_prob: 0.2,
            jitter: 0.1,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<(), DocError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(DocError::InvalidParams("rows and cols must be at least 1".into()));
        }
        for (name, p) in [
            ("multiline_prob", self.multiline_prob),
            ("overseg_prob", self.overseg_prob),
            ("jitter", self.jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DocError::InvalidParams(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const CELL_W: f64 = 440.0;
const ROW_H: f64 = 70.0;
const MARGIN: f64 = 40.0;

/// Generates one synthetic form. Identical `(seed, params)` give identical
/// documents.
pub fn synth_form(seed: u64, params: SynthParams) -> Result<Document, DocError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = ClassSet::funsd();
    let (question, answer) = (
        classes.index_of("question").expect("funsd class"),
        classes.index_of("answer").expect("funsd class"),
    );
    let width = 2.0 * MARGIN + params.cols as f64 * CELL_W;
    let height = 2.0 * MARGIN + params.rows as f64 * ROW_H + 20.0;
    let mut doc = Document::empty(format!("synth-{seed}"), width, height, classes.clone());

    let push_line = |doc: &mut Document, bbox: BBox, class: usize| -> usize {
        let id = doc.gt_lines.len();
        doc.gt_lines.push(TextLine {
            id,
            bbox,
            confidence: 1.0,
            class_scores: classes.one_hot(class),
            text: None,
        });
        id
    };

    for r in 0..params.rows {
        for c in 0..params.cols {
            let h = rng.gen_range(14.0..22.0f64).round();
            let x0 = (MARGIN + c as f64 * CELL_W + rng.gen_range(0.0..20.0f64)).round();
            let y0 = (MARGIN + r as f64 * ROW_H + rng.gen_range(0.0..8.0f64)).round();
            let qw = rng.gen_range(80.0..180.0f64).round();
            let gap = rng.gen_range(10.0..30.0f64).round();
            let aw = rng.gen_range(60.0..150.0f64).round();
            let multiline = rng.gen_bool(params.multiline_prob);

            let qbox = BBox::new(x0, y0, x0 + qw, y0 + h)?;
            let ax = x0 + qw + gap;
            let abox = BBox::new(ax, y0, ax + aw, y0 + h)?;
            let q = push_line(&mut doc, qbox, question);
            let mut answer_lines = vec![push_line(&mut doc, abox, answer)];
            if multiline {
                let w2 = rng.gen_range(40.0..aw).round();
                let y2 = y0 + h + 6.0;
                answer_lines.push(push_line(&mut doc, BBox::new(ax, y2, ax + w2, y2 + h)?, answer));
            }
            let qe = doc.gt_entities.len();
            doc.gt_entities.push(Entity { line_ids: vec![q], class: question });
            doc.gt_entities.push(Entity { line_ids: answer_lines, class: answer });
            doc.gt_relationships.push([qe, qe + 1]);
            doc.gt_parent_links.push([qe, qe + 1]);
        }
    }

    // Input detections: GT lines, possibly split, with noisy class scores.
    let mut lines = Vec::with_capacity(doc.gt_lines.len() * 2);
    for gt in &doc.gt_lines {
        let mut pieces = vec![gt.bbox];
        if rng.gen_bool(params.overseg_prob) {
            let b = gt.bbox;
            let xs = (b.x1 + b.width() * rng.gen_range(0.3..0.7)).round();
            pieces = vec![
                BBox::new(b.x1, b.y1, xs - 1.0, b.y2)?,
                BBox::new(xs + 1.0, b.y1, b.x2, b.y2)?,
            ];
        }
        for bbox in pieces {
            let class_scores = jittered(&gt.class_scores, params.jitter, &mut rng);
            lines.push(TextLine {
                id: lines.len(),
                bbox,
                confidence: 1.0,
                class_scores,
                text: None,
            });
        }
    }
    doc.lines = lines;
    doc.normalize_relationships();
    doc.validate()?;
    Ok(doc)
}

fn jittered(one_hot: &[f64], jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if jitter == 0.0 {
        return one_hot.to_vec();
    }
    let noise: Vec<f64> = one_hot.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
    let total: f64 = noise.iter().sum();
    let u = rng.gen_range(0.0..=jitter);
    let mut v: Vec<f64> = one_hot
        .iter()
        .zip(&noise)
        .map(|(o, n)| (1.0 - u) * o + u * n / total)
        .collect();
    // exact unit sum
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// A corpus of `count` synthetic forms with per-document grid sizes drawn
/// from `rows` and `cols` (inclusive ranges). Document `k` uses seed
/// `seed * 1_000_003 + k`.
pub fn synth_corpus(
    seed: u64,
    count: usize,
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
    base: SynthParams,
) -> Result<Vec<Document>, DocError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f0a4);
    (0..count)
        .map(|k| {
            let params = SynthParams {
                rows: rng.gen_range(rows.clone()),
                cols: rng.gen_range(cols.clone()),
                ..base
            };
            synth_form(seed.wrapping_mul(1_000_003).wrapping_add(k as u64), params)
        })
        .collect()
}
