//! Entity detection, relationship detection and Hit@1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::docmodel::Document;
use crate::exec::Execution;
use crate::geometry::{iou, BBox};
use crate::graphedit::{EntityPairScore, Prediction};
use crate::protocol::EVAL_IOU_THRESHOLD;

/// True/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Precision, recall and F1 in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub counts: Counts,
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Prf {
    /// Ratios with empty denominators read as 0.
    pub fn from_counts(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp, 0.0);
        let recall = ratio(c.tp, c.tp + c.fn_, 0.0);
        Self {
            recall,
            precision,
            f1: f1(precision, recall),
            counts: c,
        }
    }

    /// Per-document variant: a document with nothing predicted and nothing
    /// to find scores 100 on both.
    fn for_document(c: Counts) -> Self {
        let empty = if c.tp + c.fp + c.fn_ == 0 { 100.0 } else { 0.0 };
        let precision = ratio(c.tp, c.tp + c.fp, empty);
        let recall = ratio(c.tp, c.tp + c.fn_, empty);
        Self {
            recall,
            precision,
            f1: f1(precision, recall),
            counts: c,
        }
    }
}

fn entity_boxes(doc: &Document, e: usize) -> Vec<BBox> {
    doc.gt_entities[e]
        .line_ids
        .iter()
        .filter_map(|&id| doc.gt_line(id).map(|l| l.bbox))
        .collect()
}

/// Whether a perfect one-to-one matching exists between `a` and `b` using
/// only pairs with IOU at least 0.5 (augmenting paths).
pub fn perfect_line_matching(a: &[BBox], b: &[BBox]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|x| (0..b.len()).filter(|&j| iou(x, &b[j]) >= EVAL_IOU_THRESHOLD).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; b.len()];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    (0..a.len()).all(|i| augment(i, &adj, &mut vec![false; b.len()], &mut owner))
}

/// Entity detection counts for one document. Predictions are matched to GT
/// entities greedily in prediction order, each GT entity at most once.
pub fn score_entities(pred: &Prediction, doc: &Document) -> Counts {
    let gt_boxes: Vec<Vec<BBox>> = (0..doc.gt_entities.len()).map(|e| entity_boxes(doc, e)).collect();
    let mut used = vec![false; doc.gt_entities.len()];
    let mut tp = 0;
    for p in &pred.entities {
        let boxes: Vec<BBox> = p.lines.iter().map(|l| l.bbox).collect();
        let hit = (0..doc.gt_entities.len()).find(|&e| {
            !used[e] && doc.gt_entities[e].class == p.class && perfect_line_matching(&boxes, &gt_boxes[e])
        });
        if let Some(e) = hit {
            used[e] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: pred.entities.len() - tp,
        fn_: doc.gt_entities.len() - tp,
    }
}

/// Per-pair outcome of relationship matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationshipMatch {
    /// One flag per predicted relationship.
    pub correct: Vec<bool>,
    /// One flag per GT relationship.
    pub found: Vec<bool>,
}

/// Matches predicted relationships to GT pairs. A predicted pair `(A, B)` is
/// correct if some unused GT pair `(E1, E2)` has A covering E1's first line
/// (IOU at least 0.5, same class) and B covering E2's, in either orientation.
pub fn match_relationships(pred: &Prediction, doc: &Document) -> RelationshipMatch {
    let first: Vec<Option<BBox>> = doc
        .gt_entities
        .iter()
        .map(|e| e.line_ids.first().and_then(|&id| doc.gt_line(id)).map(|l| l.bbox))
        .collect();
    let covers = |p: usize, e: usize| -> bool {
        let (Some(pe), Some(fb)) = (pred.entities.get(p), first[e]) else {
            return false;
        };
        pe.class == doc.gt_entities[e].class && pe.lines.iter().any(|l| iou(&l.bbox, &fb) >= EVAL_IOU_THRESHOLD)
    };
    let mut found = vec![false; doc.gt_relationships.len()];
    let correct = pred
        .relationships
        .iter()
        .map(|&[a, b]| {
            let hit = doc.gt_relationships.iter().enumerate().position(|(k, &[e1, e2])| {
                !found[k] && ((covers(a, e1) && covers(b, e2)) || (covers(a, e2) && covers(b, e1)))
            });
            if let Some(k) = hit {
                found[k] = true;
            }
            hit.is_some()
        })
        .collect();
    RelationshipMatch { correct, found }
}

/// Relationship detection counts for one document.
pub fn score_relationships(pred: &Prediction, doc: &Document) -> Counts {
    let m = match_relationships(pred, doc);
    let tp = m.correct.iter().filter(|&&c| c).count();
    Counts {
        tp,
        fp: pred.relationships.len() - tp,
        fn_: doc.gt_relationships.len() - tp,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCounts {
    pub hits: usize,
    pub queries: usize,
}

impl HitCounts {
    /// Percentage, or `None` when there were no queries.
    pub fn percent(&self) -> Option<f64> {
        (self.queries > 0).then(|| 100.0 * self.hits as f64 / self.queries as f64)
    }
}

/// For each GT child, ranks every other GT entity by its score with the
/// child (absent pairs score 0, ties go to the lower id) and counts a hit when
/// the top candidate is one of the child's parents.
pub fn hit_at_1(doc: &Document, scores: &[EntityPairScore]) -> HitCounts {
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    for s in scores {
        table.insert((s.a.min(s.b), s.a.max(s.b)), s.score);
    }
    let mut parents: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &[p, c] in &doc.gt_parent_links {
        parents.entry(c).or_default().insert(p);
    }
    let n = doc.gt_entities.len();
    let mut hits = 0;
    for (&child, ps) in &parents {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..n).filter(|&c| c != child) {
            let s = table.get(&(cand.min(child), cand.max(child))).copied().unwrap_or(0.0);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((cand, s));
            }
        }
        if best.is_some_and(|(c, _)| ps.contains(&c)) {
            hits += 1;
        }
    }
    HitCounts {
        hits,
        queries: parents.len(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Counts pooled over the corpus.
    #[default]
    Micro,
    /// Scores averaged over documents.
    PerDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub document: String,
    pub entity: Counts,
    pub relationship: Counts,
    pub hit_at_1: Option<HitCounts>,
}

/// Scores one document; Hit@1 is computed when the prediction carries
/// GT-entity scores.
pub fn score_document(pred: &Prediction, doc: &Document) -> DocumentScore {
    DocumentScore {
        document: doc.name.clone(),
        entity: score_entities(pred, doc),
        relationship: score_relationships(pred, doc),
        hit_at_1: pred.gt_entity_scores.as_ref().map(|s| hit_at_1(doc, s)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub averaging: Averaging,
    pub entity: Prf,
    pub relationship: Prf,
    /// Percent; `None` when no document had Hit@1 queries.
    pub hit_at_1: Option<f64>,
    pub hit_counts: HitCounts,
}

fn average(items: &[Prf], counts: Counts) -> Prf {
    if items.is_empty() {
        return Prf::from_counts(counts);
    }
    let n = items.len() as f64;
    let precision = items.iter().map(|p| p.precision).sum::<f64>() / n;
    let recall = items.iter().map(|p| p.recall).sum::<f64>() / n;
    Prf {
        recall,
        precision,
        f1: f1(precision, recall),
        counts,
    }
}

impl EvalReport {
    pub fn aggregate(scores: &[DocumentScore], averaging: Averaging) -> Self {
        let ent = scores.iter().fold(Counts::default(), |a, s| a + s.entity);
        let rel = scores.iter().fold(Counts::default(), |a, s| a + s.relationship);
        let hits = scores
            .iter()
            .filter_map(|s| s.hit_at_1)
            .fold(HitCounts::default(), |a, h| HitCounts {
                hits: a.hits + h.hits,
                queries: a.queries + h.queries,
            });
        let (entity, relationship) = match averaging {
            Averaging::Micro => (Prf::from_counts(ent), Prf::from_counts(rel)),
            Averaging::PerDocument => (
                average(&scores.iter().map(|s| Prf::for_document(s.entity)).collect::<Vec<_>>(), ent),
                average(&scores.iter().map(|s| Prf::for_document(s.relationship)).collect::<Vec<_>>(), rel),
            ),
        };
        Self {
            documents: scores.len(),
            averaging,
            entity,
            relationship,
            hit_at_1: hits.percent(),
            hit_counts: hits,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores prediction/document pairs in parallel and aggregates them.
pub fn evaluate(pairs: &[(Prediction, Document)], averaging: Averaging, exec: Execution) -> EvalReport {
    let scores = exec.map(pairs, |(p, d)| score_document(p, d));
    EvalReport::aggregate(&scores, averaging)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>9}{:>11}{:>9}", "", "Recall", "Precision", "F1")?;
        for (name, p) in [("Entity detection", &self.entity), ("Relationship detection", &self.relationship)] {
            writeln!(f, "{:<24}{:>9.2}{:>11.2}{:>9.2}", name, p.recall, p.precision, p.f1)?;
        }
        match self.hit_at_1 {
            Some(h) => writeln!(f, "{:<24}{:>9.2}", "Hit@1", h),
            None => writeln!(f, "{:<24}{:>9}", "Hit@1", "n/a"),
        }
    }
}
