//! The dynamic form graph and its edits.
//!
//! Graphs are kept in canonical order: nodes sorted by their smallest input
//! line id, edges by their endpoint indices. Every edit produces a new
//! canonical graph, and aggregates are always accumulated in canonical order,
//! so the result does not depend on the order nodes or edges were listed in.

mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{ClassSet, TextLine};
use crate::geometry::{union_bbox, BBox};
use crate::gnn::head;
use crate::proposal::EdgeCandidate;
use crate::protocol::EditThresholds;

pub use svg::{render_svg, RelationshipVerdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) refers to a line that is not in the graph")]
    MissingLine(usize, usize),
    #[error("duplicate line id {0}")]
    DuplicateLine(usize),
    #[error("stage output does not match the graph: {0}")]
    Mismatch(String),
}

/// A graph line: an input line, or the fusion of several merged input lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLine {
    /// Input line ids fused into this line, ascending. `line.id` is the first.
    pub members: Vec<usize>,
    pub line: TextLine,
}

impl GraphLine {
    pub fn from_input(line: TextLine) -> Self {
        Self {
            members: vec![line.id],
            line,
        }
    }

    fn fuse(parts: &[&GraphLine]) -> Self {
        let mut members: Vec<usize> = parts.iter().flat_map(|p| p.members.iter().copied()).collect();
        members.sort_unstable();
        let boxes: Vec<BBox> = parts.iter().map(|p| p.line.bbox).collect();
        let n = parts.len() as f64;
        let classes = parts[0].line.class_scores.len();
        let mut class_scores = vec![0.0; classes];
        for p in parts {
            for (c, v) in class_scores.iter_mut().zip(&p.line.class_scores) {
                *c += v;
            }
        }
        class_scores.iter_mut().for_each(|c| *c /= n);
        let texts: Vec<&str> = parts.iter().filter_map(|p| p.line.text.as_deref()).collect();
        Self {
            line: TextLine {
                id: members[0],
                bbox: union_bbox(&boxes).expect("fused line has parts"),
                confidence: parts.iter().map(|p| p.line.confidence).sum::<f64>() / n,
                class_scores,
                text: if texts.is_empty() { None } else { Some(texts.join(" ")) },
            },
            members,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    /// Lines of this node, sorted by id.
    pub lines: Vec<GraphLine>,
    /// Latest class prediction; the mean detector scores before any stage.
    pub class_scores: Vec<f64>,
    pub feat: Vec<f32>,
    /// Cached pre-transition features.
    #[serde(skip)]
    pub init: Option<Vec<f32>>,
    /// Set when an edit changed this node since features were last built.
    #[serde(skip)]
    pub modified: bool,
}

impl GraphNode {
    pub fn key(&self) -> usize {
        self.lines[0].line.id
    }

    /// Every input line id in this node, ascending.
    pub fn input_line_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.lines.iter().flat_map(|l| l.members.iter().copied()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn text_lines(&self) -> Vec<&TextLine> {
        self.lines.iter().map(|l| &l.line).collect()
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.class_scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    /// Node indices, `a < b`.
    pub a: usize,
    pub b: usize,
    pub feat: Vec<f32>,
    /// `[prune, merge, group, relationship]`.
    pub scores: [f64; 4],
    #[serde(skip)]
    pub init: Option<Vec<f32>>,
    #[serde(skip)]
    pub modified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub iteration: usize,
    /// Input line ids of each merged component.
    pub merges: Vec<Vec<usize>>,
    /// Input line ids of each grouped component.
    pub groups: Vec<Vec<usize>>,
    /// Pruned edges, as pairs of node keys.
    pub prunes: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormGraph {
    pub image_width: f64,
    pub image_height: f64,
    pub class_count: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub edit_log: Vec<EditRecord>,
}

/// Predictions for one graph, in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct StageScores {
    pub class_scores: Vec<Vec<f64>>,
    pub edge_scores: Vec<[f64; 4]>,
    pub node_feats: Option<Vec<Vec<f32>>>,
    pub edge_feats: Option<Vec<Vec<f32>>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_vec<'a, I: Iterator<Item = &'a [f64]>>(items: I, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in items {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

fn mean_feat<'a, I: Iterator<Item = &'a Vec<f32>>>(items: I) -> Vec<f32> {
    let items: Vec<&Vec<f32>> = items.collect();
    let dim = items.iter().map(|v| v.len()).max().unwrap_or(0);
    let mut acc = vec![0.0f64; dim];
    for v in &items {
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += x as f64;
        }
    }
    acc.into_iter().map(|a| (a / items.len() as f64) as f32).collect()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// One node per line, plus the selected proposal edges. Edge endpoints are
/// line ids; duplicate pairs collapse into one edge.
pub fn init_graph(
    lines: &[TextLine],
    edges: &[EdgeCandidate],
    image_width: f64,
    image_height: f64,
    class_count: usize,
) -> Result<FormGraph, GraphError> {
    let mut sorted = lines.to_vec();
    sorted.sort_by_key(|l| l.id);
    for w in sorted.windows(2) {
        if w[0].id == w[1].id {
            return Err(GraphError::DuplicateLine(w[0].id));
        }
    }
    let index: BTreeMap<usize, usize> = sorted.iter().enumerate().map(|(k, l)| (l.id, k)).collect();
    let mut pairs = Vec::with_capacity(edges.len());
    for e in edges {
        let (Some(&a), Some(&b)) = (index.get(&e.i), index.get(&e.j)) else {
            return Err(GraphError::MissingLine(e.i, e.j));
        };
        if a != b {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let nodes = sorted
        .into_iter()
        .map(|l| GraphNode {
            class_scores: l.class_scores.clone(),
            lines: vec![GraphLine::from_input(l)],
            feat: Vec::new(),
            init: None,
            modified: false,
        })
        .collect();
    let edges = pairs
        .into_iter()
        .map(|(a, b)| GraphEdge {
            a,
            b,
            feat: Vec::new(),
            scores: [0.0; 4],
            init: None,
            modified: false,
        })
        .collect();
    Ok(FormGraph {
        image_width,
        image_height,
        class_count,
        nodes,
        edges,
        edit_log: Vec::new(),
    })
}

impl FormGraph {
    /// Every current line box, in node order.
    pub fn all_boxes(&self) -> Vec<BBox> {
        self.nodes
            .iter()
            .flat_map(|n| n.lines.iter().map(|l| l.line.bbox))
            .collect()
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }

    pub fn set_features(&mut self, nodes: Vec<Vec<f32>>, edges: Vec<Vec<f32>>) {
        for (n, f) in self.nodes.iter_mut().zip(nodes) {
            n.feat = f;
        }
        for (e, f) in self.edges.iter_mut().zip(edges) {
            e.feat = f;
        }
    }

    pub fn clear_modified(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.modified = false);
        self.edges.iter_mut().for_each(|e| e.modified = false);
    }

    /// Stores a stage's predictions (and final features, when given).
    pub fn apply_stage(&mut self, s: StageScores) -> Result<(), GraphError> {
        if s.class_scores.len() != self.nodes.len() || s.edge_scores.len() != self.edges.len() {
            return Err(GraphError::Mismatch(format!(
                "{} nodes / {} edges, got {} / {} predictions",
                self.nodes.len(),
                self.edges.len(),
                s.class_scores.len(),
                s.edge_scores.len()
            )));
        }
        for (n, c) in self.nodes.iter_mut().zip(s.class_scores) {
            n.class_scores = c;
        }
        for (e, c) in self.edges.iter_mut().zip(s.edge_scores) {
            e.scores = c;
        }
        if let Some(f) = s.node_feats {
            self.nodes.iter_mut().zip(f).for_each(|(n, f)| n.feat = f);
        }
        if let Some(f) = s.edge_feats {
            self.edges.iter_mut().zip(f).for_each(|(e, f)| e.feat = f);
        }
        Ok(())
    }

    /// Sorts nodes by key and edges by endpoints, orienting every edge
    /// `a < b`. Idempotent.
    pub fn canonicalize(&mut self) {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.nodes[i].key());
        let mut new_index = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let mut nodes: Vec<Option<GraphNode>> = std::mem::take(&mut self.nodes).into_iter().map(Some).collect();
        self.nodes = order.iter().map(|&o| nodes[o].take().expect("permutation")).collect();
        for e in &mut self.edges {
            let (a, b) = (new_index[e.a], new_index[e.b]);
            e.a = a.min(b);
            e.b = a.max(b);
        }
        self.edges.sort_by_key(|e| (e.a, e.b));
    }

    /// Contracts every connected component of the flagged edges into one node.
    /// With `fuse`, all lines of a component become a single line.
    /// Returns the new graph and the input line ids of each contracted
    /// (non-singleton) component.
    pub fn contract<F: Fn(&GraphEdge) -> bool>(&self, flagged: F, fuse: bool) -> (FormGraph, Vec<Vec<usize>>) {
        let mut uf = UnionFind::new(self.nodes.len());
        for e in &self.edges {
            if flagged(e) {
                uf.union(e.a, e.b);
            }
        }
        let partition: Vec<usize> = (0..self.nodes.len()).map(|n| uf.find(n)).collect();
        self.contract_partition(&partition, fuse)
    }

    /// Contracts nodes sharing a partition label. Labels are arbitrary ids.
    pub fn contract_partition(&self, label: &[usize], fuse: bool) -> (FormGraph, Vec<Vec<usize>>) {
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (n, &l) in label.iter().enumerate() {
            comps.entry(l).or_default().push(n);
        }
        let mut comps: Vec<Vec<usize>> = comps.into_values().collect();
        for c in &mut comps {
            c.sort_by_key(|&n| self.nodes[n].key());
        }
        comps.sort_by_key(|c| self.nodes[c[0]].key());
        let mut node_of = vec![0; self.nodes.len()];
        let mut nodes = Vec::with_capacity(comps.len());
        let mut contracted = Vec::new();
        for (k, c) in comps.iter().enumerate() {
            for &n in c {
                node_of[n] = k;
            }
            if c.len() == 1 {
                nodes.push(self.nodes[c[0]].clone());
                continue;
            }
            let members: Vec<&GraphNode> = c.iter().map(|&n| &self.nodes[n]).collect();
            let mut lines: Vec<GraphLine> = if fuse {
                let parts: Vec<&GraphLine> = members.iter().flat_map(|m| m.lines.iter()).collect();
                vec![GraphLine::fuse(&parts)]
            } else {
                members.iter().flat_map(|m| m.lines.iter().cloned()).collect()
            };
            lines.sort_by_key(|l| l.line.id);
            let classes = members[0].class_scores.len();
            let node = GraphNode {
                lines,
                class_scores: mean_vec(members.iter().map(|m| m.class_scores.as_slice()), classes),
                feat: mean_feat(members.iter().map(|m| &m.feat)),
                init: None,
                modified: true,
            };
            contracted.push(node.input_line_ids());
            nodes.push(node);
        }
        let mut groups: BTreeMap<(usize, usize), Vec<&GraphEdge>> = BTreeMap::new();
        for e in &self.edges {
            let (a, b) = (node_of[e.a], node_of[e.b]);
            if a != b {
                groups.entry((a.min(b), a.max(b))).or_default().push(e);
            }
        }
        let edges = groups
            .into_iter()
            .map(|((a, b), mut es)| {
                let end_keys = |e: &GraphEdge| {
                    let (x, y) = (self.nodes[e.a].key(), self.nodes[e.b].key());
                    (x.min(y), x.max(y))
                };
                es.sort_by_key(|e| end_keys(e));
                if es.len() == 1 {
                    let mut e = es[0].clone();
                    e.a = a;
                    e.b = b;
                    e.modified |= nodes[a].modified || nodes[b].modified;
                    return e;
                }
                let mut scores = [0.0; 4];
                for e in &es {
                    for (s, v) in scores.iter_mut().zip(e.scores) {
                        *s += v;
                    }
                }
                scores.iter_mut().for_each(|s| *s /= es.len() as f64);
                GraphEdge {
                    a,
                    b,
                    feat: mean_feat(es.iter().map(|e| &e.feat)),
                    scores,
                    init: None,
                    modified: true,
                }
            })
            .collect();
        (
            FormGraph {
                image_width: self.image_width,
                image_height: self.image_height,
                class_count: self.class_count,
                nodes,
                edges,
                edit_log: self.edit_log.clone(),
            },
            contracted,
        )
    }

    /// Removes edges whose prune score reaches `threshold`. Returns the pruned
    /// pairs as node keys.
    pub fn prune(&mut self, threshold: f64) -> Vec<[usize; 2]> {
        let mut pruned = Vec::new();
        let nodes = &self.nodes;
        self.edges.retain(|e| {
            let drop = e.scores[head::PRUNE] >= threshold;
            if drop {
                pruned.push([nodes[e.a].key(), nodes[e.b].key()]);
            }
            !drop
        });
        pruned
    }

    /// Input line ids per node; a partition of the graph's input lines.
    pub fn line_partition(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.input_line_ids()).collect()
    }
}

/// One edit iteration: merge, then group, then prune. Merge and group flags
/// are closed under connected components; contraction averages node
/// features, class scores, and the features and scores of edges that become
/// parallel. The log is appended only if something changed.
pub fn apply_edit_step(graph: &FormGraph, thresholds: &EditThresholds, iteration: usize) -> FormGraph {
    let mut start = graph.clone();
    start.canonicalize();
    let (merged, merges) = start.contract(|e| e.scores[head::MERGE] >= thresholds.merge, true);
    let (mut grouped, groups) = merged.contract(|e| e.scores[head::GROUP] >= thresholds.group, false);
    let prunes = grouped.prune(thresholds.prune);
    if !(merges.is_empty() && groups.is_empty() && prunes.is_empty()) {
        grouped.edit_log.push(EditRecord {
            iteration,
            merges,
            groups,
            prunes,
        });
    }
    grouped
}

/// Keeps only edges whose relationship score reaches `threshold`.
pub fn finalize(graph: &FormGraph, threshold: f64) -> FormGraph {
    let mut g = graph.clone();
    g.canonicalize();
    g.edges.retain(|e| e.scores[head::RELATIONSHIP] >= threshold);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLine {
    pub bbox: BBox,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub id: usize,
    pub class: usize,
    pub label: String,
    pub class_scores: Vec<f64>,
    pub lines: Vec<PredictedLine>,
}

/// Relationship scores between GT entities, from a run with GT grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPairScore {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Serialized result of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub document: String,
    pub class_set: ClassSet,
    pub entities: Vec<PredictedEntity>,
    pub relationships: Vec<[usize; 2]>,
    pub relationship_scores: Vec<f64>,
    pub edit_log: Vec<EditRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_entity_scores: Option<Vec<EntityPairScore>>,
}

impl Prediction {
    pub fn from_graph(document: &str, class_set: &ClassSet, g: &FormGraph) -> Self {
        let entities = g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let class = n.predicted_class();
                PredictedEntity {
                    id,
                    class,
                    label: class_set.label(class).unwrap_or("").to_string(),
                    class_scores: n.class_scores.clone(),
                    lines: n
                        .lines
                        .iter()
                        .map(|l| PredictedLine {
                            bbox: l.line.bbox,
                            members: l.members.clone(),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            document: document.to_string(),
            class_set: class_set.clone(),
            entities,
            relationships: g.edges.iter().map(|e| [e.a, e.b]).collect(),
            relationship_scores: g.edges.iter().map(|e| e.scores[head::RELATIONSHIP]).collect(),
            edit_log: g.edit_log.clone(),
            gt_entity_scores: None,
        }
    }

    /// The document's own ground truth, written as a prediction: one entity
    /// per GT entity, every GT relationship, and GT-entity scores of 1 on
    /// parent links.
    pub fn from_ground_truth(doc: &crate::docmodel::Document) -> Self {
        let entities = doc
            .gt_entities
            .iter()
            .enumerate()
            .map(|(id, e)| PredictedEntity {
                id,
                class: e.class,
                label: doc.class_set.label(e.class).unwrap_or("").to_string(),
                class_scores: doc.class_set.one_hot(e.class),
                lines: e
                    .line_ids
                    .iter()
                    .filter_map(|&l| doc.gt_line(l))
                    .map(|l| PredictedLine {
                        bbox: l.bbox,
                        members: vec![l.id],
                    })
                    .collect(),
            })
            .collect();
        Self {
            document: doc.name.clone(),
            class_set: doc.class_set.clone(),
            entities,
            relationships: doc.gt_relationships.clone(),
            relationship_scores: vec![1.0; doc.gt_relationships.len()],
            edit_log: Vec::new(),
            gt_entity_scores: Some(
                doc.gt_parent_links
                    .iter()
                    .map(|&[p, c]| EntityPairScore {
                        a: p.min(c),
                        b: p.max(c),
                        score: 1.0,
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: usize, x: f64, y: f64) -> TextLine {
        TextLine {
            id,
            bbox: BBox::new(x, y, x + 50.0, y + 10.0).unwrap(),
            confidence: 1.0,
            class_scores: vec![0.5, 0.5],
            text: None,
        }
    }

    fn cand(i: usize, j: usize) -> EdgeCandidate {
        EdgeCandidate { i, j, score: 1.0 }
    }

    fn with_scores(mut g: FormGraph, scores: &[[f64; 4]]) -> FormGraph {
        for (e, s) in g.edges.iter_mut().zip(scores) {
            e.scores = *s;
        }
        g
    }

    fn set_feats(g: &mut FormGraph) {
        for (k, n) in g.nodes.iter_mut().enumerate() {
            n.feat = vec![k as f32, 1.0];
        }
        for (k, e) in g.edges.iter_mut().enumerate() {
            e.feat = vec![10.0 * k as f32, 2.0];
        }
    }

    #[test]
    fn init_graph_builds_and_dedups() {
        let lines = [line(0, 0., 0.), line(1, 100., 0.), line(2, 0., 50.)];
        let g = init_graph(&lines, &[cand(0, 1), cand(1, 2)], 500., 500., 2).unwrap();
        assert_eq!((g.nodes.len(), g.edges.len()), (3, 2));
        let g = init_graph(&lines, &[cand(0, 1), cand(0, 1)], 500., 500., 2).unwrap();
        assert_eq!(g.edges.len(), 1);
        let g = init_graph(&[], &[], 500., 500., 2).unwrap();
        assert!(g.nodes.is_empty());
        assert_eq!(
            init_graph(&lines, &[cand(0, 7)], 500., 500., 2),
            Err(GraphError::MissingLine(0, 7))
        );
    }

    #[test]
    fn below_threshold_is_identity() {
        let lines = [line(0, 0., 0.), line(1, 100., 0.), line(2, 0., 50.)];
        let g = init_graph(&lines, &[cand(0, 1), cand(1, 2)], 500., 500., 2).unwrap();
        let g = with_scores(g, &[[0.1, 0.1, 0.1, 0.9], [0.5, 0.5, 0.5, 0.5]]);
        assert_eq!(apply_edit_step(&g, &crate::protocol::EDIT_SCHEDULE[0], 0), g);
    }

    #[test]
    fn grouping_averages_parallel_edges() {
        // A=0, B=1, C=2 with A-B grouped and A-C, B-C both present
        let lines = [line(0, 0., 0.), line(1, 0., 20.), line(2, 200., 0.)];
        let mut g = init_graph(&lines, &[cand(0, 1), cand(0, 2), cand(1, 2)], 500., 500., 2).unwrap();
        set_feats(&mut g);
        let g = with_scores(g, &[[0.0, 0.0, 0.97, 0.0], [0.2, 0.0, 0.0, 0.6], [0.4, 0.0, 0.0, 0.8]]);
        let out = apply_edit_step(&g, &crate::protocol::EDIT_SCHEDULE[0], 0);
        assert_eq!(out.nodes.len(), 2);
        assert_eq!(out.nodes[0].input_line_ids(), vec![0, 1]);
        assert_eq!(out.nodes[0].lines.len(), 2);
        assert_eq!(out.nodes[0].feat, vec![0.5, 1.0]);
        assert_eq!(out.edges.len(), 1);
        assert_eq!(out.edges[0].feat, vec![15.0, 2.0]);
        assert!((out.edges[0].scores[0] - 0.3).abs() < 1e-15);
        assert!((out.edges[0].scores[3] - 0.7).abs() < 1e-15);
        assert_eq!(out.edit_log.len(), 1);
        assert_eq!(out.edit_log[0].groups, vec![vec![0, 1]]);
    }

    #[test]
    fn merging_fuses_lines_transitively() {
        let lines = [line(0, 0., 0.), line(1, 60., 0.), line(2, 120., 5.)];
        let g = init_graph(&lines, &[cand(0, 1), cand(1, 2)], 500., 500., 2).unwrap();
        let g = with_scores(g, &[[0.0, 0.85, 0.0, 0.0], [0.0, 0.81, 0.0, 0.0]]);
        let out = apply_edit_step(&g, &crate::protocol::EDIT_SCHEDULE[0], 0);
        assert_eq!(out.nodes.len(), 1);
        assert_eq!(out.nodes[0].lines.len(), 1);
        assert_eq!(out.nodes[0].lines[0].line.bbox, BBox::new(0., 0., 170., 15.).unwrap());
        assert_eq!(out.nodes[0].lines[0].members, vec![0, 1, 2]);
        assert!(out.edges.is_empty());
    }

    #[test]
    fn prune_and_finalize() {
        let lines = [line(0, 0., 0.), line(1, 100., 0.), line(2, 0., 50.)];
        let g = init_graph(&lines, &[cand(0, 1), cand(1, 2)], 500., 500., 2).unwrap();
        let g = with_scores(g, &[[0.95, 0.0, 0.0, 0.9], [0.1, 0.0, 0.0, 0.3]]);
        let out = apply_edit_step(&g, &crate::protocol::EDIT_SCHEDULE[0], 0);
        assert_eq!(out.edges.len(), 1);
        assert_eq!(out.edit_log[0].prunes, vec![[0, 1]]);
        assert_eq!(finalize(&out, 0.5).edges.len(), 0);
        let keep = with_scores(g.clone(), &[[0.0, 0.0, 0.0, 0.9], [0.0, 0.0, 0.0, 0.9]]);
        assert_eq!(finalize(&keep, 0.5).edges.len(), 2);
        assert_eq!(finalize(&keep, 0.5).nodes.len(), 3);
    }

    #[test]
    fn canonicalize_orders_nodes_and_edges() {
        let lines = [line(0, 0., 0.), line(1, 100., 0.), line(2, 0., 50.)];
        let mut g = init_graph(&lines, &[cand(0, 1), cand(1, 2)], 500., 500., 2).unwrap();
        let reference = g.clone();
        g.nodes.reverse();
        for e in &mut g.edges {
            (e.a, e.b) = (2 - e.b, 2 - e.a);
        }
        g.edges.reverse();
        g.canonicalize();
        assert_eq!(g, reference);
    }
}
