//! Ground-truth alignment, edit labels, BCE losses and a small trainer for the
//! proposal scorer.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{Document, TextLine};
use crate::exec::Execution;
use crate::geometry::clipped_iou;
use crate::gnn::grad::{pair_logit, proposal_loss_and_grad, PairSample};
use crate::gnn::{head, sigmoid, GnnError, Linear, Mlp2, ModelWeights, Tensor};
use crate::graphedit::FormGraph;
use crate::proposal::{all_pair_features, ProposalError};
use crate::protocol::ALIGNMENT_IOU_THRESHOLD;

/// Scores are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisionError {
    #[error("training needs at least one document with two or more lines")]
    NoData,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// Predicted line id to GT line id, for lines clearing the threshold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineAssignment {
    pub pred_to_gt: BTreeMap<usize, Option<usize>>,
}

impl LineAssignment {
    pub fn gt_of(&self, pred: usize) -> Option<usize> {
        self.pred_to_gt.get(&pred).copied().flatten()
    }

    /// GT line id to the predicted lines assigned to it.
    pub fn gt_to_pred(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&p, g) in &self.pred_to_gt {
            if let Some(g) = g {
                m.entry(*g).or_default().push(p);
            }
        }
        m
    }
}

/// Assigns each predicted line to the GT line with the highest clipped IOU,
/// if that IOU is at least 0.4. Ties go to the smaller GT id.
pub fn assign_lines(pred: &[TextLine], gt: &[TextLine]) -> LineAssignment {
    let mut gt_sorted: Vec<&TextLine> = gt.iter().collect();
    gt_sorted.sort_by_key(|l| l.id);
    let pred_to_gt = pred
        .iter()
        .map(|p| {
            let mut best: Option<(f64, usize)> = None;
            for g in &gt_sorted {
                let v = clipped_iou(&g.bbox, &p.bbox);
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, g.id));
                }
            }
            let hit = best.filter(|&(v, _)| v >= ALIGNMENT_IOU_THRESHOLD).map(|(_, id)| id);
            (p.id, hit)
        })
        .collect();
    LineAssignment { pred_to_gt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    Merge,
    Group,
    Relationship,
    Prune,
}

impl EdgeLabel {
    /// Index of the matching edge-head output.
    pub fn head(self) -> usize {
        match self {
            EdgeLabel::Prune => head::PRUNE,
            EdgeLabel::Merge => head::MERGE,
            EdgeLabel::Group => head::GROUP,
            EdgeLabel::Relationship => head::RELATIONSHIP,
        }
    }

    pub fn is_positive_pair(self) -> bool {
        self != EdgeLabel::Prune
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLabels {
    pub edges: Vec<EdgeLabel>,
    /// GT class per node; `None` where the node is ignored.
    pub nodes: Vec<Option<usize>>,
}

/// What a set of predicted lines maps to in the ground truth.
#[derive(Debug, Clone, Default)]
struct GtSpan {
    lines: BTreeSet<usize>,
    entities: BTreeSet<usize>,
    unassigned: bool,
}

struct Aligner<'a> {
    doc: &'a Document,
    assignment: &'a LineAssignment,
    line_entity: HashMap<usize, usize>,
}

impl<'a> Aligner<'a> {
    fn new(doc: &'a Document, assignment: &'a LineAssignment) -> Self {
        Self {
            doc,
            assignment,
            line_entity: doc.gt_line_entity(),
        }
    }

    fn span(&self, pred_ids: &[usize]) -> GtSpan {
        let mut s = GtSpan::default();
        for &p in pred_ids {
            match self.assignment.gt_of(p) {
                Some(g) => {
                    s.lines.insert(g);
                    if let Some(&e) = self.line_entity.get(&g) {
                        s.entities.insert(e);
                    }
                }
                None => s.unassigned = true,
            }
        }
        s
    }

    /// Merge if the two sides share a GT line; else group if they share a GT
    /// entity; else relationship if any of their entities are linked; else
    /// prune.
    fn label(&self, a: &GtSpan, b: &GtSpan) -> EdgeLabel {
        if !a.lines.is_disjoint(&b.lines) {
            EdgeLabel::Merge
        } else if !a.entities.is_disjoint(&b.entities) {
            EdgeLabel::Group
        } else if a
            .entities
            .iter()
            .any(|&x| b.entities.iter().any(|&y| self.doc.has_relationship(x, y)))
        {
            EdgeLabel::Relationship
        } else {
            EdgeLabel::Prune
        }
    }

    fn node_class(&self, s: &GtSpan) -> Option<usize> {
        if s.unassigned || s.entities.len() != 1 {
            return None;
        }
        let e = *s.entities.iter().next()?;
        Some(self.doc.gt_entities[e].class)
    }
}

/// Labels every edge and node of `graph` from the aligned ground truth.
pub fn derive_labels(graph: &FormGraph, assignment: &LineAssignment, doc: &Document) -> EdgeLabels {
    let al = Aligner::new(doc, assignment);
    let spans: Vec<GtSpan> = graph.nodes.iter().map(|n| al.span(&n.input_line_ids())).collect();
    EdgeLabels {
        edges: graph.edges.iter().map(|e| al.label(&spans[e.a], &spans[e.b])).collect(),
        nodes: spans.iter().map(|s| al.node_class(s)).collect(),
    }
}

/// Label of one unordered pair of input lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub label: EdgeLabel,
}

impl PairLabel {
    pub fn positive(&self) -> bool {
        self.label.is_positive_pair()
    }
}

/// Labels for every unordered pair of `lines`, in the same order as
/// [`crate::proposal::all_pair_features`].
pub fn proposal_labels(lines: &[TextLine], assignment: &LineAssignment, doc: &Document) -> Vec<PairLabel> {
    let al = Aligner::new(doc, assignment);
    let spans: Vec<GtSpan> = lines.iter().map(|l| al.span(&[l.id])).collect();
    let mut out = Vec::with_capacity(lines.len() * lines.len().saturating_sub(1) / 2);
    for x in 0..lines.len() {
        for y in x + 1..lines.len() {
            let (i, j) = (lines[x].id.min(lines[y].id), lines[x].id.max(lines[y].id));
            out.push(PairLabel {
                i,
                j,
                label: al.label(&spans[x], &spans[y]),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BceLoss {
    /// Mean over non-ignored terms; 0 when every term is ignored.
    pub mean: f64,
    /// Per-term loss, `None` where ignored.
    pub terms: Vec<Option<f64>>,
    /// How many scores had to be clamped.
    pub clamped: usize,
}

/// `-[y ln s + (1 - y) ln(1 - s)]` averaged over non-ignored terms. Scores
/// outside `[1e-7, 1 - 1e-7]` are clamped, with a warning.
pub fn bce_loss(scores: &[f64], labels: &[f64], ignore: Option<&[bool]>) -> Result<BceLoss, SupervisionError> {
    if scores.len() != labels.len() || ignore.is_some_and(|m| m.len() != scores.len()) {
        return Err(SupervisionError::Invalid(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    let mut used = 0usize;
    let terms = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (&s, &y))| {
            if ignore.is_some_and(|m| m[k]) {
                return None;
            }
            let c = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if c != s {
                clamped += 1;
            }
            let t = -(y * c.ln() + (1.0 - y) * (1.0 - c).ln());
            total += t;
            used += 1;
            Some(t)
        })
        .collect();
    if clamped > 0 {
        log::warn!("bce: clamped {clamped} scores into [{BCE_CLAMP}, 1 - {BCE_CLAMP}]");
    }
    Ok(BceLoss {
        mean: if used > 0 { total / used as f64 } else { 0.0 },
        terms,
        clamped,
    })
}

/// Per-head edge losses and the node class loss of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub prune: f64,
    pub merge: f64,
    pub group: f64,
    pub relationship: f64,
    /// Per-class BCE over non-ignored nodes.
    pub class: f64,
}

/// Losses of the scores currently stored on `graph` against `labels`. Each
/// edge head is a binary task whose target is 1 on edges with that label.
pub fn stage_losses(graph: &FormGraph, labels: &EdgeLabels) -> Result<StageLoss, SupervisionError> {
    let mut per_head = [0.0; 4];
    for (h, slot) in per_head.iter_mut().enumerate() {
        let s: Vec<f64> = graph.edges.iter().map(|e| e.scores[h]).collect();
        let y: Vec<f64> = labels
            .edges
            .iter()
            .map(|l| if l.head() == h { 1.0 } else { 0.0 })
            .collect();
        *slot = bce_loss(&s, &y, None)?.mean;
    }
    let mut s = Vec::new();
    let mut y = Vec::new();
    let mut ignore = Vec::new();
    for (n, lab) in graph.nodes.iter().zip(&labels.nodes) {
        for (c, &v) in n.class_scores.iter().enumerate() {
            s.push(v);
            y.push(if *lab == Some(c) { 1.0 } else { 0.0 });
            ignore.push(lab.is_none());
        }
    }
    Ok(StageLoss {
        prune: per_head[head::PRUNE],
        merge: per_head[head::MERGE],
        group: per_head[head::GROUP],
        relationship: per_head[head::RELATIONSHIP],
        class: bce_loss(&s, &y, Some(&ignore))?.mean,
    })
}

/// Pair samples (both orders plus 0/1 target) for every document, in order.
pub fn training_pairs(docs: &[Document], exec: Execution) -> Result<Vec<PairSample>, SupervisionError> {
    let per_doc = exec.try_map(docs, |doc| -> Result<Vec<PairSample>, SupervisionError> {
        let lines = doc.confident_lines();
        let assignment = assign_lines(&lines, &doc.gt_lines);
        let labels = proposal_labels(&lines, &assignment, doc);
        let feats = all_pair_features(
            &lines,
            doc.image_width,
            doc.image_height,
            doc.class_set.len(),
            Execution::Sequential,
        )?;
        Ok(feats
            .into_iter()
            .zip(labels)
            .map(|(f, l)| {
                debug_assert_eq!((f.i, f.j), (l.i, l.j));
                PairSample {
                    forward: f.forward,
                    backward: f.backward,
                    label: if l.positive() { 1.0 } else { 0.0 },
                }
            })
            .collect())
    })?;
    Ok(per_doc.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 0.05,
            momentum: 0.9,
            batch: 64,
            hidden: crate::protocol::PROPOSAL_HIDDEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub mlp: Mlp2<f64>,
    /// Minibatch loss before each step's update.
    pub loss_curve: Vec<f64>,
}

/// Uniform `+-sqrt(6 / fan_in)` weights, zero biases.
pub fn init_proposal_mlp(input_dim: usize, hidden: usize, seed: u64) -> Mlp2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
        let b = (6.0 / fan_in as f64).sqrt();
        (0..n).map(|_| rng.gen_range(-b..b)).collect()
    };
    Mlp2 {
        fc1: Linear {
            out_dim: hidden,
            in_dim: input_dim,
            weight: uniform(hidden * input_dim, input_dim),
            bias: vec![0.0; hidden],
        },
        norm: None,
        fc2: Linear {
            out_dim: 1,
            in_dim: hidden,
            weight: uniform(hidden, hidden),
            bias: vec![0.0],
        },
    }
}

/// Minibatch SGD with momentum on mean BCE. Single-threaded and
/// deterministic given the seed.
pub fn train_proposal_mlp(samples: &[PairSample], cfg: &TrainConfig) -> Result<TrainResult, SupervisionError> {
    let first = samples.first().ok_or(SupervisionError::NoData)?;
    if cfg.batch == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(SupervisionError::Invalid(format!("bad training configuration {cfg:?}")));
    }
    let mut mlp = init_proposal_mlp(first.forward.len(), cfg.hidden, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut velocity = Mlp2 {
        fc1: Linear::zeros(mlp.fc1.out_dim, mlp.fc1.in_dim),
        norm: None,
        fc2: Linear::zeros(1, mlp.fc2.in_dim),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch.min(samples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(samples[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grad) = proposal_loss_and_grad(&mlp, &batch)?;
        if !loss.is_finite() {
            return Err(SupervisionError::Diverged { step, loss });
        }
        loss_curve.push(loss);
        let params = crate::gnn::grad::params_mut(&mut mlp);
        let vels = crate::gnn::grad::params_mut(&mut velocity);
        let grads = crate::gnn::grad::params(&grad);
        for ((p, v), g) in params.into_iter().zip(vels).zip(grads) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
        }
    }
    Ok(TrainResult { mlp, loss_curve })
}

/// Fraction of samples whose score falls on the correct side of 0.5.
pub fn pair_accuracy(mlp: &Mlp2<f64>, samples: &[PairSample]) -> Result<f64, SupervisionError> {
    if samples.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for s in samples {
        let p = sigmoid(pair_logit(mlp, s)?);
        if (p >= 0.5) == (s.label >= 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Writes a trained scorer into the `proposal.*` tensors of `weights`.
pub fn store_proposal(mlp: &Mlp2<f64>, weights: &mut ModelWeights) -> Result<(), SupervisionError> {
    let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let t = |name: &str, shape: Vec<usize>, data: Vec<f32>| Tensor::new(name, shape, data);
    weights.insert(t("proposal.fc1.weight", vec![mlp.fc1.out_dim, mlp.fc1.in_dim], f(&mlp.fc1.weight))?);
    weights.insert(t("proposal.fc1.bias", vec![mlp.fc1.out_dim], f(&mlp.fc1.bias))?);
    weights.insert(t("proposal.fc2.weight", vec![1, mlp.fc2.in_dim], f(&mlp.fc2.weight))?);
    weights.insert(t("proposal.fc2.bias", vec![1], f(&mlp.fc2.bias))?);
    Ok(())
}
