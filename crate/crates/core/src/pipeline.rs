//! End-to-end inference over one document.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{Document, TextLine};
use crate::exec::Execution;
use crate::features::{init_graph_features, reintroduce_features, FeatureError, VisualFeatureProvider};
use crate::gnn::{head, GnnError, Model};
use crate::graphedit::{
    apply_edit_step, finalize, init_graph, EntityPairScore, FormGraph, GraphError, Prediction, StageScores,
};
use crate::proposal::{score_pairs, select_edges, EdgeCandidate, ProposalError};
use crate::protocol::{EditThresholds, EDIT_SCHEDULE, RELATIONSHIP_THRESHOLD};
use crate::supervision::{assign_lines, derive_labels, proposal_labels, EdgeLabel, LineAssignment};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("edge proposal: {0}")]
    Proposal(#[from] ProposalError),
    #[error("feature construction: {0}")]
    Features(#[from] FeatureError),
    #[error("graph network: {0}")]
    Gnn(#[from] GnnError),
    #[error("graph edit: {0}")]
    Graph(#[from] GraphError),
    #[error("configuration: {0}")]
    Config(String),
}

/// Supplies proposal scores, graph features and per-stage predictions.
pub trait Scorer: Sync {
    fn stage_count(&self) -> usize;

    fn propose(&self, doc: &Document, lines: &[TextLine], exec: Execution) -> Result<Vec<EdgeCandidate>, PipelineError>;

    /// Builds initial features on a fresh graph.
    fn init_features(&self, _graph: &mut FormGraph, _exec: Execution) -> Result<(), PipelineError> {
        Ok(())
    }

    /// Feature reintroduction before stage `stage` (never called for 0).
    fn reintroduce(&self, _stage: usize, _graph: &mut FormGraph, _exec: Execution) -> Result<(), PipelineError> {
        Ok(())
    }

    fn stage(&self, stage: usize, graph: &FormGraph, exec: Execution) -> Result<StageScores, PipelineError>;
}

/// The graph network with a visual feature provider.
pub struct GcnScorer {
    pub model: Model<f32>,
    pub provider: Box<dyn VisualFeatureProvider>,
}

impl GcnScorer {
    pub fn new(model: Model<f32>, provider: Box<dyn VisualFeatureProvider>) -> Result<Self, PipelineError> {
        if provider.dim() != model.config.visual_dim {
            return Err(PipelineError::Config(format!(
                "provider yields {} features, model expects {}",
                provider.dim(),
                model.config.visual_dim
            )));
        }
        Ok(Self { model, provider })
    }
}

impl Scorer for GcnScorer {
    fn stage_count(&self) -> usize {
        self.model.stages.len()
    }

    fn propose(&self, doc: &Document, lines: &[TextLine], exec: Execution) -> Result<Vec<EdgeCandidate>, PipelineError> {
        if doc.class_set.len() != self.model.config.class_count {
            return Err(PipelineError::Config(format!(
                "document has {} classes, model has {}",
                doc.class_set.len(),
                self.model.config.class_count
            )));
        }
        Ok(score_pairs(
            lines,
            doc.image_width,
            doc.image_height,
            doc.class_set.len(),
            &self.model.proposal,
            exec,
        )?)
    }

    fn init_features(&self, graph: &mut FormGraph, exec: Execution) -> Result<(), PipelineError> {
        init_graph_features(
            graph,
            self.provider.as_ref(),
            &self.model.node_transition,
            &self.model.edge_transition,
            exec,
        )?;
        Ok(())
    }

    fn reintroduce(&self, stage: usize, graph: &mut FormGraph, exec: Execution) -> Result<(), PipelineError> {
        let s = &self.model.stages[stage];
        let (Some(nt), Some(et)) = (&s.node_transition, &s.edge_transition) else {
            return Err(PipelineError::Config(format!("stage {stage} has no transition layers")));
        };
        reintroduce_features(graph, self.provider.as_ref(), nt, et, exec)?;
        Ok(())
    }

    fn stage(&self, stage: usize, graph: &FormGraph, exec: Execution) -> Result<StageScores, PipelineError> {
        let nodes: Vec<Vec<f32>> = graph.nodes.iter().map(|n| n.feat.clone()).collect();
        let edges: Vec<Vec<f32>> = graph.edges.iter().map(|e| e.feat.clone()).collect();
        let out = self.model.stages[stage].forward(&nodes, &graph.edge_pairs(), &edges, exec)?;
        Ok(StageScores {
            class_scores: out
                .class_scores
                .iter()
                .map(|c| c.iter().map(|&v| v as f64).collect())
                .collect(),
            edge_scores: out.edge_scores.iter().map(|s| s.map(|v| v as f64)).collect(),
            node_feats: Some(out.node_feats),
            edge_feats: Some(out.edge_feats),
        })
    }
}

/// Predicts exactly what the aligned ground truth says: proposal scores 1 on
/// positive pairs, and one-hot edit scores and classes at every stage.
pub struct OracleScorer<'a> {
    doc: &'a Document,
    assignment: LineAssignment,
    stages: usize,
}

impl<'a> OracleScorer<'a> {
    pub fn new(doc: &'a Document) -> Self {
        Self {
            doc,
            assignment: assign_lines(&doc.confident_lines(), &doc.gt_lines),
            stages: EDIT_SCHEDULE.len(),
        }
    }
}

impl Scorer for OracleScorer<'_> {
    fn stage_count(&self) -> usize {
        self.stages
    }

    fn propose(&self, _doc: &Document, lines: &[TextLine], _exec: Execution) -> Result<Vec<EdgeCandidate>, PipelineError> {
        Ok(proposal_labels(lines, &self.assignment, self.doc)
            .into_iter()
            .map(|l| EdgeCandidate {
                i: l.i,
                j: l.j,
                score: if l.positive() { 1.0 } else { 0.0 },
            })
            .collect())
    }

    fn stage(&self, _stage: usize, graph: &FormGraph, _exec: Execution) -> Result<StageScores, PipelineError> {
        let labels = derive_labels(graph, &self.assignment, self.doc);
        let edge_scores = labels
            .edges
            .iter()
            .map(|l| {
                let mut s = [0.0; 4];
                s[l.head()] = 1.0;
                s
            })
            .collect();
        let class_scores = graph
            .nodes
            .iter()
            .zip(&labels.nodes)
            .map(|(n, c)| match c {
                Some(c) => self.doc.class_set.one_hot(*c),
                None => n.class_scores.clone(),
            })
            .collect();
        Ok(StageScores {
            class_scores,
            edge_scores,
            node_feats: None,
            edge_feats: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// One entry per stage.
    pub thresholds: Vec<EditThresholds>,
    pub relationship_threshold: f64,
    /// Also run with GT grouping forced and record GT-entity pair scores.
    pub gt_entity_scores: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            thresholds: EDIT_SCHEDULE.to_vec(),
            relationship_threshold: RELATIONSHIP_THRESHOLD,
            gt_entity_scores: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prediction: Prediction,
    pub graph: FormGraph,
    pub candidates: usize,
    pub proposed: Vec<EdgeCandidate>,
}

fn check(scorer: &dyn Scorer, opts: &RunOptions) -> Result<(), PipelineError> {
    if opts.thresholds.len() != scorer.stage_count() {
        return Err(PipelineError::Config(format!(
            "{} threshold sets for {} stages",
            opts.thresholds.len(),
            scorer.stage_count()
        )));
    }
    if let Some(t) = opts.thresholds.iter().find(|t| !t.is_valid()) {
        return Err(PipelineError::Config(format!("thresholds out of (0, 1): {t:?}")));
    }
    Ok(())
}

fn proposal_graph(
    doc: &Document,
    scorer: &dyn Scorer,
    exec: Execution,
) -> Result<(FormGraph, usize, Vec<EdgeCandidate>), PipelineError> {
    let lines = doc.confident_lines();
    let candidates = scorer.propose(doc, &lines, exec)?;
    let proposed = select_edges(&candidates);
    let mut graph = init_graph(&lines, &proposed, doc.image_width, doc.image_height, doc.class_set.len())?;
    scorer.init_features(&mut graph, exec)?;
    Ok((graph, candidates.len(), proposed))
}

/// Proposal, initial features, then per stage: reintroduction (after the
/// first), prediction and one edit step; finally the relationship filter.
pub fn run_document(doc: &Document, scorer: &dyn Scorer, opts: &RunOptions, exec: Execution) -> Result<RunOutput, PipelineError> {
    check(scorer, opts)?;
    let (mut graph, candidates, proposed) = proposal_graph(doc, scorer, exec)?;
    for (s, thresholds) in opts.thresholds.iter().enumerate() {
        if s > 0 {
            scorer.reintroduce(s, &mut graph, exec)?;
        }
        let scores = scorer.stage(s, &graph, exec)?;
        graph.apply_stage(scores)?;
        graph = apply_edit_step(&graph, thresholds, s);
        log::debug!(
            "{}: stage {s} left {} nodes, {} edges",
            doc.name,
            graph.nodes.len(),
            graph.edges.len()
        );
    }
    let graph = finalize(&graph, opts.relationship_threshold);
    let mut prediction = Prediction::from_graph(&doc.name, &doc.class_set, &graph);
    if opts.gt_entity_scores {
        prediction.gt_entity_scores = Some(gt_entity_scores(doc, scorer, opts, exec)?);
    }
    Ok(RunOutput {
        prediction,
        graph,
        candidates,
        proposed,
    })
}

/// Relationship scores between GT entities with the first edit's grouping
/// replaced by the GT grouping. Later edits may prune but not merge or group.
pub fn gt_entity_scores(
    doc: &Document,
    scorer: &dyn Scorer,
    opts: &RunOptions,
    exec: Execution,
) -> Result<Vec<EntityPairScore>, PipelineError> {
    check(scorer, opts)?;
    let assignment = assign_lines(&doc.confident_lines(), &doc.gt_lines);
    let line_entity = doc.gt_line_entity();
    let entity_of = |ids: &[usize]| -> Option<usize> {
        ids.iter()
            .find_map(|&p| assignment.gt_of(p).and_then(|g| line_entity.get(&g).copied()))
    };
    let (mut graph, _, _) = proposal_graph(doc, scorer, exec)?;
    let prune_only = |t: &EditThresholds| EditThresholds {
        merge: f64::INFINITY,
        group: f64::INFINITY,
        prune: t.prune,
    };
    for (s, thresholds) in opts.thresholds.iter().enumerate() {
        if s > 0 {
            scorer.reintroduce(s, &mut graph, exec)?;
        }
        let scores = scorer.stage(s, &graph, exec)?;
        graph.apply_stage(scores)?;
        if s == 0 {
            let n_ent = doc.gt_entities.len();
            let label: Vec<usize> = graph
                .nodes
                .iter()
                .enumerate()
                .map(|(k, n)| entity_of(&n.input_line_ids()).unwrap_or(n_ent + k))
                .collect();
            graph = graph.contract_partition(&label, false).0;
        }
        graph = apply_edit_step(&graph, &prune_only(thresholds), s);
    }
    let node_entity: Vec<Option<usize>> = graph.nodes.iter().map(|n| entity_of(&n.input_line_ids())).collect();
    Ok(graph
        .edges
        .iter()
        .filter_map(|e| {
            let (a, b) = (node_entity[e.a]?, node_entity[e.b]?);
            Some(EntityPairScore {
                a: a.min(b),
                b: a.max(b),
                score: e.scores[head::RELATIONSHIP],
            })
        })
        .collect())
}

/// Edge labels of the initial proposal graph, for dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDump {
    pub document: String,
    pub assignment: LineAssignment,
    pub edges: Vec<(usize, usize, EdgeLabel)>,
    pub node_classes: Vec<(usize, Option<usize>)>,
    pub proposal_pairs: usize,
    pub proposal_positives: usize,
}

pub fn alignment_dump(doc: &Document, scorer: &dyn Scorer, exec: Execution) -> Result<AlignmentDump, PipelineError> {
    let lines = doc.confident_lines();
    let assignment = assign_lines(&lines, &doc.gt_lines);
    let pairs = proposal_labels(&lines, &assignment, doc);
    let candidates = scorer.propose(doc, &lines, exec)?;
    let graph = init_graph(
        &lines,
        &select_edges(&candidates),
        doc.image_width,
        doc.image_height,
        doc.class_set.len(),
    )?;
    let labels = derive_labels(&graph, &assignment, doc);
    Ok(AlignmentDump {
        document: doc.name.clone(),
        edges: graph
            .edges
            .iter()
            .zip(&labels.edges)
            .map(|(e, l)| (graph.nodes[e.a].key(), graph.nodes[e.b].key(), *l))
            .collect(),
        node_classes: graph.nodes.iter().map(|n| n.key()).zip(labels.nodes).collect(),
        proposal_positives: pairs.iter().filter(|p| p.positive()).count(),
        proposal_pairs: pairs.len(),
        assignment,
    })
}
