//! Fixed protocol constants of the model and its evaluation.
//!
//! These values are part of the model definition: weight files, label
//! derivation and the evaluation numbers all assume them.

/// Detections below this confidence are discarded before graph construction.
pub const DETECTION_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Upper bound on the number of proposed edges kept for the initial graph.
pub const PROPOSAL_EDGE_CAP: usize = 900;

/// Hidden width of the proposal scorer.
pub const PROPOSAL_HIDDEN: usize = 256;

/// Clipped-IOU threshold for assigning a predicted line to a GT line.
pub const ALIGNMENT_IOU_THRESHOLD: f64 = 0.4;

/// IOU a predicted line needs against a GT line during evaluation.
pub const EVAL_IOU_THRESHOLD: f64 = 0.5;

/// Context windows are padded by this many pixels on every side.
pub const CONTEXT_PADDING_PX: f64 = 20.0;

/// Pooling resolution requested from the visual provider for nodes.
pub const NODE_GRID: (usize, usize) = (10, 10);

/// Pooling resolution requested from the visual provider for edges.
pub const EDGE_GRID: (usize, usize) = (16, 16);

/// Dimension of a visual feature vector returned by a provider.
pub const VISUAL_FEATURE_DIM: usize = 256;

/// Feature width of every graph-network stage.
pub const GCN_HIDDEN: usize = 256;

/// Attention heads in each edge aggregation.
pub const ATTENTION_HEADS: usize = 4;

/// Number of GN blocks in each of the three stages.
pub const STAGE_DEPTHS: [usize; 3] = [7, 7, 4];

/// GroupNorm group count inside every two-layer MLP.
pub const GROUP_NORM_GROUPS: usize = 8;

/// GroupNorm variance epsilon.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Dropout rate used in training; inference treats dropout as identity.
pub const DROPOUT_P: f64 = 0.1;

/// Final relationship threshold applied after the last edit.
pub const RELATIONSHIP_THRESHOLD: f64 = 0.5;

/// NAF images (and their annotations) are rescaled by this factor.
pub const NAF_SCALE: f64 = 0.52;

/// Per-iteration edit thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EditThresholds {
    pub merge: f64,
    pub group: f64,
    pub prune: f64,
}

impl EditThresholds {
    pub const fn new(merge: f64, group: f64, prune: f64) -> Self {
        Self { merge, group, prune }
    }

    /// All thresholds lie strictly inside (0, 1).
    pub fn is_valid(&self) -> bool {
        [self.merge, self.group, self.prune]
            .iter()
            .all(|t| *t > 0.0 && *t < 1.0)
    }
}

/// Threshold schedule for the three edit iterations. Merges start low so that
/// they happen first; grouping starts high; pruning stays high until the end.
pub const EDIT_SCHEDULE: [EditThresholds; 3] = [
    EditThresholds::new(0.8, 0.95, 0.9),
    EditThresholds::new(0.9, 0.9, 0.8),
    EditThresholds::new(0.9, 0.6, 0.5),
];
