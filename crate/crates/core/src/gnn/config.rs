use serde::{Deserialize, Serialize};

use super::{GnnError, ModelWeights};
use crate::protocol;

/// Architecture hyper-parameters. [`ModelConfig::standard`] is the published
/// architecture; smaller configurations exist for tests and experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub class_count: usize,
    pub hidden: usize,
    pub heads: usize,
    pub stage_depths: Vec<usize>,
    pub norm_groups: usize,
    pub visual_dim: usize,
    pub proposal_hidden: usize,
}

/// Number of edge predictions, in head order.
pub const EDGE_OUTPUTS: usize = 4;

impl ModelConfig {
    pub fn standard(class_count: usize) -> Self {
        Self {
            class_count,
            hidden: protocol::GCN_HIDDEN,
            heads: protocol::ATTENTION_HEADS,
            stage_depths: protocol::STAGE_DEPTHS.to_vec(),
            norm_groups: protocol::GROUP_NORM_GROUPS,
            visual_dim: protocol::VISUAL_FEATURE_DIM,
            proposal_hidden: protocol::PROPOSAL_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.class_count == 0 {
            return Err("class_count must be positive".into());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(format!("{} heads do not divide hidden size {}", self.heads, self.hidden));
        }
        if self.norm_groups == 0 || !self.hidden.is_multiple_of(self.norm_groups) {
            return Err(format!(
                "{} norm groups do not divide hidden size {}",
                self.norm_groups, self.hidden
            ));
        }
        if self.stage_depths.is_empty() {
            return Err("at least one stage is required".into());
        }
        Ok(())
    }

    /// Pairwise proposal feature width: 25 geometric/detection entries plus
    /// both class-score vectors.
    pub fn proposal_input_dim(&self) -> usize {
        25 + 2 * self.class_count
    }

    /// Visual vector plus `[confidence, height, width, classes]`.
    pub fn node_initial_dim(&self) -> usize {
        self.visual_dim + 3 + self.class_count
    }

    /// Visual vector plus `[heights, widths, classes of both, 4 corner distances]`.
    pub fn edge_initial_dim(&self) -> usize {
        self.visual_dim + 8 + 2 * self.class_count
    }

    pub fn stage_count(&self) -> usize {
        self.stage_depths.len()
    }

    /// Every tensor name and shape, in canonical file order. Linear weights
    /// are `[out, in]`, row-major.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut m: Vec<(String, Vec<usize>)> = Vec::new();
        let linear = |m: &mut Vec<(String, Vec<usize>)>, name: &str, out: usize, inp: usize| {
            m.push((format!("{name}.weight"), vec![out, inp]));
            m.push((format!("{name}.bias"), vec![out]));
        };
        linear(&mut m, "proposal.fc1", self.proposal_hidden, self.proposal_input_dim());
        linear(&mut m, "proposal.fc2", 1, self.proposal_hidden);
        linear(&mut m, "init.node_transition", h, self.node_initial_dim());
        linear(&mut m, "init.edge_transition", h, self.edge_initial_dim());
        for (s, &depth) in self.stage_depths.iter().enumerate() {
            if s > 0 {
                linear(&mut m, &format!("stage{s}.node_transition"), h, h + self.node_initial_dim());
                linear(&mut m, &format!("stage{s}.edge_transition"), h, h + self.edge_initial_dim());
            }
            for b in 0..depth {
                let p = format!("stage{s}.block{b}");
                for (mlp, inp) in [("edge_mlp", 3 * h), ("node_mlp", 2 * h)] {
                    linear(&mut m, &format!("{p}.{mlp}.fc1"), h, inp);
                    m.push((format!("{p}.{mlp}.norm.gamma"), vec![h]));
                    m.push((format!("{p}.{mlp}.norm.beta"), vec![h]));
                    linear(&mut m, &format!("{p}.{mlp}.fc2"), h, h);
                }
                for proj in ["q", "k", "v", "o"] {
                    linear(&mut m, &format!("{p}.attn.{proj}"), h, h);
                }
            }
            linear(&mut m, &format!("stage{s}.node_head"), self.class_count, h);
            linear(&mut m, &format!("stage{s}.edge_head"), EDGE_OUTPUTS, h);
        }
        m
    }

    /// Recovers a configuration from tensor shapes. Head and norm-group counts
    /// are not visible in shapes and take the standard values.
    pub fn infer(w: &ModelWeights) -> Result<Self, GnnError> {
        let shape = |name: &str| {
            w.get(name)
                .map(|t| t.shape.clone())
                .ok_or_else(|| GnnError::MissingTensor(name.to_string()))
        };
        let head = shape("stage0.node_head.weight")?;
        let proposal = shape("proposal.fc1.weight")?;
        let init = shape("init.node_transition.weight")?;
        let (class_count, hidden) = (head[0], head[1]);
        let visual_dim = init[1]
            .checked_sub(3 + class_count)
            .ok_or_else(|| GnnError::Config(format!("initial node width {} is too small", init[1])))?;
        let mut stage_depths = Vec::new();
        while w.get(&format!("stage{}.node_head.weight", stage_depths.len())).is_some() {
            let s = stage_depths.len();
            let depth = (0..)
                .take_while(|b| w.get(&format!("stage{s}.block{b}.attn.q.weight")).is_some())
                .count();
            stage_depths.push(depth);
        }
        let cfg = Self {
            class_count,
            hidden,
            heads: protocol::ATTENTION_HEADS,
            stage_depths,
            norm_groups: protocol::GROUP_NORM_GROUPS,
            visual_dim,
            proposal_hidden: proposal[0],
        };
        cfg.validate().map_err(GnnError::Config)?;
        w.validate(&cfg)?;
        Ok(cfg)
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
