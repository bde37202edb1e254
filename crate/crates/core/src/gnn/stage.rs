//! GN blocks (edge update, attention aggregation, node update; no global
//! attributes) and the three-stage model built from them.

use super::layers::{canonical_order, EdgeAttention, Linear, Mlp2};
use super::real::{sigmoid, softmax, Real};
use super::{GnnError, ModelConfig, ModelWeights, EDGE_OUTPUTS};
use crate::exec::Execution;

/// Index of each edge prediction in head order.
pub mod head {
    pub const PRUNE: usize = 0;
    pub const MERGE: usize = 1;
    pub const GROUP: usize = 2;
    pub const RELATIONSHIP: usize = 3;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnBlock<T> {
    pub edge_mlp: Mlp2<T>,
    pub node_mlp: Mlp2<T>,
    pub attention: EdgeAttention<T>,
}

impl<T: Real> GnBlock<T> {
    pub fn from_weights(w: &ModelWeights, prefix: &str, cfg: &ModelConfig) -> Result<Self, GnnError> {
        let h = cfg.hidden;
        let g = Some(cfg.norm_groups);
        Ok(Self {
            edge_mlp: Mlp2::from_weights(w, &format!("{prefix}.edge_mlp"), 3 * h, h, h, g)?,
            node_mlp: Mlp2::from_weights(w, &format!("{prefix}.node_mlp"), 2 * h, h, h, g)?,
            attention: EdgeAttention::from_weights(w, &format!("{prefix}.attn"), h, cfg.heads)?,
        })
    }

    /// One block over directed edges `adjacency[k] = (src, dst)`.
    ///
    /// Edges update first, `e' = e + edge_mlp([e; h_src; h_dst])`; then each
    /// node attends over its incoming updated edges,
    /// `h' = h + node_mlp([attention(h, incoming e'); h])`.
    pub fn forward(
        &self,
        nodes: &[Vec<T>],
        edges: &[Vec<T>],
        adjacency: &[(usize, usize)],
        exec: Execution,
    ) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>), GnnError> {
        check_adjacency(nodes.len(), edges.len(), adjacency)?;
        let new_edges = exec
            .map_range(edges.len(), |k| {
                let (s, d) = adjacency[k];
                let mut input = Vec::with_capacity(edges[k].len() * 3);
                input.extend_from_slice(&edges[k]);
                input.extend_from_slice(&nodes[s]);
                input.extend_from_slice(&nodes[d]);
                let delta = self.edge_mlp.forward(&input)?;
                Ok(residual(&edges[k], &delta))
            })
            .into_iter()
            .collect::<Result<Vec<_>, GnnError>>()?;

        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (k, &(_, d)) in adjacency.iter().enumerate() {
            incoming[d].push(k);
        }
        let new_nodes = exec
            .map_range(nodes.len(), |n| {
                let mut items: Vec<&[T]> = incoming[n].iter().map(|&k| new_edges[k].as_slice()).collect();
                canonical_order(&mut items);
                let agg = self.attention.aggregate(&nodes[n], &items)?;
                let mut input = agg;
                input.extend_from_slice(&nodes[n]);
                let delta = self.node_mlp.forward(&input)?;
                Ok(residual(&nodes[n], &delta))
            })
            .into_iter()
            .collect::<Result<Vec<_>, GnnError>>()?;
        Ok((new_nodes, new_edges))
    }
}

fn residual<T: Real>(x: &[T], delta: &[T]) -> Vec<T> {
    x.iter().zip(delta).map(|(&a, &b)| a + b).collect()
}

fn check_adjacency(n_nodes: usize, n_edges: usize, adjacency: &[(usize, usize)]) -> Result<(), GnnError> {
    if adjacency.len() != n_edges {
        return Err(GnnError::Shape(format!(
            "{} edge features for {} adjacency entries",
            n_edges,
            adjacency.len()
        )));
    }
    for (k, &(s, d)) in adjacency.iter().enumerate() {
        if s >= n_nodes || d >= n_nodes {
            return Err(GnnError::DanglingAdjacency {
                edge: k,
                node: s.max(d),
                nodes: n_nodes,
            });
        }
    }
    Ok(())
}

/// Output of one stage for an undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<T> {
    pub node_feats: Vec<Vec<T>>,
    pub edge_feats: Vec<Vec<T>>,
    /// Softmax over classes, per node.
    pub class_scores: Vec<Vec<T>>,
    /// Sigmoid scores `[prune, merge, group, relationship]`, per edge.
    pub edge_scores: Vec<[T; EDGE_OUTPUTS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnStage<T> {
    pub blocks: Vec<GnBlock<T>>,
    pub node_head: Linear<T>,
    pub edge_head: Linear<T>,
    /// Feature-reintroduction transitions; absent on the first stage, which
    /// uses the model's initial transitions instead.
    pub node_transition: Option<Linear<T>>,
    pub edge_transition: Option<Linear<T>>,
}

impl<T: Real> GcnStage<T> {
    pub fn from_weights(w: &ModelWeights, index: usize, cfg: &ModelConfig) -> Result<Self, GnnError> {
        let h = cfg.hidden;
        let p = format!("stage{index}");
        let blocks = (0..cfg.stage_depths[index])
            .map(|b| GnBlock::from_weights(w, &format!("{p}.block{b}"), cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let (node_transition, edge_transition) = if index > 0 {
            (
                Some(Linear::from_weights(w, &format!("{p}.node_transition"), h, h + cfg.node_initial_dim())?),
                Some(Linear::from_weights(w, &format!("{p}.edge_transition"), h, h + cfg.edge_initial_dim())?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            blocks,
            node_head: Linear::from_weights(w, &format!("{p}.node_head"), cfg.class_count, h)?,
            edge_head: Linear::from_weights(w, &format!("{p}.edge_head"), EDGE_OUTPUTS, h)?,
            node_transition,
            edge_transition,
        })
    }

    /// Runs every block over the directed duplication of `edges` (edge `k`
    /// becomes `2k = a->b` and `2k+1 = b->a`), then averages the two
    /// directions' features and head predictions per undirected edge.
    pub fn forward(
        &self,
        node_feats: &[Vec<T>],
        edges: &[(usize, usize)],
        edge_feats: &[Vec<T>],
        exec: Execution,
    ) -> Result<StageOutput<T>, GnnError> {
        if edges.len() != edge_feats.len() {
            return Err(GnnError::Shape(format!(
                "{} edges with {} feature vectors",
                edges.len(),
                edge_feats.len()
            )));
        }
        let mut adjacency = Vec::with_capacity(2 * edges.len());
        let mut dir_feats = Vec::with_capacity(2 * edges.len());
        for (&(a, b), f) in edges.iter().zip(edge_feats) {
            adjacency.push((a, b));
            adjacency.push((b, a));
            dir_feats.push(f.clone());
            dir_feats.push(f.clone());
        }
        let mut nodes = node_feats.to_vec();
        for block in &self.blocks {
            let (n, e) = block.forward(&nodes, &dir_feats, &adjacency, exec)?;
            nodes = n;
            dir_feats = e;
        }
        let half = T::from_f64(0.5);
        let per_edge = exec
            .map_range(edges.len(), |k| {
                let (f0, f1) = (&dir_feats[2 * k], &dir_feats[2 * k + 1]);
                let s0 = self.edge_head.forward(f0)?;
                let s1 = self.edge_head.forward(f1)?;
                let mut scores = [T::zero(); EDGE_OUTPUTS];
                for i in 0..EDGE_OUTPUTS {
                    scores[i] = (sigmoid(s0[i]) + sigmoid(s1[i])) * half;
                }
                let feat: Vec<T> = f0.iter().zip(f1).map(|(&x, &y)| (x + y) * half).collect();
                Ok((feat, scores))
            })
            .into_iter()
            .collect::<Result<Vec<_>, GnnError>>()?;
        let class_scores = exec
            .map(&nodes, |h| self.node_head.forward(h).map(|l| softmax(&l)))
            .into_iter()
            .collect::<Result<Vec<_>, GnnError>>()?;
        let (edge_feats, edge_scores) = per_edge.into_iter().unzip();
        Ok(StageOutput {
            node_feats: nodes,
            edge_feats,
            class_scores,
            edge_scores,
        })
    }
}

/// The full model: proposal scorer, initial transitions and the stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub proposal: Mlp2<T>,
    pub node_transition: Linear<T>,
    pub edge_transition: Linear<T>,
    pub stages: Vec<GcnStage<T>>,
}

impl<T: Real> Model<T> {
    pub fn from_weights(w: &ModelWeights, config: &ModelConfig) -> Result<Self, GnnError> {
        config.validate().map_err(GnnError::Config)?;
        w.validate(config)?;
        let h = config.hidden;
        Ok(Self {
            config: config.clone(),
            proposal: Mlp2::from_weights(w, "proposal", config.proposal_input_dim(), config.proposal_hidden, 1, None)?,
            node_transition: Linear::from_weights(w, "init.node_transition", h, config.node_initial_dim())?,
            edge_transition: Linear::from_weights(w, "init.edge_transition", h, config.edge_initial_dim())?,
            stages: (0..config.stage_count())
                .map(|s| GcnStage::from_weights(w, s, config))
                .collect::<Result<Vec<_>, _>>()?,
        })
    }
}
