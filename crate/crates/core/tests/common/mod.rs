//! Independent reference implementations used as test oracles. Everything
//! here reads weights by tensor name and uses plain loops in f64, sharing no
//! code with the library's layers.

#![allow(dead_code)]

use formgraph::gnn::{ModelConfig, ModelWeights, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Dense<'a> {
    pub w: &'a ModelWeights,
    pub cfg: &'a ModelConfig,
}

fn t(w: &ModelWeights, name: &str) -> Vec<f64> {
    w.get(name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .data
        .iter()
        .map(|&x| x as f64)
        .collect()
}

impl Dense<'_> {
    pub fn linear(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let wt = t(self.w, &format!("{name}.weight"));
        let b = t(self.w, &format!("{name}.bias"));
        let n_in = x.len();
        assert_eq!(wt.len(), b.len() * n_in, "{name}");
        let mut y = vec![0.0; b.len()];
        for o in 0..b.len() {
            let mut s = b[o];
            for i in 0..n_in {
                s += wt[o * n_in + i] * x[i];
            }
            y[o] = s;
        }
        y
    }

    pub fn group_norm(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let gamma = t(self.w, &format!("{name}.gamma"));
        let beta = t(self.w, &format!("{name}.beta"));
        let g = self.cfg.norm_groups;
        let size = x.len() / g;
        let mut y = vec![0.0; x.len()];
        for k in 0..g {
            let part = &x[k * size..(k + 1) * size];
            let mean = part.iter().sum::<f64>() / size as f64;
            let var = part.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / size as f64;
            for i in 0..size {
                let j = k * size + i;
                y[j] = gamma[j] * (x[j] - mean) / (var + 1e-5).sqrt() + beta[j];
            }
        }
        y
    }

    pub fn mlp(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let h = self.linear(&format!("{name}.fc1"), x);
        let h = self.group_norm(&format!("{name}.norm"), &h);
        let h: Vec<f64> = h.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
        self.linear(&format!("{name}.fc2"), &h)
    }

    pub fn attention(&self, prefix: &str, query: &[f64], items: &[Vec<f64>]) -> Vec<f64> {
        let d = self.cfg.hidden;
        if items.is_empty() {
            return vec![0.0; d];
        }
        let heads = self.cfg.heads;
        let hd = d / heads;
        let q = self.linear(&format!("{prefix}.q"), query);
        let ks: Vec<Vec<f64>> = items.iter().map(|e| self.linear(&format!("{prefix}.k"), e)).collect();
        let vs: Vec<Vec<f64>> = items.iter().map(|e| self.linear(&format!("{prefix}.v"), e)).collect();
        let mut cat = vec![0.0; d];
        for h in 0..heads {
            let r = h * hd..(h + 1) * hd;
            let logits: Vec<f64> = ks
                .iter()
                .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            for (i, v) in vs.iter().enumerate() {
                for j in r.clone() {
                    cat[j] += ex[i] / z * v[j];
                }
            }
        }
        self.linear(&format!("{prefix}.o"), &cat)
    }

    /// One block over directed edges `(src, dst)`.
    pub fn block(
        &self,
        prefix: &str,
        nodes: &[Vec<f64>],
        edges: &[Vec<f64>],
        adj: &[(usize, usize)],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let new_edges: Vec<Vec<f64>> = edges
            .iter()
            .zip(adj)
            .map(|(e, &(s, d))| {
                let x: Vec<f64> = e.iter().chain(&nodes[s]).chain(&nodes[d]).copied().collect();
                let u = self.mlp(&format!("{prefix}.edge_mlp"), &x);
                e.iter().zip(u).map(|(a, b)| a + b).collect()
            })
            .collect();
        let new_nodes = nodes
            .iter()
            .enumerate()
            .map(|(n, h)| {
                let items: Vec<Vec<f64>> = adj
                    .iter()
                    .zip(&new_edges)
                    .filter(|((_, d), _)| *d == n)
                    .map(|(_, e)| e.clone())
                    .collect();
                let a = self.attention(&format!("{prefix}.attn"), h, &items);
                let x: Vec<f64> = a.iter().chain(h).copied().collect();
                let u = self.mlp(&format!("{prefix}.node_mlp"), &x);
                h.iter().zip(u).map(|(a, b)| a + b).collect()
            })
            .collect();
        (new_nodes, new_edges)
    }

    /// Returns `(class scores, edge scores [prune, merge, group, rel])`.
    pub fn stage(
        &self,
        s: usize,
        nodes: &[Vec<f64>],
        edges: &[(usize, usize)],
        edge_feats: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<[f64; 4]>) {
        let mut adj = Vec::new();
        let mut ef = Vec::new();
        for (&(a, b), f) in edges.iter().zip(edge_feats) {
            adj.push((a, b));
            ef.push(f.clone());
            adj.push((b, a));
            ef.push(f.clone());
        }
        let mut n = nodes.to_vec();
        for b in 0..self.cfg.stage_depths[s] {
            let (nn, ee) = self.block(&format!("stage{s}.block{b}"), &n, &ef, &adj);
            n = nn;
            ef = ee;
        }
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let scores = (0..edges.len())
            .map(|k| {
                let a = self.linear(&format!("stage{s}.edge_head"), &ef[2 * k]);
                let b = self.linear(&format!("stage{s}.edge_head"), &ef[2 * k + 1]);
                [0, 1, 2, 3].map(|i| 0.5 * (sig(a[i]) + sig(b[i])))
            })
            .collect();
        let classes = n
            .iter()
            .map(|h| {
                let l = self.linear(&format!("stage{s}.node_head"), h);
                let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        (classes, scores)
    }
}

/// Weights with every tensor (norm affine parameters included) randomized.
pub fn random_weights(cfg: &ModelConfig, seed: u64, scale: f32) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::new();
    for (name, shape) in cfg.manifest() {
        let n: usize = shape.iter().product();
        let fan_in = if shape.len() == 2 { shape[1] } else { 1 };
        let bound = scale * (3.0 / fan_in as f32).sqrt();
        let data: Vec<f32> = (0..n)
            .map(|_| {
                if name.ends_with("gamma") {
                    1.0 + rng.gen_range(-0.2f32..0.2)
                } else if name.ends_with("beta") || name.ends_with("bias") {
                    rng.gen_range(-0.1f32..0.1)
                } else {
                    rng.gen_range(-bound..bound)
                }
            })
            .collect();
        w.insert(Tensor::new(name, shape, data).unwrap());
    }
    w
}

pub fn random_feats(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-12)` over paired values.
pub fn max_rel<'a, I: IntoIterator<Item = (&'a f64, &'a f64)>>(pairs: I) -> f64 {
    pairs
        .into_iter()
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn small_config(class_count: usize) -> ModelConfig {
    ModelConfig {
        class_count,
        hidden: 32,
        heads: 4,
        stage_depths: vec![2, 2, 1],
        norm_groups: 8,
        visual_dim: 16,
        proposal_hidden: 16,
    }
}
