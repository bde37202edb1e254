//! Dense building blocks, written directly over slices.

use super::real::{lex_order, softmax, Real};
use super::{GnnError, ModelWeights};

/// `y = W x + b` with `W` stored `[out, in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self, GnnError> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(GnnError::Shape(format!(
                "linear {out_dim}x{in_dim}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Loads `<name>.weight` / `<name>.bias`.
    pub fn from_weights(w: &ModelWeights, name: &str, out_dim: usize, in_dim: usize) -> Result<Self, GnnError> {
        let weight = w.expect(&format!("{name}.weight"), &[out_dim, in_dim])?;
        let bias = w.expect(&format!("{name}.bias"), &[out_dim])?;
        Self::new(out_dim, in_dim, convert(&weight.data), convert(&bias.data))
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, GnnError> {
        if x.len() != self.in_dim {
            return Err(GnnError::Shape(format!(
                "linear expects input of {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok(self
            .weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect())
    }
}

pub(crate) fn convert<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f32(x)).collect()
}

/// Group normalization over a single feature vector with learned affine.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub groups: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(groups: usize, gamma: Vec<T>, beta: Vec<T>) -> Result<Self, GnnError> {
        if groups == 0 || !gamma.len().is_multiple_of(groups) || gamma.len() != beta.len() {
            return Err(GnnError::Shape(format!(
                "group norm: {groups} groups over {} features",
                gamma.len()
            )));
        }
        Ok(Self {
            groups,
            gamma,
            beta,
            eps: T::from_f64(crate::protocol::GROUP_NORM_EPS),
        })
    }

    pub fn from_weights(w: &ModelWeights, name: &str, dim: usize, groups: usize) -> Result<Self, GnnError> {
        let g = w.expect(&format!("{name}.gamma"), &[dim])?;
        let b = w.expect(&format!("{name}.beta"), &[dim])?;
        Self::new(groups, convert(&g.data), convert(&b.data))
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, GnnError> {
        group_norm(x, self.groups, &self.gamma, &self.beta, self.eps)
    }
}

/// Per group: subtract the mean, divide by `sqrt(var + eps)`, then apply
/// `gamma * y + beta` elementwise.
pub fn group_norm<T: Real>(x: &[T], groups: usize, gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>, GnnError> {
    if groups == 0 || !x.len().is_multiple_of(groups) {
        return Err(GnnError::Shape(format!(
            "{groups} groups do not divide a vector of {}",
            x.len()
        )));
    }
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(GnnError::Shape("group norm affine size mismatch".into()));
    }
    let size = x.len() / groups;
    let n = T::from_f64(size as f64);
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks_exact(size) {
        let mean = chunk.iter().copied().sum::<T>() / n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        out.extend(chunk.iter().map(|&v| (v - mean) * inv));
    }
    for ((o, &g), &b) in out.iter_mut().zip(gamma).zip(beta) {
        *o = g * *o + b;
    }
    Ok(out)
}

/// Two-layer network: `W2 relu(norm(W1 x + b1)) + b2`. Dropout is identity at
/// inference. The proposal scorer runs without the norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2<T> {
    pub fc1: Linear<T>,
    pub norm: Option<GroupNorm<T>>,
    pub fc2: Linear<T>,
}

impl<T: Real> Mlp2<T> {
    pub fn from_weights(
        w: &ModelWeights,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        norm_groups: Option<usize>,
    ) -> Result<Self, GnnError> {
        Ok(Self {
            fc1: Linear::from_weights(w, &format!("{name}.fc1"), hidden, in_dim)?,
            norm: match norm_groups {
                Some(g) => Some(GroupNorm::from_weights(w, &format!("{name}.norm"), hidden, g)?),
                None => None,
            },
            fc2: Linear::from_weights(w, &format!("{name}.fc2"), out_dim, hidden)?,
        })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, GnnError> {
        let mut h = self.fc1.forward(x)?;
        if let Some(norm) = &self.norm {
            h = norm.forward(&h)?;
        }
        h.iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.fc2.forward(&h)
    }
}

/// Multi-head attention that aggregates a node's incoming edge features,
/// with the node's feature as the query.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAttention<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Real> EdgeAttention<T> {
    pub fn from_weights(w: &ModelWeights, name: &str, dim: usize, heads: usize) -> Result<Self, GnnError> {
        let lin = |p: &str| Linear::from_weights(w, &format!("{name}.{p}"), dim, dim);
        Ok(Self {
            heads,
            q: lin("q")?,
            k: lin("k")?,
            v: lin("v")?,
            o: lin("o")?,
        })
    }

    /// Aggregated vector (zero for an empty item set) and the per-head
    /// attention weights over `items`.
    pub fn aggregate_with_weights(&self, query: &[T], items: &[&[T]]) -> Result<(Vec<T>, Vec<Vec<T>>), GnnError> {
        let dim = self.o.out_dim;
        if items.is_empty() {
            if query.len() != self.q.in_dim {
                return Err(GnnError::Shape("attention query size mismatch".into()));
            }
            return Ok((vec![T::zero(); dim], vec![Vec::new(); self.heads]));
        }
        let q = self.q.forward(query)?;
        let keys = items.iter().map(|e| self.k.forward(e)).collect::<Result<Vec<_>, _>>()?;
        let vals = items.iter().map(|e| self.v.forward(e)).collect::<Result<Vec<_>, _>>()?;
        let hd = q.len() / self.heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut concat = vec![T::zero(); q.len()];
        let mut all_weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let r = h * hd..(h + 1) * hd;
            let logits: Vec<T> = keys
                .iter()
                .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(&a, &b)| a * b).sum::<T>() * scale)
                .collect();
            let weights = softmax(&logits);
            for (wgt, v) in weights.iter().zip(&vals) {
                for (c, &x) in concat[r.clone()].iter_mut().zip(&v[r.clone()]) {
                    *c = *c + *wgt * x;
                }
            }
            all_weights.push(weights);
        }
        Ok((self.o.forward(&concat)?, all_weights))
    }

    pub fn aggregate(&self, query: &[T], items: &[&[T]]) -> Result<Vec<T>, GnnError> {
        self.aggregate_with_weights(query, items).map(|(v, _)| v)
    }
}

/// Sorts items into a canonical order keyed on their values, so that
/// aggregation results do not depend on how edges were listed.
pub(crate) fn canonical_order<T: Real>(items: &mut [&[T]]) {
    items.sort_by(|a, b| lex_order(a, b));
}
