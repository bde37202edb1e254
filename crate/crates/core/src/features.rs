//! Initial node and edge features.
//!
//! Visual features come from a [`VisualFeatureProvider`], which receives a
//! context window, a pooling grid and mask channels given as box sets. The
//! crate ships [`StubProvider`], a deterministic stand-in, and
//! [`ExternalProvider`], which talks JSON lines to a subprocess. Spatial
//! features are appended and a linear transition maps the result into the
//! graph's feature space.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::docmodel::TextLine;
use crate::exec::Execution;
use crate::geometry::{union_bbox, BBox};
use crate::gnn::{GnnError, Linear};
use crate::graphedit::FormGraph;
use crate::protocol::{CONTEXT_PADDING_PX, EDGE_GRID, NODE_GRID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cannot build a context window from an empty line set")]
    EmptyLines,
    #[error("context window {0:?} has no area inside the image")]
    EmptyWindow(BBox),
    #[error("visual feature provider failed: {0}")]
    Provider(String),
    #[error("provider returned {got} values, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// One request to a visual feature provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub window: BBox,
    pub grid: (usize, usize),
    /// Nodes: `[all boxes, this node's boxes]`. Edges: `[all boxes, A's
    /// boxes, B's boxes]`.
    pub mask_channels: Vec<Vec<BBox>>,
}

/// Maps a context request to a fixed-width visual feature vector.
/// Implementations must be deterministic and return finite values.
pub trait VisualFeatureProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, request: &ProviderRequest) -> Result<Vec<f64>, FeatureError>;
}

/// Hash-seeded unit-normal vectors. Coordinates are rounded to 0.1 px before
/// hashing and each mask channel is hashed as a sorted multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubProvider {
    pub dim: usize,
}

impl StubProvider {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::new(crate::protocol::VISUAL_FEATURE_DIM)
    }
}

fn decipixels(b: &BBox) -> [i64; 4] {
    [b.x1, b.y1, b.x2, b.y2].map(|v| (v * 10.0).round() as i64)
}

impl VisualFeatureProvider for StubProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, request: &ProviderRequest) -> Result<Vec<f64>, FeatureError> {
        let mut h = Sha256::new();
        for v in decipixels(&request.window) {
            h.update(v.to_le_bytes());
        }
        h.update((request.grid.0 as u64).to_le_bytes());
        h.update((request.grid.1 as u64).to_le_bytes());
        h.update((request.mask_channels.len() as u64).to_le_bytes());
        for channel in &request.mask_channels {
            let mut boxes: Vec<[i64; 4]> = channel.iter().map(decipixels).collect();
            boxes.sort_unstable();
            h.update((boxes.len() as u64).to_le_bytes());
            for b in boxes {
                for v in b {
                    h.update(v.to_le_bytes());
                }
            }
        }
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok((0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// A provider backed by a long-running subprocess. Each request is written as
/// one JSON line on its stdin; the process answers with one JSON array of
/// numbers per line. Calls are serialized.
pub struct ExternalProvider {
    dim: usize,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl ExternalProvider {
    pub fn spawn(program: &str, args: &[String], dim: usize) -> Result<Self, FeatureError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| FeatureError::Provider(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| FeatureError::Provider("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| FeatureError::Provider("no stdout".into()))?;
        Ok(Self {
            dim,
            io: Mutex::new((child, stdin, BufReader::new(stdout))),
        })
    }
}

impl VisualFeatureProvider for ExternalProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, request: &ProviderRequest) -> Result<Vec<f64>, FeatureError> {
        let perr = |e: &dyn std::fmt::Display| FeatureError::Provider(e.to_string());
        let mut guard = self.io.lock().map_err(|e| perr(&e))?;
        let (_, stdin, stdout) = &mut *guard;
        let line = serde_json::to_string(request).map_err(|e| perr(&e))?;
        writeln!(stdin, "{line}").map_err(|e| perr(&e))?;
        stdin.flush().map_err(|e| perr(&e))?;
        let mut reply = String::new();
        if stdout.read_line(&mut reply).map_err(|e| perr(&e))? == 0 {
            return Err(FeatureError::Provider("provider closed its output".into()));
        }
        let v: Vec<f64> = serde_json::from_str(reply.trim()).map_err(|e| perr(&e))?;
        if v.len() != self.dim {
            return Err(FeatureError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FeatureError::Provider("non-finite feature value".into()));
        }
        Ok(v)
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.io.lock() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

fn window(boxes: &[BBox], image_width: f64, image_height: f64) -> Result<BBox, FeatureError> {
    let u = union_bbox(boxes).map_err(|_| FeatureError::EmptyLines)?;
    let w = u.padded(CONTEXT_PADDING_PX).clamped(image_width, image_height);
    if w.area() > 0.0 {
        Ok(w)
    } else {
        Err(FeatureError::EmptyWindow(w))
    }
}

pub fn node_context(
    entity: &[BBox],
    all: &[BBox],
    image_width: f64,
    image_height: f64,
) -> Result<ProviderRequest, FeatureError> {
    Ok(ProviderRequest {
        window: window(entity, image_width, image_height)?,
        grid: NODE_GRID,
        mask_channels: vec![all.to_vec(), entity.to_vec()],
    })
}

pub fn edge_context(
    a: &[BBox],
    b: &[BBox],
    all: &[BBox],
    image_width: f64,
    image_height: f64,
) -> Result<ProviderRequest, FeatureError> {
    if a.is_empty() || b.is_empty() {
        return Err(FeatureError::EmptyLines);
    }
    let both: Vec<BBox> = a.iter().chain(b).copied().collect();
    Ok(ProviderRequest {
        window: window(&both, image_width, image_height)?,
        grid: EDGE_GRID,
        mask_channels: vec![all.to_vec(), a.to_vec(), b.to_vec()],
    })
}

struct Summary {
    bbox: BBox,
    confidence: f64,
    classes: Vec<f64>,
}

fn summarize(lines: &[&TextLine], class_count: usize) -> Result<Summary, FeatureError> {
    let boxes: Vec<BBox> = lines.iter().map(|l| l.bbox).collect();
    let bbox = union_bbox(&boxes).map_err(|_| FeatureError::EmptyLines)?;
    let n = lines.len() as f64;
    let mut classes = vec![0.0; class_count];
    for l in lines {
        for (c, v) in classes.iter_mut().zip(&l.class_scores) {
            *c += v;
        }
    }
    classes.iter_mut().for_each(|c| *c /= n);
    Ok(Summary {
        bbox,
        confidence: lines.iter().map(|l| l.confidence).sum::<f64>() / n,
        classes,
    })
}

/// `[confidence, height / H, width / W, class scores]` for an entity whose
/// extent is the union of its lines. Confidence and class scores are means
/// over the lines.
pub fn node_spatial(lines: &[&TextLine], image_width: f64, image_height: f64, class_count: usize) -> Result<Vec<f64>, FeatureError> {
    let s = summarize(lines, class_count)?;
    let mut f = vec![s.confidence, s.bbox.height() / image_height, s.bbox.width() / image_width];
    f.extend(s.classes);
    Ok(f)
}

/// `[h_a, h_b, w_a, w_b, classes_a, classes_b, 4 corner distances]`.
pub fn edge_spatial(
    a: &[&TextLine],
    b: &[&TextLine],
    image_width: f64,
    image_height: f64,
    class_count: usize,
) -> Result<Vec<f64>, FeatureError> {
    let sa = summarize(a, class_count)?;
    let sb = summarize(b, class_count)?;
    let mut f = vec![
        sa.bbox.height() / image_height,
        sb.bbox.height() / image_height,
        sa.bbox.width() / image_width,
        sb.bbox.width() / image_width,
    ];
    f.extend(&sa.classes);
    f.extend(&sb.classes);
    for (p, q) in sa.bbox.corners().iter().zip(sb.bbox.corners()) {
        f.push(((p.x - q.x) / image_width).hypot((p.y - q.y) / image_height));
    }
    Ok(f)
}

fn checked(provider: &dyn VisualFeatureProvider, req: &ProviderRequest) -> Result<Vec<f64>, FeatureError> {
    let v = provider.features(req)?;
    if v.len() != provider.dim() {
        return Err(FeatureError::Dimension {
            expected: provider.dim(),
            got: v.len(),
        });
    }
    Ok(v)
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Pre-transition features of node `n`: visual vector then spatial vector.
pub fn node_initial(graph: &FormGraph, n: usize, provider: &dyn VisualFeatureProvider) -> Result<Vec<f32>, FeatureError> {
    let (w, h) = (graph.image_width, graph.image_height);
    let lines = graph.nodes[n].text_lines();
    let boxes: Vec<BBox> = lines.iter().map(|l| l.bbox).collect();
    let req = node_context(&boxes, &graph.all_boxes(), w, h)?;
    let mut f = checked(provider, &req)?;
    f.extend(node_spatial(&lines, w, h, graph.class_count)?);
    Ok(to_f32(f))
}

/// Pre-transition features of edge `e`.
pub fn edge_initial(graph: &FormGraph, e: usize, provider: &dyn VisualFeatureProvider) -> Result<Vec<f32>, FeatureError> {
    let (w, h) = (graph.image_width, graph.image_height);
    let edge = &graph.edges[e];
    let la = graph.nodes[edge.a].text_lines();
    let lb = graph.nodes[edge.b].text_lines();
    let ba: Vec<BBox> = la.iter().map(|l| l.bbox).collect();
    let bb: Vec<BBox> = lb.iter().map(|l| l.bbox).collect();
    let req = edge_context(&ba, &bb, &graph.all_boxes(), w, h)?;
    let mut f = checked(provider, &req)?;
    f.extend(edge_spatial(&la, &lb, w, h, graph.class_count)?);
    Ok(to_f32(f))
}

/// Fills the cached initial features of every node and edge that is modified
/// or has none yet. Returns how many provider calls were made.
pub fn refresh_initial_features(
    graph: &mut FormGraph,
    provider: &dyn VisualFeatureProvider,
    exec: Execution,
) -> Result<usize, FeatureError> {
    let g: &FormGraph = graph;
    let stale_nodes: Vec<usize> = (0..g.nodes.len())
        .filter(|&n| g.nodes[n].modified || g.nodes[n].init.is_none())
        .collect();
    let stale_edges: Vec<usize> = (0..g.edges.len())
        .filter(|&e| g.edges[e].modified || g.edges[e].init.is_none())
        .collect();
    let nf = exec.try_map(&stale_nodes, |&n| node_initial(g, n, provider))?;
    let ef = exec.try_map(&stale_edges, |&e| edge_initial(g, e, provider))?;
    let calls = nf.len() + ef.len();
    for (n, f) in stale_nodes.into_iter().zip(nf) {
        graph.nodes[n].init = Some(f);
    }
    for (e, f) in stale_edges.into_iter().zip(ef) {
        graph.edges[e].init = Some(f);
    }
    Ok(calls)
}

/// Computes initial features and maps them through the initial transitions.
pub fn init_graph_features(
    graph: &mut FormGraph,
    provider: &dyn VisualFeatureProvider,
    node_transition: &Linear<f32>,
    edge_transition: &Linear<f32>,
    exec: Execution,
) -> Result<usize, FeatureError> {
    let calls = refresh_initial_features(graph, provider, exec)?;
    let g: &FormGraph = graph;
    let nf = exec.try_map(&g.nodes, |n| node_transition.forward(n.init.as_deref().unwrap_or(&[])))?;
    let ef = exec.try_map(&g.edges, |e| edge_transition.forward(e.init.as_deref().unwrap_or(&[])))?;
    graph.set_features(nf, ef);
    graph.clear_modified();
    Ok(calls)
}

/// Feature reintroduction between stages: refreshes initial features of
/// modified elements, then `feat = transition([feat; initial])`.
pub fn reintroduce_features(
    graph: &mut FormGraph,
    provider: &dyn VisualFeatureProvider,
    node_transition: &Linear<f32>,
    edge_transition: &Linear<f32>,
    exec: Execution,
) -> Result<usize, FeatureError> {
    let calls = refresh_initial_features(graph, provider, exec)?;
    let cat = |a: &[f32], b: Option<&Vec<f32>>| -> Vec<f32> {
        a.iter().chain(b.map(|v| v.as_slice()).unwrap_or(&[])).copied().collect()
    };
    let g: &FormGraph = graph;
    let nf = exec.try_map(&g.nodes, |n| node_transition.forward(&cat(&n.feat, n.init.as_ref())))?;
    let ef = exec.try_map(&g.edges, |e| edge_transition.forward(&cat(&e.feat, e.init.as_ref())))?;
    graph.set_features(nf, ef);
    graph.clear_modified();
    Ok(calls)
}
