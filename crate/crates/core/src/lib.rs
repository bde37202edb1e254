//! Form understanding over a graph of detected text lines.
//!
//! Text lines become graph vertices, a learned pairwise scorer proposes the
//! initial edges, and a sequence of graph-network stages predicts edits that
//! merge oversegmented lines, group lines into entities and prune edges. The
//! final graph holds the predicted entities and their relationships.
//!
//! Module map:
//! - [`geometry`]: axis-aligned boxes, IOU variants, line of sight
//! - [`docmodel`]: documents, annotations, FUNSD/NAF loaders, synthetic forms
//! - [`proposal`]: pairwise features, proposal scoring, edge selection
//! - [`features`]: context windows, spatial features, visual providers
//! - [`gnn`]: weights container and the graph-network forward pass
//! - [`graphedit`]: the editable form graph and its merge/group/prune edits
//! - [`supervision`]: ground-truth alignment, labels, losses, proposal training
//! - [`metrics`]: entity/relationship P/R/F1 and Hit@1
//! - [`pipeline`]: end-to-end inference
//!
//! Data-parallel loops go through [`exec`]; building without the default
//! `parallel` feature runs everything sequentially.

pub mod docmodel;
pub mod exec;
pub mod features;
pub mod geometry;
pub mod gnn;
pub mod graphedit;
pub mod metrics;
pub mod pipeline;
pub mod proposal;
pub mod protocol;
pub mod supervision;

pub use docmodel::{ClassSet, Document, Entity, TextLine};
pub use geometry::BBox;
pub use gnn::{ModelConfig, ModelWeights};
pub use graphedit::FormGraph;
