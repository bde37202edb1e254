//! Canonical document and annotation model.
//!
//! A [`Document`] carries the input text lines (detections, or GT lines when
//! running with perfect detection) together with the ground-truth lines,
//! entities and relationships used for supervision and evaluation.

mod funsd;
mod lines;
mod naf;
mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError};

pub use funsd::{load_funsd, load_funsd_corpus, FunsdCorpus};
pub use lines::group_words_into_lines;
pub use naf::{load_naf, load_naf_corpus, NafCorpus};
pub use synth::{synth_corpus, synth_form, SynthParams};

#[derive(Debug, Error)]
pub enum DocError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation file {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unknown label {label:?}")]
    UnknownLabel { path: PathBuf, label: String },
    #[error("{path}: linking refers to entity {id}, which does not exist")]
    LinkOutOfRange { path: PathBuf, id: usize },
    #[error("{path}: pair refers to unknown box id {id:?}")]
    DanglingPair { path: PathBuf, id: String },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid synthetic-form parameters: {0}")]
    InvalidParams(String),
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ordered, unique list of entity class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassSet {
    labels: Vec<String>,
}

impl TryFrom<Vec<String>> for ClassSet {
    type Error = DocError;
    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        ClassSet::new(labels)
    }
}

impl From<ClassSet> for Vec<String> {
    fn from(c: ClassSet) -> Self {
        c.labels
    }
}

impl ClassSet {
    pub fn new(labels: Vec<String>) -> Result<Self, DocError> {
        if labels.is_empty() {
            return Err(DocError::Invalid("class set is empty".into()));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(DocError::Invalid("class set has duplicate labels".into()));
        }
        Ok(Self { labels })
    }

    /// header, question, answer, other
    pub fn funsd() -> Self {
        Self {
            labels: ["header", "question", "answer", "other"].map(String::from).to_vec(),
        }
    }

    /// preprinted, input
    pub fn naf() -> Self {
        Self {
            labels: ["preprinted", "input"].map(String::from).to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[index] = 1.0;
        v
    }
}

/// A detected or annotated text line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub id: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub class_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// A text entity: one or more GT lines in reading order, with a class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub line_ids: Vec<usize>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default)]
    pub name: String,
    pub image_width: f64,
    pub image_height: f64,
    pub class_set: ClassSet,
    /// Input lines: detections, or a copy of `gt_lines` for perfect detection.
    pub lines: Vec<TextLine>,
    pub gt_lines: Vec<TextLine>,
    pub gt_entities: Vec<Entity>,
    /// Undirected entity pairs, stored as `[i, j]` with `i < j`, sorted.
    pub gt_relationships: Vec<[usize; 2]>,
    /// Directed `[parent, child]` links where the source annotation has them.
    #[serde(default)]
    pub gt_parent_links: Vec<[usize; 2]>,
}

impl Document {
    pub fn empty(name: impl Into<String>, width: f64, height: f64, class_set: ClassSet) -> Self {
        Self {
            name: name.into(),
            image_width: width,
            image_height: height,
            class_set,
            lines: Vec::new(),
            gt_lines: Vec::new(),
            gt_entities: Vec::new(),
            gt_relationships: Vec::new(),
            gt_parent_links: Vec::new(),
        }
    }

    pub fn gt_line(&self, id: usize) -> Option<&TextLine> {
        self.gt_lines.iter().find(|l| l.id == id)
    }

    /// Map from GT line id to the index of the entity containing it.
    pub fn gt_line_entity(&self) -> std::collections::HashMap<usize, usize> {
        self.gt_entities
            .iter()
            .enumerate()
            .flat_map(|(e, ent)| ent.line_ids.iter().map(move |&l| (l, e)))
            .collect()
    }

    pub fn has_relationship(&self, a: usize, b: usize) -> bool {
        let key = [a.min(b), a.max(b)];
        self.gt_relationships.binary_search(&key).is_ok()
    }

    /// Input lines that pass the detection-confidence filter.
    pub fn confident_lines(&self) -> Vec<TextLine> {
        self.lines
            .iter()
            .filter(|l| l.confidence >= crate::protocol::DETECTION_CONFIDENCE_THRESHOLD)
            .cloned()
            .collect()
    }

    /// Sorts and deduplicates the relationship list into canonical form.
    pub fn normalize_relationships(&mut self) {
        let mut rels: Vec<[usize; 2]> = self
            .gt_relationships
            .iter()
            .map(|&[a, b]| [a.min(b), a.max(b)])
            .collect();
        rels.sort_unstable();
        rels.dedup();
        self.gt_relationships = rels;
        self.gt_parent_links.sort_unstable();
        self.gt_parent_links.dedup();
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), DocError> {
        let bad = |m: String| Err(DocError::Invalid(m));
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return bad(format!(
                "image dimensions must be positive, got {}x{}",
                self.image_width, self.image_height
            ));
        }
        let c = self.class_set.len();
        for l in self.lines.iter().chain(&self.gt_lines) {
            if !(0.0..=1.0).contains(&l.confidence) {
                return bad(format!("line {} confidence {} outside [0, 1]", l.id, l.confidence));
            }
            if l.class_scores.len() != c {
                return bad(format!("line {} has {} class scores, expected {c}", l.id, l.class_scores.len()));
            }
            let s: f64 = l.class_scores.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return bad(format!("line {} class scores sum to {s}", l.id));
            }
        }
        for (name, set) in [("input", &self.lines), ("gt", &self.gt_lines)] {
            let ids: BTreeSet<usize> = set.iter().map(|l| l.id).collect();
            if ids.len() != set.len() {
                return bad(format!("duplicate {name} line ids"));
            }
        }
        let gt_ids: BTreeSet<usize> = self.gt_lines.iter().map(|l| l.id).collect();
        for (e, ent) in self.gt_entities.iter().enumerate() {
            if ent.line_ids.is_empty() {
                return bad(format!("entity {e} has no lines"));
            }
            let uniq: BTreeSet<&usize> = ent.line_ids.iter().collect();
            if uniq.len() != ent.line_ids.len() {
                return bad(format!("entity {e} repeats a line"));
            }
            if let Some(missing) = ent.line_ids.iter().find(|id| !gt_ids.contains(id)) {
                return bad(format!("entity {e} refers to missing gt line {missing}"));
            }
            if ent.class >= c {
                return bad(format!("entity {e} has class index {} >= {c}", ent.class));
            }
        }
        let n = self.gt_entities.len();
        for &[a, b] in self.gt_relationships.iter().chain(&self.gt_parent_links) {
            if a >= n || b >= n {
                return bad(format!("relationship ({a}, {b}) out of range"));
            }
            if a == b {
                return bad(format!("self relationship on entity {a}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialization is infallible")
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DocError> {
        let text = read_file(path)?;
        let doc: Document = serde_json::from_str(&text).map_err(|source| DocError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        doc.validate()?;
        Ok(doc)
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, DocError> {
    std::fs::read_to_string(path).map_err(|source| DocError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Image size from the file header, if the image exists next to the
/// annotations; otherwise the extent of the annotated boxes.
pub(crate) fn image_size_or_extent(candidates: &[PathBuf], boxes: &[BBox]) -> (f64, f64) {
    for c in candidates {
        if c.is_file() {
            match image::image_dimensions(c) {
                Ok((w, h)) => return (w as f64, h as f64),
                Err(e) => log::warn!("cannot read image header of {}: {e}", c.display()),
            }
        }
    }
    let w = boxes.iter().map(|b| b.x2).fold(1.0f64, f64::max).ceil();
    let h = boxes.iter().map(|b| b.y2).fold(1.0f64, f64::max).ceil();
    (w, h)
}
