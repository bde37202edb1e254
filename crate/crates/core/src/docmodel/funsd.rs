use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{group_words_into_lines, image_size_or_extent, read_file, ClassSet, DocError, Document, Entity};
use crate::geometry::BBox;

#[derive(Deserialize)]
struct FunsdFile {
    form: Vec<FunsdEntity>,
}

#[derive(Deserialize)]
struct FunsdEntity {
    id: usize,
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default)]
    text: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
    #[serde(default)]
    linking: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
struct FunsdWord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default)]
    text: String,
}

fn to_box(c: [f64; 4]) -> Result<BBox, DocError> {
    Ok(BBox::from_corners(c[0], c[1], c[2], c[3])?)
}

/// Loads one FUNSD annotation file.
///
/// Words of each entity are grouped into text lines; the resulting GT lines
/// also serve as the document's input lines. Image dimensions come from
/// `../images/<stem>.png` when present, else from the annotation extent.
pub fn load_funsd(path: &Path) -> Result<Document, DocError> {
    let text = read_file(path)?;
    let file: FunsdFile = serde_json::from_str(&text).map_err(|source| DocError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let classes = ClassSet::funsd();
    let index_of_id: HashMap<usize, usize> =
        file.form.iter().enumerate().map(|(i, e)| (e.id, i)).collect();

    let mut doc = Document::empty(stem(path), 1.0, 1.0, classes.clone());
    for ent in &file.form {
        let class = classes.index_of(&ent.label).ok_or_else(|| DocError::UnknownLabel {
            path: path.to_path_buf(),
            label: ent.label.clone(),
        })?;
        let mut words = Vec::with_capacity(ent.words.len());
        for w in &ent.words {
            words.push((w.text.clone(), to_box(w.bbox)?));
        }
        if words.is_empty() {
            // A handful of annotations carry a box but no words.
            words.push((ent.text.clone(), to_box(ent.bbox)?));
        }
        let lines = group_words_into_lines(&words, class, classes.len(), doc.gt_lines.len());
        doc.gt_entities.push(Entity {
            line_ids: lines.iter().map(|l| l.id).collect(),
            class,
        });
        doc.gt_lines.extend(lines);
    }

    let mut directed = BTreeSet::new();
    for ent in &file.form {
        for &[from, to] in &ent.linking {
            let resolve = |id: usize| {
                index_of_id.get(&id).copied().ok_or(DocError::LinkOutOfRange {
                    path: path.to_path_buf(),
                    id,
                })
            };
            let (a, b) = (resolve(from)?, resolve(to)?);
            if a == b {
                log::warn!("{}: ignoring self link on entity {from}", path.display());
                continue;
            }
            directed.insert([a, b]);
        }
    }
    doc.gt_parent_links = directed.iter().copied().collect();
    doc.gt_relationships = directed.into_iter().collect();
    doc.normalize_relationships();

    let boxes: Vec<BBox> = doc.gt_lines.iter().map(|l| l.bbox).collect();
    let (w, h) = image_size_or_extent(&image_candidates(path), &boxes);
    doc.image_width = w;
    doc.image_height = h;
    doc.lines = doc.gt_lines.clone();
    doc.validate()?;
    Ok(doc)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn image_candidates(path: &Path) -> Vec<PathBuf> {
    let stem = stem(path);
    let Some(dir) = path.parent() else {
        return Vec::new();
    };
    let images = dir.parent().map(|p| p.join("images")).unwrap_or_else(|| dir.join("images"));
    ["png", "jpg"]
        .iter()
        .map(|ext| images.join(format!("{stem}.{ext}")))
        .collect()
}

/// The published FUNSD split as distributed: `training_data/annotations` and
/// `testing_data/annotations` under one root.
#[derive(Debug)]
pub struct FunsdCorpus {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
}

impl FunsdCorpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_funsd_corpus(root: &Path) -> Result<FunsdCorpus, DocError> {
    let load_dir = |sub: &str| -> Result<Vec<Document>, DocError> {
        let dir = root.join(sub).join("annotations");
        let mut files = json_files(&dir)?;
        files.sort();
        files.iter().map(|f| load_funsd(f)).collect()
    };
    Ok(FunsdCorpus {
        train: load_dir("training_data")?,
        test: load_dir("testing_data")?,
    })
}

pub(crate) fn json_files(dir: &Path) -> Result<Vec<PathBuf>, DocError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DocError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|source| DocError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "json") {
            out.push(p);
        }
    }
    Ok(out)
}
