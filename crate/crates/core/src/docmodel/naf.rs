use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{image_size_or_extent, read_file, ClassSet, DocError, Document, Entity, TextLine};
use crate::geometry::BBox;
use crate::protocol::NAF_SCALE;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NafFile {
    #[serde(default, rename = "textBBs")]
    text_bbs: Vec<NafBox>,
    #[serde(default, rename = "fieldBBs")]
    field_bbs: Vec<NafBox>,
    #[serde(default)]
    pairs: Vec<Vec<String>>,
    #[serde(default)]
    same_pairs: Vec<Vec<String>>,
    #[serde(default)]
    image_filename: Option<String>,
}

#[derive(Deserialize)]
struct NafBox {
    id: String,
    #[serde(default)]
    poly_points: Vec<[f64; 2]>,
    #[serde(default, rename = "type")]
    kind: String,
}

/// Table structure annotations (rows, columns, whole tables) are not text
/// lines and are dropped at load.
fn is_table(kind: &str) -> bool {
    let k = kind.to_ascii_lowercase();
    k.ends_with("row") || k.ends_with("col") || k.contains("table")
}

/// Loads one NAF annotation file, scaled by the NAF resize factor.
///
/// Preprinted (`textBBs`) and input (`fieldBBs`) boxes each become a
/// single-line entity. Both `pairs` and `samePairs` become relationships.
pub fn load_naf(path: &Path) -> Result<Document, DocError> {
    let text = read_file(path)?;
    let file: NafFile = serde_json::from_str(&text).map_err(|source| DocError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let classes = ClassSet::naf();
    let mut doc = Document::empty(stem(path), 1.0, 1.0, classes.clone());
    let mut entity_of: HashMap<String, usize> = HashMap::new();
    let mut dropped: BTreeSet<String> = BTreeSet::new();

    for (class, boxes) in [(0usize, &file.text_bbs), (1, &file.field_bbs)] {
        for b in boxes {
            if is_table(&b.kind) {
                dropped.insert(b.id.clone());
                continue;
            }
            let pts: Vec<(f64, f64)> = b.poly_points.iter().map(|p| (p[0], p[1])).collect();
            let bbox = BBox::enclosing(&pts)
                .map_err(|_| DocError::Malformed {
                    path: path.to_path_buf(),
                    message: format!("box {:?} has no valid polygon", b.id),
                })?
                .scaled(NAF_SCALE);
            let id = doc.gt_lines.len();
            if entity_of.insert(b.id.clone(), doc.gt_entities.len()).is_some() {
                return Err(DocError::Malformed {
                    path: path.to_path_buf(),
                    message: format!("duplicate box id {:?}", b.id),
                });
            }
            doc.gt_lines.push(TextLine {
                id,
                bbox,
                confidence: 1.0,
                class_scores: classes.one_hot(class),
                text: None,
            });
            doc.gt_entities.push(Entity { line_ids: vec![id], class });
        }
    }

    for pair in file.pairs.iter().chain(&file.same_pairs) {
        let [a, b] = pair.as_slice() else {
            return Err(DocError::Malformed {
                path: path.to_path_buf(),
                message: format!("pair {pair:?} does not have two ids"),
            });
        };
        let mut ends = [0usize; 2];
        let mut skip = false;
        for (slot, id) in ends.iter_mut().zip([a, b]) {
            match entity_of.get(id) {
                Some(&e) => *slot = e,
                None if dropped.contains(id) => skip = true,
                None => {
                    return Err(DocError::DanglingPair {
                        path: path.to_path_buf(),
                        id: id.clone(),
                    })
                }
            }
        }
        if skip {
            log::warn!("{}: dropping pair {a:?}-{b:?} that touches a table box", path.display());
            continue;
        }
        if ends[0] != ends[1] {
            doc.gt_relationships.push(ends);
        }
    }
    doc.normalize_relationships();

    let boxes: Vec<BBox> = doc.gt_lines.iter().map(|l| l.bbox).collect();
    let mut candidates = Vec::new();
    if let (Some(name), Some(dir)) = (&file.image_filename, path.parent()) {
        candidates.push(dir.join(name));
    }
    if let Some(dir) = path.parent() {
        candidates.push(dir.join(format!("{}.jpg", stem(path))));
    }
    let present = candidates.iter().find(|c| c.is_file()).cloned();
    let (w, h) = match present {
        Some(img) => {
            let (w, h) = image_size_or_extent(&[img], &[]);
            (w * NAF_SCALE, h * NAF_SCALE)
        }
        None => image_size_or_extent(&[], &boxes),
    };
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

/// The published NAF split: `train_valid_test_split.json` at the root maps
/// each split to `{group: [image file, ...]}`; annotations live at
/// `groups/<group>/<image stem>.json`.
#[derive(Debug)]
pub struct NafCorpus {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
}

pub fn load_naf_corpus(root: &Path) -> Result<NafCorpus, DocError> {
    let split_path = root.join("train_valid_test_split.json");
    let text = read_file(&split_path)?;
    let split: HashMap<String, std::collections::BTreeMap<String, Vec<String>>> =
        serde_json::from_str(&text).map_err(|source| DocError::Json {
            path: split_path.clone(),
            source,
        })?;
    let load = |name: &str| -> Result<Vec<Document>, DocError> {
        let Some(groups) = split.get(name) else {
            return Err(DocError::Malformed {
                path: split_path.clone(),
                message: format!("missing split {name:?}"),
            });
        };
        let mut files: Vec<PathBuf> = Vec::new();
        for (group, images) in groups {
            for img in images {
                let stem = Path::new(img).file_stem().map(|s| s.to_string_lossy().into_owned());
                let stem = stem.unwrap_or_else(|| img.clone());
                files.push(root.join("groups").join(group).join(format!("{stem}.json")));
            }
        }
        files.iter().map(|f| load_naf(f)).collect()
    };
    Ok(NafCorpus {
        train: load("train")?,
        valid: load("valid")?,
        test: load("test")?,
    })
}
