use crate::geometry::{union_bbox, BBox};

use super::TextLine;

/// Clusters one entity's words into text lines.
///
/// Two words share a row when their vertical overlap is positive and at least
/// half the smaller height; rows are the connected components of that
/// relation. Rows are emitted top to bottom, words within a row left to right.
/// Line ids start at `first_id`; class scores are one-hot on `class`.
pub fn group_words_into_lines(
    words: &[(String, BBox)],
    class: usize,
    class_count: usize,
    first_id: usize,
) -> Vec<TextLine> {
    let n = words.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if same_row(&words[i].1, &words[j].1) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut root_row = std::collections::HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let idx = *root_row.entry(r).or_insert_with(|| {
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[idx].push(i);
    }
    for row in &mut rows {
        row.sort_by(|&a, &b| words[a].1.x1.total_cmp(&words[b].1.x1).then(a.cmp(&b)));
    }
    let row_key = |row: &Vec<usize>| {
        let y = row.iter().map(|&i| words[i].1.y1).fold(f64::INFINITY, f64::min);
        let x = row.iter().map(|&i| words[i].1.x1).fold(f64::INFINITY, f64::min);
        (y, x)
    };
    rows.sort_by(|a, b| {
        let (ka, kb) = (row_key(a), row_key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });

    let mut scores = vec![0.0; class_count];
    scores[class] = 1.0;
    rows.iter()
        .enumerate()
        .map(|(k, row)| {
            let boxes: Vec<BBox> = row.iter().map(|&i| words[i].1).collect();
            let text = row
                .iter()
                .map(|&i| words[i].0.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            TextLine {
                id: first_id + k,
                bbox: union_bbox(&boxes).expect("rows are nonempty"),
                confidence: 1.0,
                class_scores: scores.clone(),
                text: Some(text),
            }
        })
        .collect()
}

fn same_row(a: &BBox, b: &BBox) -> bool {
    let overlap = a.y2.min(b.y2) - a.y1.max(b.y1);
    overlap > 0.0 && overlap >= 0.5 * a.height().min(b.height())
}
