//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any attainable criterion fails. The dataset criterion needs the
//! public FUNSD and NAF releases at `FUNSD_ROOT` and `NAF_ROOT`; when they are
//! absent it is reported as a blocked failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use formgraph::docmodel::{
    load_funsd_corpus, load_naf_corpus, synth_corpus, synth_form, ClassSet, Document, Entity, SynthParams, TextLine,
};
use formgraph::exec::Execution;
use formgraph::geometry::{iou, BBox};
use formgraph::gnn::grad::{finite_diff_gradcheck, GradcheckOptions, GradcheckTarget};
use formgraph::gnn::{layers::EdgeAttention, GcnStage, Model, ModelConfig, ModelWeights};
use formgraph::graphedit::{apply_edit_step, EditRecord, FormGraph, GraphEdge, GraphLine, GraphNode, Prediction};
use formgraph::metrics::{score_document, Counts, EvalReport, Averaging};
use formgraph::pipeline::{run_document, OracleScorer, RunOptions};
use formgraph::proposal::{all_pair_features, score_pair_features, select_edges, selection_size};
use formgraph::protocol::{self, EditThresholds, EDIT_SCHEDULE};
use formgraph::supervision::{
    assign_lines, pair_accuracy, proposal_labels, train_proposal_mlp, training_pairs, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Could not run for lack of external data.
    Blocked(String),
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn outcome(r: Result<String, String>) -> Outcome {
    match r {
        Ok(s) => Outcome::Pass(s),
        Err(s) => Outcome::Fail(s),
    }
}

// ---------------------------------------------------------------------------
// metric oracle suite

fn entity_boxes(doc: &Document, e: usize) -> Vec<BBox> {
    doc.gt_entities[e].line_ids.iter().map(|&l| doc.gt_line(l).unwrap().bbox).collect()
}

/// Brute force: try every permutation for a perfect line matching.
fn brute_match(a: &[BBox], b: &[BBox]) -> bool {
    fn rec(a: &[BBox], b: &[BBox], used: &mut Vec<bool>, i: usize) -> bool {
        if i == a.len() {
            return true;
        }
        for j in 0..b.len() {
            if !used[j] && iou(&a[i], &b[j]) >= 0.5 {
                used[j] = true;
                if rec(a, b, used, i + 1) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    a.len() == b.len() && rec(a, b, &mut vec![false; b.len()], 0)
}

fn brute_entities(p: &Prediction, doc: &Document) -> Counts {
    let mut used = BTreeSet::new();
    for pe in &p.entities {
        let boxes: Vec<BBox> = pe.lines.iter().map(|l| l.bbox).collect();
        for e in 0..doc.gt_entities.len() {
            if !used.contains(&e) && doc.gt_entities[e].class == pe.class && brute_match(&boxes, &entity_boxes(doc, e)) {
                used.insert(e);
                break;
            }
        }
    }
    Counts {
        tp: used.len(),
        fp: p.entities.len() - used.len(),
        fn_: doc.gt_entities.len() - used.len(),
    }
}

fn brute_relationships(p: &Prediction, doc: &Document) -> Counts {
    let covers = |pe: usize, e: usize| {
        let first = doc.gt_line(doc.gt_entities[e].line_ids[0]).unwrap().bbox;
        let ent = &p.entities[pe];
        ent.class == doc.gt_entities[e].class && ent.lines.iter().any(|l| iou(&l.bbox, &first) >= 0.5)
    };
    let mut used = BTreeSet::new();
    for &[a, b] in &p.relationships {
        for (k, &[x, y]) in doc.gt_relationships.iter().enumerate() {
            if !used.contains(&k) && ((covers(a, x) && covers(b, y)) || (covers(a, y) && covers(b, x))) {
                used.insert(k);
                break;
            }
        }
    }
    Counts {
        tp: used.len(),
        fp: p.relationships.len() - used.len(),
        fn_: doc.gt_relationships.len() - used.len(),
    }
}

fn metric_oracle() -> Result<String, String> {
    let docs = synth_corpus(
        7,
        60,
        1..=6,
        1..=3,
        SynthParams {
            overseg_prob: 0.0,
            ..SynthParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for d in &docs {
        scores.push(score_document(&Prediction::from_ground_truth(d), d));
    }
    let r = EvalReport::aggregate(&scores, Averaging::Micro);
    for (name, v) in [
        ("entity P", r.entity.precision),
        ("entity R", r.entity.recall),
        ("entity F1", r.entity.f1),
        ("rel P", r.relationship.precision),
        ("rel R", r.relationship.recall),
        ("rel F1", r.relationship.f1),
    ] {
        check(v == 100.0, format!("{name} = {v} on GT-as-prediction"))?;
    }
    check(r.hit_at_1 == Some(100.0), format!("Hit@1 = {:?}", r.hit_at_1))?;

    // the full pipeline with an oracle scorer must also reach 100
    let noisy = synth_corpus(8, 50, 1..=6, 1..=3, SynthParams::default()).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        gt_entity_scores: true,
        ..RunOptions::default()
    };
    let mut pipe = Vec::new();
    let mut capped = 0;
    for d in &noisy {
        // with perfect scores the selection keeps every positive pair unless
        // positives outnumber the cap, as in tiny fully linked documents
        let lines = d.confident_lines();
        let labels = proposal_labels(&lines, &assign_lines(&lines, &d.gt_lines), d);
        if labels.iter().filter(|l| l.positive()).count() > selection_size(labels.len()) {
            capped += 1;
            continue;
        }
        let out = run_document(d, &OracleScorer::new(d), &opts, Execution::Parallel).map_err(|e| e.to_string())?;
        pipe.push(score_document(&out.prediction, d));
    }
    let pr = EvalReport::aggregate(&pipe, Averaging::Micro);
    check(
        pr.entity.f1 == 100.0 && pr.relationship.f1 == 100.0 && pr.hit_at_1 == Some(100.0),
        format!("oracle pipeline gave {pr:?}"),
    )?;

    // perturbations against brute-force counts
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cases = 0;
    for d in &docs {
        let gt = Prediction::from_ground_truth(d);
        let n = gt.entities.len();
        let mut variants = Vec::new();
        let k = rng.gen_range(0..n);
        let mut wrong = gt.clone();
        wrong.entities[k].class = (wrong.entities[k].class + 1) % d.class_set.len();
        let touching = d.gt_relationships.iter().filter(|r| r.contains(&k)).count();
        variants.push((wrong, (n - 1, 1, 1), (d.gt_relationships.len() - touching, touching, touching)));
        if let Some(m) = (0..n).find(|&e| gt.entities[e].lines.len() > 1) {
            let mut missing = gt.clone();
            missing.entities[m].lines.pop();
            // the first line survives, so relationships still count
            let nr = d.gt_relationships.len();
            variants.push((missing, (n - 1, 1, 1), (nr, 0, 0)));
        }
        let unrelated = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| [a, b]))
            .find(|p| !d.has_relationship(p[0], p[1]));
        if let Some(extra) = unrelated {
            let mut spurious = gt.clone();
            spurious.relationships.push(extra);
            let nr = d.gt_relationships.len();
            variants.push((spurious, (n, 0, 0), (nr, 1, 0)));
        }
        if let Some(&first) = d.gt_relationships.first() {
            let mut dup = gt.clone();
            dup.relationships.push(first);
            let nr = d.gt_relationships.len();
            variants.push((dup, (n, 0, 0), (nr, 1, 0)));
        }
        for (p, ent, rel) in variants {
            let s = score_document(&p, d);
            let be = brute_entities(&p, d);
            let br = brute_relationships(&p, d);
            check(s.entity == be, format!("{}: entity {:?} vs brute force {:?}", d.name, s.entity, be))?;
            check(s.relationship == br, format!("{}: rel {:?} vs brute force {:?}", d.name, s.relationship, br))?;
            check((be.tp, be.fp, be.fn_) == ent, format!("{}: entity {:?}, expected {:?}", d.name, be, ent))?;
            check((br.tp, br.fp, br.fn_) == rel, format!("{}: rel {:?}, expected {:?}", d.name, br, rel))?;
            cases += 1;
        }
    }

    // 4 GT entities, one predicted with the wrong class
    let toy = synth_form(1, SynthParams { rows: 2, cols: 1, multiline_prob: 0.0, overseg_prob: 0.0, jitter: 0.0 })
        .map_err(|e| e.to_string())?;
    let mut p = Prediction::from_ground_truth(&toy);
    p.entities[0].class = 3;
    let s = score_document(&p, &toy);
    let prf = EvalReport::aggregate(&[s], Averaging::Micro).entity;
    check(prf.precision == 75.0 && prf.recall == 75.0, format!("toy wrong class: {prf:?}"))?;

    Ok(format!(
        "{} GT docs at 100/100/100 + Hit@1 100, {} oracle-pipeline docs at 100 ({capped} over the proposal cap skipped), {cases} perturbations match brute force",
        docs.len(),
        noisy.len() - capped
    ))
}

// ---------------------------------------------------------------------------
// GCN numerical suite

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for a in 1..n {
        let b = rng.gen_range(0..a);
        edges.insert((b, a));
    }
    for _ in 0..n {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges.into_iter().collect()
}

fn gcn_suite() -> Result<String, String> {
    let cfg = ModelConfig::standard(4);
    let weights = common::random_weights(&cfg, 11, 1.0);
    let model: Model<f64> = Model::from_weights(&weights, &cfg).map_err(|e| e.to_string())?;
    let stage = &model.stages[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = cfg.hidden;

    // zero-residual identity
    let mut zeroed = weights.clone();
    let names: Vec<String> = zeroed
        .tensors()
        .iter()
        .map(|t| t.name.clone())
        .filter(|n| n.contains(".fc2."))
        .collect();
    for n in names {
        zeroed.get_mut(&n).unwrap().data.iter_mut().for_each(|x| *x = 0.0);
    }
    let zmodel: Model<f64> = Model::from_weights(&zeroed, &cfg).map_err(|e| e.to_string())?;
    let edges = random_graph(&mut rng, 6);
    let nf = common::random_feats(&mut rng, 6, h);
    let ef = common::random_feats(&mut rng, edges.len(), h);
    for s in &zmodel.stages {
        let out = s.forward(&nf, &edges, &ef, Execution::Parallel).map_err(|e| e.to_string())?;
        check(out.node_feats == nf && out.edge_feats == ef, "zeroed second layers changed features")?;
    }

    // permutation equivariance, exact
    let n = 7;
    let edges = random_graph(&mut rng, n);
    let nf = common::random_feats(&mut rng, n, h);
    let ef = common::random_feats(&mut rng, edges.len(), h);
    let base = stage.forward(&nf, &edges, &ef, Execution::Parallel).map_err(|e| e.to_string())?;
    for trial in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut eorder: Vec<usize> = (0..edges.len()).collect();
        eorder.shuffle(&mut rng);
        let mut pn = vec![Vec::new(); n];
        for i in 0..n {
            pn[perm[i]] = nf[i].clone();
        }
        let pe: Vec<(usize, usize)> = eorder
            .iter()
            .map(|&k| {
                let (a, b) = edges[k];
                if rng.gen_bool(0.5) {
                    (perm[a], perm[b])
                } else {
                    (perm[b], perm[a])
                }
            })
            .collect();
        let pf: Vec<Vec<f64>> = eorder.iter().map(|&k| ef[k].clone()).collect();
        let exec = if trial % 2 == 0 { Execution::Sequential } else { Execution::Parallel };
        let out = stage.forward(&pn, &pe, &pf, exec).map_err(|e| e.to_string())?;
        for i in 0..n {
            check(
                out.class_scores[perm[i]] == base.class_scores[i] && out.node_feats[perm[i]] == base.node_feats[i],
                format!("trial {trial}: node {i} differs after relabeling"),
            )?;
        }
        for (slot, &k) in eorder.iter().enumerate() {
            check(
                out.edge_scores[slot] == base.edge_scores[k] && out.edge_feats[slot] == base.edge_feats[k],
                format!("trial {trial}: edge {k} differs after relabeling"),
            )?;
        }
    }

    // attention weights sum to one
    let attn: EdgeAttention<f64> = EdgeAttention::from_weights(&weights, "stage0.block0.attn", h, cfg.heads)
        .map_err(|e| e.to_string())?;
    let mut worst_sum = 0.0f64;
    for k in 1..30 {
        let q = common::random_feats(&mut rng, 1, h).remove(0);
        let items = common::random_feats(&mut rng, k, h);
        let refs: Vec<&[f64]> = items.iter().map(|v| v.as_slice()).collect();
        let (_, w) = attn.aggregate_with_weights(&q, &refs).map_err(|e| e.to_string())?;
        for head in w {
            worst_sum = worst_sum.max((head.iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(worst_sum <= 1e-6, format!("attention weights off by {worst_sum}"))?;

    // dense oracle on 3-node toys, every stage
    let dense = common::Dense { w: &weights, cfg: &cfg };
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let edges = [(0, 1), (1, 2), (0, 2)][..rng.gen_range(2..=3)].to_vec();
        let nf = common::random_feats(&mut rng, 3, h);
        let ef = common::random_feats(&mut rng, edges.len(), h);
        for (s, st) in model.stages.iter().enumerate() {
            let out = st.forward(&nf, &edges, &ef, Execution::Sequential).map_err(|e| e.to_string())?;
            let (cls, sc) = dense.stage(s, &nf, &edges, &ef);
            worst = worst.max(common::max_rel(out.class_scores.iter().flatten().zip(cls.iter().flatten())));
            worst = worst.max(common::max_rel(out.edge_scores.iter().flatten().zip(sc.iter().flatten())));
        }
    }
    check(worst <= 1e-6, format!("dense oracle disagreement {worst:e}"))?;

    // 32-bit mode agrees with 64-bit mode
    let m32: GcnStage<f32> = GcnStage::from_weights(&weights, 0, &cfg).map_err(|e| e.to_string())?;
    let to32 = |v: &[Vec<f64>]| v.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect::<Vec<Vec<f32>>>();
    let o32 = m32.forward(&to32(&nf), &edges, &to32(&ef), Execution::Parallel).map_err(|e| e.to_string())?;
    let mut worst32 = 0.0f64;
    for (a, b) in o32.edge_scores.iter().flatten().zip(base.edge_scores.iter().flatten()) {
        worst32 = worst32.max((*a as f64 - b).abs() / b.abs().max(1e-12));
    }
    check(worst32 <= 1e-4, format!("f32 vs f64 relative error {worst32:e}"))?;

    Ok(format!(
        "identity exact, 20 permutations exact, attention sums within {worst_sum:.1e}, dense oracle {worst:.1e}, f32 {worst32:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// gradient checks

fn gradient_checks() -> Result<String, String> {
    let lin = finite_diff_gradcheck(
        GradcheckTarget::Linear,
        &GradcheckOptions {
            draws: 100,
            ..GradcheckOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    check(lin.max_relative_error < 1e-8, format!("linear: {:e}", lin.max_relative_error))?;
    let mlp = finite_diff_gradcheck(
        GradcheckTarget::ProposalMlp,
        &GradcheckOptions {
            draws: 100,
            seed: 1,
            ..GradcheckOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    check(mlp.max_relative_error < 1e-4, format!("proposal MLP: {:e}", mlp.max_relative_error))?;
    Ok(format!(
        "{} draws x {} coords: proposal MLP + BCE max rel err {:.2e}; linear {:.2e}",
        mlp.draws,
        mlp.coordinates_checked / mlp.draws,
        mlp.max_relative_error,
        lin.max_relative_error
    ))
}

// ---------------------------------------------------------------------------
// edit semantics

fn scenario(rng: &mut ChaCha8Rng) -> FormGraph {
    let n = rng.gen_range(1..=12);
    let total_lines = n + rng.gen_range(0..n + 1);
    let mut ids: Vec<usize> = (0..total_lines).map(|k| k * 3 + rng.gen_range(0..3)).collect();
    ids.shuffle(rng);
    let mut owner: Vec<usize> = (0..n).chain((n..total_lines).map(|_| rng.gen_range(0..n))).collect();
    owner.truncate(total_lines);
    let mut nodes: Vec<GraphNode> = (0..n)
        .map(|_| GraphNode {
            lines: Vec::new(),
            class_scores: vec![0.0; 2],
            feat: Vec::new(),
            init: None,
            modified: false,
        })
        .collect();
    for (id, &o) in ids.iter().zip(&owner) {
        let x = rng.gen_range(0.0..400.0);
        let y = rng.gen_range(0.0..400.0);
        nodes[o].lines.push(GraphLine::from_input(TextLine {
            id: *id,
            bbox: BBox::new(x, y, x + rng.gen_range(1.0..80.0), y + rng.gen_range(1.0..20.0)).unwrap(),
            confidence: rng.gen_range(0.5..1.0),
            class_scores: vec![0.5, 0.5],
            text: None,
        }));
    }
    for node in &mut nodes {
        node.lines.sort_by_key(|l| l.line.id);
        let p = rng.gen_range(0.0..1.0);
        node.class_scores = vec![p, 1.0 - p];
        node.feat = (0..4).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    }
    nodes.sort_by_key(|n| n.key());
    let levels = [0.1, 0.45, 0.55, 0.79, 0.8, 0.85, 0.9, 0.92, 0.95, 0.97, 0.99];
    let mut pairs = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=2 * n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| GraphEdge {
            a,
            b,
            feat: (0..4).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            scores: [0, 1, 2, 3].map(|_| levels[rng.gen_range(0..levels.len())]),
            init: None,
            modified: false,
        })
        .collect();
    FormGraph {
        image_width: 500.0,
        image_height: 500.0,
        class_count: 2,
        nodes,
        edges,
        edit_log: Vec::<EditRecord>::new(),
    }
}

fn shuffled(g: &FormGraph, rng: &mut ChaCha8Rng) -> FormGraph {
    let mut perm: Vec<usize> = (0..g.nodes.len()).collect();
    perm.shuffle(rng);
    let mut out = g.clone();
    for (old, &new) in perm.iter().enumerate() {
        out.nodes[new] = g.nodes[old].clone();
    }
    for e in &mut out.edges {
        let (a, b) = (perm[e.a], perm[e.b]);
        (e.a, e.b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
    }
    out.edges.shuffle(rng);
    out
}

fn components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(x) = stack.pop() {
            comp.insert(x);
            for &(a, b) in edges {
                for (p, q) in [(a, b), (b, a)] {
                    if p == x && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn edit_semantics() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let scenarios = 1500;
    let mut edited = 0;
    for k in 0..scenarios {
        let g = scenario(&mut rng);
        let th = if k % 4 == 3 {
            EditThresholds::new(rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0))
        } else {
            EDIT_SCHEDULE[k % 3]
        };
        let out = apply_edit_step(&g, &th, k % 3);
        if out.edit_log.len() > g.edit_log.len() {
            edited += 1;
        }
        // partition preserved
        let before: BTreeSet<Vec<usize>> = g.line_partition().into_iter().collect();
        let all_before: BTreeSet<usize> = before.iter().flatten().copied().collect();
        let after = out.line_partition();
        let all_after: Vec<usize> = after.iter().flatten().copied().collect();
        check(
            all_after.len() == all_before.len() && all_after.iter().copied().collect::<BTreeSet<_>>() == all_before,
            format!("scenario {k}: line partition not preserved"),
        )?;
        for part in &before {
            check(
                after.iter().any(|a| part.iter().all(|x| a.contains(x))),
                format!("scenario {k}: a node was split"),
            )?;
        }
        check(out.nodes.len() <= g.nodes.len(), format!("scenario {k}: node count grew"))?;
        let mut seen = BTreeSet::new();
        for e in &out.edges {
            check(e.a != e.b, format!("scenario {k}: self edge"))?;
            check(seen.insert((e.a.min(e.b), e.a.max(e.b))), format!("scenario {k}: duplicate edge"))?;
        }
        // idempotence
        check(apply_edit_step(&out, &th, k % 3) == out, format!("scenario {k}: second application changed the graph"))?;
        // order independence
        for _ in 0..2 {
            check(
                apply_edit_step(&shuffled(&g, &mut rng), &th, k % 3) == out,
                format!("scenario {k}: result depends on listing order"),
            )?;
        }
        // merge-only run against a connected-component oracle
        let merge_only = EditThresholds {
            merge: th.merge,
            group: f64::INFINITY,
            prune: f64::INFINITY,
        };
        let m = apply_edit_step(&g, &merge_only, 0);
        let flagged: Vec<(usize, usize)> = g
            .edges
            .iter()
            .filter(|e| e.scores[1] >= th.merge)
            .map(|e| (e.a, e.b))
            .collect();
        let expect: BTreeSet<BTreeSet<usize>> = components(g.nodes.len(), &flagged)
            .into_iter()
            .map(|c| c.iter().flat_map(|&n| g.nodes[n].input_line_ids()).collect())
            .collect();
        let got: BTreeSet<BTreeSet<usize>> = m.line_partition().into_iter().map(|p| p.into_iter().collect()).collect();
        check(got == expect, format!("scenario {k}: merge components differ from oracle"))?;
        check(m.nodes.iter().all(|n| n.lines.len() == 1 || !n.modified), format!("scenario {k}: merge kept several lines"))?;
    }
    Ok(format!("{scenarios} scenarios ({edited} with edits): partition, monotone nodes, no dup/self edges, idempotent, order-independent"))
}

// ---------------------------------------------------------------------------
// desk-scale learning

fn learning() -> Result<String, String> {
    let mut report = Vec::new();
    for seed in [1u64, 2, 3] {
        let t = Instant::now();
        let train = synth_corpus(seed, 200, 2..=6, 1..=3, SynthParams::default()).map_err(|e| e.to_string())?;
        let test = synth_corpus(seed + 1000, 50, 2..=6, 1..=3, SynthParams::default()).map_err(|e| e.to_string())?;
        let tr = training_pairs(&train, Execution::Sequential).map_err(|e| e.to_string())?;
        let te = training_pairs(&test, Execution::Sequential).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let res = train_proposal_mlp(&tr, &cfg).map_err(|e| e.to_string())?;
        let acc = pair_accuracy(&res.mlp, &te).map_err(|e| e.to_string())?;
        let (mut found, mut total) = (0usize, 0usize);
        for d in &test {
            let lines = d.confident_lines();
            let labels = proposal_labels(&lines, &assign_lines(&lines, &d.gt_lines), d);
            let feats = all_pair_features(&lines, d.image_width, d.image_height, d.class_set.len(), Execution::Sequential)
                .map_err(|e| e.to_string())?;
            let cands = score_pair_features(&feats, &res.mlp, Execution::Sequential).map_err(|e| e.to_string())?;
            let kept: BTreeSet<(usize, usize)> = select_edges(&cands).iter().map(|c| (c.i, c.j)).collect();
            for l in labels.iter().filter(|l| l.positive()) {
                total += 1;
                found += kept.contains(&(l.i, l.j)) as usize;
            }
        }
        let recall = found as f64 / total.max(1) as f64;
        let elapsed = t.elapsed();
        check(acc >= 0.95, format!("seed {seed}: held-out accuracy {acc:.4}"))?;
        check(recall >= 0.99, format!("seed {seed}: selection recall {recall:.4}"))?;
        check(elapsed < Duration::from_secs(300), format!("seed {seed}: took {elapsed:?}"))?;
        report.push(format!("seed {seed}: acc {:.2}% recall {:.2}% ({:.1}s)", 100.0 * acc, 100.0 * recall, elapsed.as_secs_f64()));
    }
    Ok(report.join("; "))
}

// ---------------------------------------------------------------------------
// protocol constants

fn protocol_constants() -> Result<String, String> {
    let expect: [[f64; 3]; 3] = [[0.8, 0.95, 0.9], [0.9, 0.9, 0.8], [0.9, 0.6, 0.5]];
    for (t, e) in EDIT_SCHEDULE.iter().zip(expect) {
        check(
            t.merge.to_bits() == e[0].to_bits() && t.group.to_bits() == e[1].to_bits() && t.prune.to_bits() == e[2].to_bits(),
            format!("edit schedule {t:?}"),
        )?;
    }
    check(protocol::PROPOSAL_EDGE_CAP == 900, "proposal cap")?;
    check(protocol::ALIGNMENT_IOU_THRESHOLD.to_bits() == 0.4f64.to_bits(), "alignment threshold")?;
    check(protocol::DETECTION_CONFIDENCE_THRESHOLD.to_bits() == 0.5f64.to_bits(), "confidence filter")?;
    check(protocol::STAGE_DEPTHS == [7, 7, 4] && protocol::GCN_HIDDEN == 256, "stage sizes")?;

    // introspect a model built from a standard manifest
    let cfg = ModelConfig::standard(4);
    let model: Model<f32> = Model::from_weights(&ModelWeights::zeros(&cfg), &cfg).map_err(|e| e.to_string())?;
    let depths: Vec<usize> = model.stages.iter().map(|s| s.blocks.len()).collect();
    check(depths == [7, 7, 4], format!("model depths {depths:?}"))?;
    for s in &model.stages {
        for b in &s.blocks {
            check(
                b.edge_mlp.fc1.in_dim == 768 && b.node_mlp.fc1.in_dim == 512 && b.edge_mlp.fc2.out_dim == 256,
                "block widths",
            )?;
            check(b.attention.heads == 4, "attention heads")?;
        }
    }

    // behavior at the boundaries
    check(selection_size(4950) == 900 && selection_size(45) == 23, "selection size")?;
    let line = |id, x1: f64, conf| TextLine {
        id,
        bbox: BBox::new(x1, 0.0, x1 + 10.0, 10.0).unwrap(),
        confidence: conf,
        class_scores: vec![1.0, 0.0],
        text: None,
    };
    let mut doc = Document::empty("c", 100.0, 100.0, ClassSet::naf());
    doc.lines = vec![line(0, 0.0, 0.5), line(1, 20.0, 0.4999999)];
    check(doc.confident_lines().len() == 1, "confidence filter boundary")?;
    // pred (0,0,10,10) against gt (0,0,10,25): IOU exactly 0.4
    let gt = TextLine {
        bbox: BBox::new(0.0, 0.0, 10.0, 25.0).unwrap(),
        ..line(5, 0.0, 1.0)
    };
    check(assign_lines(&[line(0, 0.0, 1.0)], std::slice::from_ref(&gt)).gt_of(0) == Some(5), "0.4 assigns")?;
    let gt_low = TextLine {
        bbox: BBox::new(0.0, 0.0, 10.0, 25.01).unwrap(),
        ..gt
    };
    check(assign_lines(&[line(0, 0.0, 1.0)], &[gt_low]).gt_of(0).is_none(), "below 0.4 unassigned")?;
    let _ = Entity { line_ids: vec![0], class: 0 };
    Ok("edit schedule, cap 900, alignment 0.4, confidence 0.5, depths 7/7/4 at width 256 verified".into())
}

// ---------------------------------------------------------------------------
// dataset loaders

fn datasets() -> Outcome {
    let funsd = std::env::var_os("FUNSD_ROOT").map(PathBuf::from);
    let naf = std::env::var_os("NAF_ROOT").map(PathBuf::from);
    let (Some(funsd), Some(naf)) = (funsd, naf) else {
        return Outcome::Blocked(
            "FUNSD_ROOT and NAF_ROOT are not set; the official annotation releases are not available here".into(),
        );
    };
    let run = || -> Result<String, String> {
        let f = load_funsd_corpus(&funsd).map_err(|e| e.to_string())?;
        check(f.len() == 199 && f.test.len() == 50, format!("FUNSD {} documents, {} test", f.len(), f.test.len()))?;
        let n = load_naf_corpus(&naf).map_err(|e| e.to_string())?;
        let sizes = (n.test.len(), n.valid.len(), n.train.len());
        check(sizes == (77, 75, 708), format!("NAF test/valid/train = {sizes:?}"))?;
        Ok("FUNSD 199 (50 test); NAF 77/75/708".into())
    };
    outcome(run())
}

fn main() {
    let criteria = [
        Criterion {
            name: "metric oracle suite",
            budget: Duration::from_secs(10),
            run: || outcome(metric_oracle()),
        },
        Criterion {
            name: "GCN numerical suite",
            budget: Duration::from_secs(30),
            run: || outcome(gcn_suite()),
        },
        Criterion {
            name: "gradient checks",
            budget: Duration::from_secs(60),
            run: || outcome(gradient_checks()),
        },
        Criterion {
            name: "edit-semantics suite",
            budget: Duration::from_secs(60),
            run: || outcome(edit_semantics()),
        },
        Criterion {
            name: "desk-scale learning",
            budget: Duration::from_secs(900),
            run: || outcome(learning()),
        },
        Criterion {
            name: "protocol constants",
            budget: Duration::from_secs(10),
            run: || outcome(protocol_constants()),
        },
        Criterion {
            name: "FUNSD/NAF corpus statistics",
            budget: Duration::from_secs(600),
            run: datasets,
        },
    ];
    let (mut failed, mut blocked) = (0, 0);
    for c in &criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let dt = t.elapsed();
        let result = match result {
            Outcome::Pass(s) if dt > c.budget => Outcome::Fail(format!("{s}; over budget {:?}", c.budget)),
            r => r,
        };
        match result {
            Outcome::Pass(s) => println!("PASS  {:<30} {:>7.2}s  {s}", c.name, dt.as_secs_f64()),
            Outcome::Fail(s) => {
                failed += 1;
                println!("FAIL  {:<30} {:>7.2}s  {s}", c.name, dt.as_secs_f64());
            }
            Outcome::Blocked(s) => {
                blocked += 1;
                println!("FAIL  {:<30} {:>7.2}s  blocked: {s}", c.name, dt.as_secs_f64());
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed, {blocked} blocked by missing external data",
        criteria.len() - failed - blocked
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
