use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use formgraph::docmodel::{synth_corpus, synth_form, Document, SynthParams};
use formgraph::exec::Execution;
use formgraph::gnn::{Model, ModelConfig, ModelWeights};
use formgraph::graphedit::Prediction;
use formgraph::metrics::{evaluate, Averaging};
use formgraph::proposal::score_pairs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn big_form() -> Document {
    synth_form(
        11,
        SynthParams {
            rows: 20,
            cols: 3,
            ..SynthParams::default()
        },
    )
    .unwrap()
}

fn pair_scoring(c: &mut Criterion) {
    let doc = big_form();
    let cfg = ModelConfig::standard(doc.class_set.len());
    let model: Model<f32> = Model::from_weights(&ModelWeights::init(&cfg, 1), &cfg).unwrap();
    let lines = doc.confident_lines();
    let mut g = c.benchmark_group("score_pairs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, lines.len()), |b| {
            b.iter(|| score_pairs(&lines, doc.image_width, doc.image_height, 4, &model.proposal, exec).unwrap())
        });
    }
    g.finish();
}

fn stage_forward(c: &mut Criterion) {
    let cfg = ModelConfig::standard(4);
    let model: Model<f32> = Model::from_weights(&ModelWeights::init(&cfg, 2), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 150;
    let edges: Vec<(usize, usize)> = (0..450)
        .map(|_| {
            let a = rng.gen_range(0..n - 1);
            (a, rng.gen_range(a + 1..n))
        })
        .collect();
    let feats = |k: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
        (0..k).map(|_| (0..cfg.hidden).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    };
    let nf = feats(n, &mut rng);
    let ef = feats(edges.len(), &mut rng);
    let mut g = c.benchmark_group("stage_forward");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| model.stages[2].forward(&nf, &edges, &ef, exec).unwrap()));
    }
    g.finish();
}

fn corpus_eval(c: &mut Criterion) {
    let docs = synth_corpus(5, 200, 2..=8, 1..=3, SynthParams::default()).unwrap();
    let pairs: Vec<(Prediction, Document)> = docs
        .into_iter()
        .map(|d| (Prediction::from_ground_truth(&d), d))
        .collect();
    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| evaluate(&pairs, Averaging::Micro, exec)));
    }
    g.finish();
}

criterion_group!(benches, pair_scoring, stage_forward, corpus_eval);
criterion_main!(benches);
