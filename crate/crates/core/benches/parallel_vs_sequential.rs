use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ragforge_core::embed::{Embedder, EmbeddingVector, HashingEmbedder};
use ragforge_core::ingest::{chunk_corpus, ChunkPolicy, Document};
use ragforge_core::kb::{kmeans, IndexConfig, KMeansParams, KbEntry, KnowledgeBase};
use ragforge_core::par::Execution;

const DIM: usize = 256;
const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn random_rows(n: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| EmbeddingVector::normalized((0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap())
        .collect()
}

fn words(n: usize, seed: u64) -> String {
    const VOCAB: [&str; 12] = [
        "radio", "unit", "fronthaul", "scheduler", "carrier", "beam", "slot", "core", "session", "cell",
        "handover", "spectrum",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn flat_search(c: &mut Criterion) {
    let rows = random_rows(50_000, 1);
    let mut kb = KnowledgeBase::new(IndexConfig::flat(DIM)).unwrap();
    kb.add(
        rows.into_iter()
            .enumerate()
            .map(|(i, vector)| KbEntry {
                chunk_id: format!("d{i}#0"),
                doc_id: format!("d{i}"),
                vector,
                text: format!("t{i}"),
            })
            .collect(),
    )
    .unwrap();
    let q = random_rows(1, 2).pop().unwrap();
    let mut g = c.benchmark_group("flat_search_50k");
    for (name, exec) in STRATEGIES {
        kb.set_execution(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kb.search_flat(black_box(&q), 20).unwrap())
        });
    }
    g.finish();
}

fn embed_batch(c: &mut Criterion) {
    let texts: Vec<String> = (0..2_000).map(|i| words(120, i)).collect();
    let mut g = c.benchmark_group("embed_batch_2k");
    for (name, exec) in STRATEGIES {
        let e = HashingEmbedder::new(DIM).with_execution(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| e.embed_batch(black_box(&texts)).unwrap())
        });
    }
    g.finish();
}

fn kmeans_fit(c: &mut Criterion) {
    let data: Vec<f32> = random_rows(5_000, 3).into_iter().flat_map(EmbeddingVector::into_inner).collect();
    let params = KMeansParams {
        k: 71,
        max_iters: 10,
        seed: 42,
    };
    let mut g = c.benchmark_group("kmeans_5k");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans(black_box(&data), DIM, params, exec))
        });
    }
    g.finish();
}

fn chunking(c: &mut Criterion) {
    let docs: Vec<Document> = (0..500).map(|i| Document::new(format!("doc{i}"), words(2_000, i))).collect();
    let policy = ChunkPolicy::default();
    let mut g = c.benchmark_group("chunk_corpus_500");
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| chunk_corpus(black_box(&docs), &policy, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, flat_search, embed_batch, kmeans_fit, chunking);
criterion_main!(benches);
