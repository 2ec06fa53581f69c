use causal_rag::embedding::knn_search;
use causal_rag::evaluation::{triplet_metrics, MatchingMode};
use causal_rag::retrieval::{connective_similarity, retrieve_pattern, Matcher, RetrievalConfig};
use causal_rag_bench::{random_vector, random_vectors, synthetic_repository, triplet_sets};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_search");
    for n in [1_000, 10_000] {
        let corpus = random_vectors(n, 256, 1);
        let query = random_vector(&mut ChaCha8Rng::seed_from_u64(2), 256);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| knn_search(&query, &corpus, 10).unwrap())
        });
    }
    group.finish();
}

fn similarity(c: &mut Criterion) {
    let pairs = [
        ("caused by", "was caused by"),
        ("as a result of", "resulted in"),
        ("led to", "leads to"),
    ];
    for matcher in [Matcher::EditRatio, Matcher::TokenContainment] {
        c.bench_function(&format!("connective_similarity/{matcher}"), |b| {
            b.iter(|| {
                pairs
                    .iter()
                    .map(|(a, q)| connective_similarity(a, q, matcher).unwrap())
                    .sum::<f64>()
            })
        });
    }
}

fn pattern(c: &mut Criterion) {
    let repo = synthetic_repository(5_000, 3);
    let cfg = RetrievalConfig::default();
    let inputs = vec!["was caused by".to_string(), "resulting in".to_string()];
    c.bench_function("retrieve_pattern/5000", |b| {
        b.iter(|| retrieve_pattern(&inputs, &repo, &cfg).len())
    });
}

fn triplets(c: &mut Criterion) {
    let (gold, predicted) = triplet_sets(500, 4);
    let mut group = c.benchmark_group("triplet_metrics");
    for mode in [MatchingMode::Greedy, MatchingMode::Optimal] {
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| triplet_metrics(&gold, &predicted, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, knn, similarity, pattern, triplets);
criterion_main!(benches);
