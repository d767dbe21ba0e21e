use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samrl::corpus::{generate_corpus, load_prompt_schema, trait_prediction_order, CorpusConfig, ScoreRange};
use samrl::metrics::{qwk, RatingPairSet};
use samrl::policy::{generate, DecodeMode, PolicyConfig, PolicyParams};
use samrl::ppo::gae;

fn bench_qwk(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let range = ScoreRange::new(0, 12);
    let mut group = c.benchmark_group("qwk");
    for n in [16usize, 128, 1024] {
        let gold: Vec<i64> = (0..n).map(|_| rng.random_range(0..=12)).collect();
        let pred: Vec<i64> = gold.iter().map(|g| (g + rng.random_range(-2..=2)).clamp(0, 12)).collect();
        let pairs = RatingPairSet::new(gold, pred, range).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pairs, |b, p| b.iter(|| qwk(black_box(p))));
    }
    group.finish();
}

fn bench_gae(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rewards: Vec<f64> = (0..21).map(|_| rng.random_range(-0.1..0.1)).collect();
    let values: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("gae/21", |b| b.iter(|| gae(black_box(&rewards), black_box(&values), 0.99, 0.95).unwrap()));
}

fn bench_generate(c: &mut Criterion) {
    let schema = load_prompt_schema();
    let cfg = CorpusConfig { essays_per_prompt: 10, ..CorpusConfig::default() };
    let corpus = generate_corpus(&schema, &cfg).unwrap();
    let vocab = cfg.vocabulary(&schema);
    let len = 2 * trait_prediction_order(&schema).len() + 1;
    let params = PolicyParams::new(PolicyConfig::default(), vocab.len()).unwrap();
    let essay = &corpus[0].tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("generate");
    group.sample_size(20);
    group.bench_function("greedy", |b| {
        b.iter(|| generate(&params, black_box(essay), &vocab, DecodeMode::Greedy, len, &mut rng).unwrap())
    });
    group.bench_function("sampled", |b| {
        b.iter(|| {
            generate(&params, black_box(essay), &vocab, DecodeMode::Sampled { temperature: 1.0 }, len, &mut rng).unwrap()
        })
    });
    group.finish();
}

criterion_group!(metrics, bench_qwk);
criterion_group!(ppo, bench_gae);
criterion_group!(policy, bench_generate);
criterion_main!(metrics, ppo, policy);
