//! Hot kernels under the default thread pool and under a one-thread pool.
//! Built with `--no-default-features` both variants run the sequential
//! fallback, which gives the third point of comparison.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mail_core::autodiff::{Tape, Tensor};
use mail_core::data::Dataset;
use mail_core::eval::{evaluate, Target};
use mail_core::graph::knn_graph;
use mail_core::model::Embeddings;
use mail_core::par;
use mail_core::sparse::SparseMatrix;
use mail_core::synthetic::{random_unit_rows, zipf_dataset, zipf_items};

fn backend() -> &'static str {
    if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    }
}

fn single_thread() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool")
}

/// Runs `f` on the global pool and on a one-thread pool.
fn both<F: Fn() + Sync>(c: &mut Criterion, group: &str, param: usize, f: F) {
    let pool = single_thread();
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_with_input(BenchmarkId::new(backend(), param), &param, |b, _| b.iter(&f));
    g.bench_with_input(BenchmarkId::new(format!("{}-1thread", backend()), param), &param, |b, _| {
        b.iter(|| pool.install(&f))
    });
    g.finish();
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [500, 2000] {
        let h = random_unit_rows(n, 64, &mut rng);
        both(c, "knn_top10", n, || {
            black_box(knn_graph(&h, 10, 256));
        });
    }
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [256, 1024] {
        let a = random(n, 64, &mut rng);
        let b = random(n, 64, &mut rng);
        both(c, "matmul_nt", n, || {
            let mut t = Tape::new();
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            black_box(t.matmul(va, vb, true).unwrap());
        });
    }
}

fn bench_propagation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5000;
    let triplets: Vec<(usize, usize, f64)> = (0..n * 20).map(|_| (rng.random_range(0..n), rng.random_range(0..n), 0.05)).collect();
    let adj = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
    let x = random(n, 64, &mut rng);
    both(c, "sparse_matmul", n, || {
        black_box(adj.matmul_dense(x.data(), 64));
    });
}

fn bench_ranking(c: &mut Criterion) {
    let items = 1000;
    let ds: Dataset = zipf_dataset(1000, &zipf_items(items, 1.1, 100.0, 16, 4), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nodes = ds.node_count();
    let emb = Embeddings {
        user_count: ds.user_count(),
        e0: random(nodes, 64, &mut rng),
        final_: random(nodes, 64, &mut rng),
    };
    both(c, "full_ranking", ds.user_count(), || {
        black_box(evaluate(&emb, &ds, Target::Test, &[10, 20]).unwrap());
    });
}

criterion_group!(benches, bench_knn, bench_matmul, bench_propagation, bench_ranking);
criterion_main!(benches);
