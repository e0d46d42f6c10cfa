use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use genemeta::eval::pr_auc;
use genemeta::explain::ModelScorer;
use genemeta::models::{init_model, loss_and_grad, predict};
use genemeta::rng::seeded;
use genemeta::{
    generate_task_family, shapley_sampled, train_meta, Architecture, MetaConfig, ModelConfig, SynthSpec, Tensor,
};
use rand::Rng;

fn batch(n: usize, d: usize, seed: u64) -> (Tensor, Vec<f64>) {
    let mut rng = seeded(seed);
    let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let y = (0..n).map(|i| (i % 2) as f64).collect();
    (x, y)
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad");
    let (x, y) = batch(32, 695, 1);
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let model = ModelConfig::new(arch, 695);
        let params = init_model(&model, 0).unwrap();
        group.bench_function(arch.to_string(), |b| {
            b.iter(|| loss_and_grad(black_box(&params), &model, &x, &y).unwrap())
        });
    }
    group.finish();
}

fn meta_epoch(c: &mut Criterion) {
    let family = generate_task_family(&SynthSpec::default()).unwrap();
    let model = ModelConfig::new(Architecture::Mlp, family.target.n_features());
    let config = MetaConfig {
        epochs: 1,
        ..MetaConfig::default()
    };
    c.bench_function("train_meta_epoch_mlp", |b| {
        b.iter(|| train_meta(&config, &model, &family.sources, &family.target).unwrap())
    });
}

fn average_precision(c: &mut Criterion) {
    let mut rng = seeded(3);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
    c.bench_function("pr_auc_10k", |b| b.iter(|| pr_auc(black_box(&scores), &labels).unwrap()));
}

fn shapley(c: &mut Criterion) {
    let d = 50;
    let model = ModelConfig::new(Architecture::Mlp, d);
    let params = init_model(&model, 4).unwrap();
    let (background, _) = batch(60, d, 5);
    let genes: Vec<String> = (0..d).map(|j| format!("G{j:04}")).collect();
    let sample = background.row(0).to_vec();
    let scorer = ModelScorer {
        params: &params,
        config: &model,
    };
    c.bench_function("shapley_sampled_d50_p256", |b| {
        b.iter_batched(
            || sample.clone(),
            |x| shapley_sampled(&scorer, &background, &x, &genes, "s", 256, 0).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("predict_mlp_b1024", |b| {
        let (x, _) = batch(1024, d, 6);
        b.iter(|| predict(&params, &model, black_box(&x)).unwrap())
    });
}

criterion_group!(benches, forward_backward, meta_epoch, average_precision, shapley);
criterion_main!(benches);
