use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gpg_core::advantage::{build_bin_table, gae_advantages, gpg_advantages};
use gpg_core::mdp::segment_rollout;
use gpg_core::rng::stream;
use gpg_core::{BinningConfig, EnvId, PolicyModel, RolloutGroup, TrainConfig, Trainer, VectorizedEnv};

fn cartpole_group(num_envs: usize, steps: usize) -> (PolicyModel, RolloutGroup) {
    let id = EnvId::parse("cartpole").unwrap();
    let policy = PolicyModel::for_env(&id.spec(), &[64, 64], &mut stream(1, 0));
    let mut venv = VectorizedEnv::new(&id, num_envs, 1).unwrap();
    let (raw, _) = venv.collect(steps, false, |obs, rng| policy.sample_action(obs, rng)).unwrap();
    (policy, segment_rollout(&raw, 0).unwrap())
}

fn advantages(c: &mut Criterion) {
    let (_, group) = cartpole_group(32, 128);
    let returns = group.returns(0.99).unwrap();
    for binning in [BinningConfig::Universal, BinningConfig::Time, BinningConfig::SpatialTime { eps: 0.2 }] {
        c.bench_function(&format!("gpg advantages {binning} 32x128"), |b| {
            b.iter(|| {
                let table = build_bin_table(&group, &returns, &binning).unwrap();
                gpg_advantages(&group, &returns, &table, false).unwrap()
            })
        });
    }
    let rewards = vec![1.0; 128];
    let values: Vec<f64> = (0..128).map(|i| i as f64 * 0.01).collect();
    c.bench_function("gae 128 steps", |b| b.iter(|| gae_advantages(&rewards, &values, 0.5, 0.99, 0.95).unwrap()));
}

fn policy(c: &mut Criterion) {
    let (policy, group) = cartpole_group(1, 64);
    let steps: Vec<_> = group.segments.iter().flat_map(|s| &s.steps).collect();
    let mut scratch = policy.scratch();
    let mut grad = policy.gradient_buffer();
    c.bench_function("mlp 64x64 evaluate+backward x64", |b| {
        b.iter(|| {
            for s in &steps {
                policy.evaluate(&s.observation, &s.action, &mut scratch).unwrap();
                policy.backward(&mut scratch, 1.0, 0.01, grad.as_mut_slice());
            }
        })
    });
}

fn stepping(c: &mut Criterion) {
    let id = EnvId::parse("cartpole").unwrap();
    let policy = PolicyModel::for_env(&id.spec(), &[64, 64], &mut stream(1, 0));
    c.bench_function("cartpole collect 16x128", |b| {
        b.iter_batched(
            || VectorizedEnv::new(&id, 16, 3).unwrap(),
            |mut venv| venv.collect(128, false, |obs, rng| policy.sample_action(obs, rng)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn iteration(c: &mut Criterion) {
    let id = EnvId::parse("cartpole").unwrap();
    let config = TrainConfig {
        num_envs: 8,
        rollout_length: 64,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train iteration");
    group.sample_size(10);
    group.bench_function("gpg time 8x64", |b| {
        b.iter_batched(
            || Trainer::new(id.clone(), config.clone()).unwrap(),
            |mut t| t.train_iteration().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, advantages, policy, stepping, iteration);
criterion_main!(benches);
