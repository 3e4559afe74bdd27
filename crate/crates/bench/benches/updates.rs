use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fastwalk_core::envs::{Environment, Walker, WalkerParams};
use fastwalk_core::harness::collect_random;
use fastwalk_core::replay::ReplayBuffer;
use fastwalk_core::sac::{Agent, AgentConfig, Variant};

const K: usize = 20;

fn setup(hidden: usize) -> (Agent, ReplayBuffer) {
    let mut env = Walker::new(WalkerParams::default()).unwrap();
    let spec = env.spec().clone();
    let mut replay = ReplayBuffer::new(5000, spec.obs_dim, spec.act_dim);
    collect_random(&mut env, &mut replay, 2000, 0).unwrap();
    let cfg = AgentConfig {
        hidden: vec![hidden, hidden],
        batch_size: 128,
        ..AgentConfig::for_variant(Variant::Droq)
    };
    (Agent::new(cfg, spec.obs_dim, spec.act_dim, 0).unwrap(), replay)
}

fn critic_updates(c: &mut Criterion) {
    for hidden in [64, 256] {
        let (agent, replay) = setup(hidden);
        let mut g = c.benchmark_group(format!("critic_updates_h{hidden}"));
        g.sample_size(10);
        g.throughput(Throughput::Elements(K as u64));
        g.bench_function("sequential_k20", |b| {
            b.iter_batched(
                || agent.clone(),
                |mut a| a.sequential_critic_updates(&replay, K).unwrap(),
                BatchSize::LargeInput,
            )
        });
        g.bench_function("fused_k20", |b| {
            b.iter_batched(
                || agent.clone(),
                |mut a| a.fused_critic_updates(&replay, K).unwrap(),
                BatchSize::LargeInput,
            )
        });
        g.finish();
    }
}

fn train_step(c: &mut Criterion) {
    let (agent, replay) = setup(64);
    let mut g = c.benchmark_group("train_step_h64");
    g.sample_size(10);
    g.bench_function("utd20", |b| {
        b.iter_batched(|| agent.clone(), |mut a| a.train_step(&replay).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, critic_updates, train_step);
criterion_main!(benches);
