use fastwalk_core::nn::{Activation, AdamState, Dense, Matrix, MlpParams, RngStream};
use fastwalk_core::replay::{ReplayBuffer, Transition};
use fastwalk_core::sac::{
    streams, ActionMode, Agent, AgentConfig, Dispatch, Policy, Variant,
};
use proptest::prelude::*;

mod common;
use common::{filled_replay, small_config, RefSac, ACT, OBS};

/// Single affine layer with zero weights: outputs `bias` for every input.
fn constant_net(inputs: usize, bias: f64) -> MlpParams {
    MlpParams::from_layers(
        vec![Dense {
            weight: Matrix::zeros(inputs, 1),
            bias: vec![bias],
            norm: None,
            dropout_rate: 0.0,
        }],
        Activation::Relu,
    )
    .unwrap()
}

#[test]
fn terminal_and_myopic_targets_equal_reward() {
    let mut agent = Agent::new(small_config(Variant::Droq), OBS, ACT, 1).unwrap();
    let replay = filled_replay(64, 1);
    let batch = replay.sample_batch(32, &mut RngStream::new(0, "b")).unwrap();
    let info = agent.compute_target(&batch).unwrap();
    for b in 0..batch.len() {
        if batch.terminal[b] == 1.0 {
            assert_eq!(info.y[b], batch.rewards[b]);
        }
    }

    let cfg = AgentConfig {
        discount: 0.0,
        ..small_config(Variant::Redq)
    };
    let mut agent = Agent::new(cfg, OBS, ACT, 1).unwrap();
    let info = agent.compute_target(&batch).unwrap();
    assert_eq!(info.y, batch.rewards);
}

#[test]
fn hand_computed_two_critic_target() {
    let cfg = AgentConfig {
        entropy_in_target: false,
        ..small_config(Variant::Sac)
    };
    let mut agent = Agent::new(cfg, OBS, ACT, 2).unwrap();
    agent.critics.target[0] = constant_net(OBS + ACT, 1.0);
    agent.critics.target[1] = constant_net(OBS + ACT, 2.0);
    let mut replay = ReplayBuffer::new(4, OBS, ACT);
    replay
        .push(Transition {
            obs: vec![0.1; OBS],
            action: vec![0.0; ACT],
            reward: 0.0,
            next_obs: vec![0.2; OBS],
            done: false,
            truncated: false,
        })
        .unwrap();
    let batch = replay.sample_batch(1, &mut RngStream::new(0, "b")).unwrap();
    let info = agent.compute_target(&batch).unwrap();
    assert!((info.y[0] - 0.99).abs() < 1e-15);
}

#[test]
fn critics_at_their_targets_do_not_move() {
    let cfg = AgentConfig {
        dropout_rate: 0.0,
        ..small_config(Variant::Sac)
    };
    let mut agent = Agent::new(cfg, OBS, ACT, 3).unwrap();
    for i in 0..2 {
        agent.critics.online[i] = constant_net(OBS + ACT, 0.4);
        agent.critics.target[i] = constant_net(OBS + ACT, 0.4);
        agent.critics.optims[i] = AdamState::new(&agent.critics.online[i], Default::default());
    }
    let before = agent.critics.online[0].tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
    let batch = filled_replay(32, 3).sample_batch(16, &mut RngStream::new(1, "b")).unwrap();
    let report = agent.critic_update(&batch, &[0.4; 16]).unwrap();
    assert_eq!(report.critic_loss, 0.0);
    let after = agent.critics.online[0].tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
    assert_eq!(before, after);
}

#[test]
fn identical_critics_with_identical_masks_stay_identical() {
    let cfg = AgentConfig {
        dropout_rate: 0.0,
        ..small_config(Variant::LayerNormOnly)
    };
    let mut agent = Agent::new(cfg, OBS, ACT, 4).unwrap();
    agent.critics.online[1] = agent.critics.online[0].clone();
    agent.critics.optims[1] = agent.critics.optims[0].clone();
    let batch = filled_replay(32, 4).sample_batch(16, &mut RngStream::new(1, "b")).unwrap();
    let y: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
    agent.critic_update(&batch, &y).unwrap();
    assert_eq!(agent.critics.online[0].tensors(), agent.critics.online[1].tensors());
}

#[test]
fn flat_critic_without_entropy_gives_no_actor_step() {
    let cfg = AgentConfig {
        entropy_in_actor: false,
        ..small_config(Variant::Sac)
    };
    let mut agent = Agent::new(cfg, OBS, ACT, 5).unwrap();
    agent.critics.online[0] = constant_net(OBS + ACT, 1.0);
    agent.critics.online[1] = constant_net(OBS + ACT, 2.0);
    let before = agent.policy.net.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
    let obs = filled_replay(32, 5).sample_batch(16, &mut RngStream::new(1, "b")).unwrap().obs;
    agent.actor_update(&obs).unwrap();
    let after = agent.policy.net.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
    assert_eq!(before, after);
}

#[test]
fn deterministic_gradient_reaches_quadratic_argmax() {
    let mut policy = Policy::new(1, 1, &[8], 1e-2, 1e-3, 1.0, (-10.0, 2.0), &mut RngStream::new(6, "p")).unwrap();
    let obs = Matrix::row_vector(&[1.0]);
    for _ in 0..2000 {
        let s = policy.evaluate(&obs, None).unwrap();
        let a = s.actions.get(0, 0);
        // Loss −Q with Q = −(a − 0.3)².
        let d = Matrix::row_vector(&[2.0 * (a - 0.3)]);
        let g = policy.backward(&s, &d, 0.0).unwrap();
        policy.apply_gradients(&g).unwrap();
    }
    let (a, _) = policy
        .sample_action(&[1.0], &mut RngStream::new(0, "n"), ActionMode::Deterministic)
        .unwrap();
    assert!((a[0] - 0.3).abs() <= 1e-2, "{}", a[0]);
}

#[test]
fn temperature_drives_entropy_to_target() {
    let mut policy = Policy::new(1, 1, &[8], 3e-3, 3e-3, 1.0, (-10.0, 2.0), &mut RngStream::new(7, "p")).unwrap();
    let b = 128;
    let obs = Matrix::from_vec(b, 1, vec![1.0; b]).unwrap();
    let root = RngStream::new(7, "noise");
    let target = -1.0;
    let mut tail = Vec::new();
    let steps = 6000;
    for t in 0..steps {
        let z = policy.draw_noise(b, &mut root.fork(t));
        let s = policy.evaluate(&obs, Some(&z)).unwrap();
        let alpha = policy.alpha();
        let mut d = Matrix::zeros(b, 1);
        for i in 0..b {
            d.set(i, 0, 2.0 * (s.actions.get(i, 0) - 0.3) / b as f64);
        }
        let g = policy.backward(&s, &d, alpha / b as f64).unwrap();
        policy.apply_gradients(&g).unwrap();
        policy.update_alpha(&s.log_prob, target).unwrap();
        if t >= steps - 1000 {
            tail.push(-s.log_prob.iter().sum::<f64>() / b as f64);
        }
    }
    let entropy = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((entropy - target).abs() <= 0.15, "entropy {entropy}");
}

#[test]
fn train_step_counts_updates() {
    let replay = filled_replay(64, 8);
    for (utd, variant) in [(1, Variant::Sac), (20, Variant::SacUtd20), (20, Variant::Droq)] {
        let cfg = AgentConfig {
            utd_ratio: utd,
            ..small_config(variant)
        };
        let mut agent = Agent::new(cfg, OBS, ACT, 8).unwrap();
        let r = agent.train_step(&replay).unwrap();
        assert!(!r.skipped);
        assert_eq!((r.critic_updates, r.actor_updates), (utd, 1));
        assert_eq!(agent.critic_update_count(), utd as u64);
        assert_eq!(agent.actor_update_count(), 1);
        assert!(r.alpha > 0.0);
    }
}

#[test]
fn underfull_replay_skips() {
    let mut agent = Agent::new(small_config(Variant::Droq), OBS, ACT, 9).unwrap();
    let r = agent.train_step(&filled_replay(15, 9)).unwrap();
    assert!(r.skipped);
    assert_eq!(agent.critic_update_count(), 0);
}

#[test]
fn identical_seeds_give_identical_reports() {
    let replay = filled_replay(100, 10);
    let run = || {
        let mut agent = Agent::new(small_config(Variant::Redq), OBS, ACT, 10).unwrap();
        (0..3).map(|_| agent.train_step(&replay).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.same_values(y));
    }
}

#[test]
fn fused_dispatch_matches_sequential_bitwise() {
    let replay = filled_replay(200, 11);
    for variant in Variant::ALL {
        let base = Agent::new(small_config(variant), OBS, ACT, 11).unwrap();
        let mut seq = base.clone();
        let mut fused = base;
        for _ in 0..3 {
            let a = seq.train_step_with(&replay, Dispatch::Sequential).unwrap();
            let b = fused.train_step_with(&replay, Dispatch::Fused).unwrap();
            assert!(a.same_values(&b), "{variant}");
        }
        assert!(seq == fused, "{variant}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let replay = filled_replay(100, 12);
    let mut agent = Agent::new(small_config(Variant::Droq), OBS, ACT, 12).unwrap();
    agent.train_step(&replay).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.json");
    agent.save_checkpoint(&path).unwrap();
    let mut loaded = Agent::load_checkpoint(&path).unwrap();
    assert!(loaded == agent);
    let a = agent.train_step(&replay).unwrap();
    let b = loaded.train_step(&replay).unwrap();
    assert!(a.same_values(&b));
    assert!(loaded == agent);

    std::fs::write(&path, "{\"format\":\"other\",\"version\":9}").unwrap();
    assert!(Agent::load_checkpoint(&path).is_err());
}

#[test]
fn stripped_configuration_reduces_to_plain_sac_bitwise() {
    let cfg = small_config(Variant::Sac);
    assert_eq!((cfg.n_ensemble, cfg.target_subset, cfg.utd_ratio), (2, 2, 1));
    assert!(!cfg.layer_norm && cfg.dropout_rate == 0.0);
    let replay = filled_replay(200, 13);
    let mut agent = Agent::new(cfg.clone(), OBS, ACT, 13).unwrap();
    let mut reference = RefSac::from_agent(&agent);
    for _ in 0..25 {
        agent.train_step(&replay).unwrap();
        reference.step(&replay, cfg.batch_size);
    }
    assert_eq!(agent.policy.net.tensors(), reference.actor.tensors());
    for c in 0..2 {
        assert_eq!(agent.critics.online[c].tensors(), reference.q[c].tensors());
        assert_eq!(agent.critics.target[c].tensors(), reference.qt[c].tensors());
    }
    assert_eq!(agent.policy.log_alpha.to_bits(), reference.log_alpha.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subset_targets_dominate_full_ensemble_targets(seed in 0u64..1000, subset in 1usize..=10) {
        let cfg = AgentConfig { target_subset: subset, ..small_config(Variant::Redq) };
        let mut agent = Agent::new(cfg, OBS, ACT, seed).unwrap();
        let replay = filled_replay(64, seed);
        let batch = replay.sample_batch(16, &mut RngStream::new(seed, "b")).unwrap();
        let z = agent.policy.draw_noise(16, &mut RngStream::new(seed, streams::TARGET_NOISE).fork(0));
        let next = agent.policy.evaluate(&batch.next_obs, Some(&z)).unwrap();
        let all = agent.target_q_values(&batch.next_obs, &next.actions, 0).unwrap();
        let info = agent.compute_target(&batch).unwrap();
        let alpha = agent.policy.alpha();
        prop_assert_eq!(info.subset.len(), subset);
        for b in 0..16 {
            let full = all.iter().map(|q| q.get(b, 0)).fold(f64::INFINITY, f64::min);
            prop_assert!(info.subset_min[b] >= full);
            let y_full = batch.rewards[b] + (1.0 - batch.terminal[b]) * 0.99 * (full - alpha * info.next_log_prob[b]);
            prop_assert!(info.y[b] >= y_full);
            if batch.terminal[b] == 1.0 {
                prop_assert_eq!(info.y[b], batch.rewards[b]);
            }
        }
    }

    #[test]
    fn actions_stay_inside_the_open_box(seed in 0u64..1000, scale in 0.0f64..1e3) {
        let agent = Agent::new(small_config(Variant::Droq), OBS, ACT, seed).unwrap();
        let mut rng = RngStream::new(seed, "obs");
        let obs: Vec<f64> = (0..OBS).map(|_| scale * rng.normal()).collect();
        for mode in [ActionMode::Stochastic, ActionMode::Deterministic] {
            let a = agent.act(&obs, &mut rng, mode).unwrap();
            prop_assert!(a.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn temperature_stays_positive(seed in 0u64..200) {
        let cfg = AgentConfig { utd_ratio: 2, ..small_config(Variant::Droq) };
        let mut agent = Agent::new(cfg, OBS, ACT, seed).unwrap();
        let replay = filled_replay(40, seed);
        for _ in 0..3 {
            let r = agent.train_step(&replay).unwrap();
            prop_assert!(r.alpha > 0.0);
            prop_assert!(r.critic_loss.is_finite() && r.actor_loss.is_finite());
        }
    }
}
