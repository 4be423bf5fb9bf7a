use mode0_core::env::EnvConfig;
use mode0_core::marl::ppo::{actor_loss_and_grad, ActorSample};
use mode0_core::marl::{ActorHead, ActorMode, PolicyBundle, TrainConfig};
use mode0_core::rng::{stream_rng, Stream};
use mode0_core::types::{PoolLayout, IDENTITY_FEATURES};
use proptest::prelude::*;
use rand::Rng;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        actor_hidden: 16,
        critic_hidden: 16,
        ..TrainConfig::default()
    }
}

proptest! {
    #[test]
    fn heads_are_distributions(logits in prop::collection::vec(-800.0f64..800.0, 10)) {
        let h = ActorHead::from_logits(&logits, 5);
        for p in [&h.subchannel_probs, &h.power_probs] {
            prop_assert!(p.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn entropy_coefficient_is_linear_then_flat(e in 0u64..10_000) {
        let c = TrainConfig::default();
        let want = 0.05 + (0.001 - 0.05) * (e as f64 / 3000.0).min(1.0);
        prop_assert!((c.entropy_coef(e) - want).abs() < 1e-15);
    }
}

#[test]
fn shared_actor_gradient_is_the_mean_of_vehicle_contributions() {
    let env = EnvConfig::new(4, PoolLayout::shared(5).unwrap());
    let cfg = small_cfg();
    let bundle = PolicyBundle::new(&env, ActorMode::Mode0a, &cfg, 3);
    // Vehicles 0 and 1 are both M0 and share actor 0.
    assert_eq!(bundle.actor_index(0), bundle.actor_index(1));
    let actor = bundle.actor_for(0);
    let mut rng = stream_rng(17, Stream::Policy, 0);
    let t = 25;
    let obs: Vec<Vec<f64>> = (0..2 * t)
        .map(|_| (0..env.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let samples: Vec<ActorSample> = obs
        .iter()
        .map(|o| {
            let head = actor.head(o).unwrap();
            let (s, p) = (rng.random_range(0..5), rng.random_range(0..5));
            ActorSample {
                obs: o,
                sub_local: s,
                power: p,
                old_logp: head.log_prob(s, p) + rng.random_range(-0.3..0.3),
                advantage: rng.random_range(-2.0..2.0),
            }
        })
        .collect();
    let (la, _, ga) = actor_loss_and_grad(actor, &samples, 0.2, 0.03).unwrap();
    let (l0, _, g0) = actor_loss_and_grad(actor, &samples[..t], 0.2, 0.03).unwrap();
    let (l1, _, g1) = actor_loss_and_grad(actor, &samples[t..], 0.2, 0.03).unwrap();
    assert!((la - 0.5 * (l0 + l1)).abs() < 1e-12);
    let scale = ga.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for k in 0..ga.len() {
        assert!((ga[k] - 0.5 * (g0[k] + g1[k])).abs() <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn class_actors_are_permutation_symmetric_without_identity_features() {
    let env = EnvConfig::new(6, PoolLayout::shared(5).unwrap());
    let bundle = PolicyBundle::new(&env, ActorMode::Mode0a, &small_cfg(), 8);
    let mut rng = stream_rng(2, Stream::Policy, 0);
    let d = env.obs_dim();
    for _ in 0..20 {
        let mut o: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for x in &mut o[d - IDENTITY_FEATURES..] {
            *x = 0.0;
        }
        let m0: Vec<_> = (0..3).map(|i| bundle.actor_for(i).head(&o).unwrap()).collect();
        let m1: Vec<_> = (3..6).map(|i| bundle.actor_for(i).head(&o).unwrap()).collect();
        assert!(m0.windows(2).all(|w| w[0].subchannel_logits == w[1].subchannel_logits));
        assert!(m1.windows(2).all(|w| w[0].power_logits == w[1].power_logits));
    }
}

#[test]
fn critic_input_is_identical_across_modes() {
    let env = EnvConfig::new(4, PoolLayout::separated(5, 2).unwrap());
    let a = PolicyBundle::new(&env, ActorMode::Mode0a, &small_cfg(), 1);
    let c = PolicyBundle::new(&env, ActorMode::Mode0c, &small_cfg(), 1);
    assert_eq!(a.critic.shape(), c.critic.shape());
    assert_eq!(a.critic.shape().in_dim, env.state_dim());
    assert_eq!((a.actors.len(), c.actors.len()), (2, 4));
}
