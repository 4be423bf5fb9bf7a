use mode0_core::channel::ChannelConfig;
use mode0_core::env::{Env, EnvConfig, StepResult};
use mode0_core::mobility::{init_positions, step_mobility, MobilityConfig};
use mode0_core::rng::{stream_rng, Stream};
use mode0_core::types::{
    class_of, m0_count, obs_dim, state_dim, Action, Heading, JointAction, PoolLayout, TrafficClass, VehicleState,
    POWER_LEVELS_DBM,
};
use proptest::prelude::*;

fn vehicle(id: usize, n: usize, pos: f64, lane: u8) -> VehicleState {
    VehicleState {
        id,
        class: class_of(id, n),
        position_m: pos,
        lane,
        speed_mps: 30.0,
        heading: Heading::Forward,
        chosen_subchannel: 0,
        chosen_power_dbm: 23.0,
        ema_sinr_db: Vec::new(),
        queue_delay_norm: 0.0,
    }
}

fn det_env(n: usize, pool: PoolLayout) -> EnvConfig {
    let mut cfg = EnvConfig::new(n, pool);
    cfg.channel = ChannelConfig::deterministic();
    cfg
}

fn joint(a: &[(usize, usize)]) -> JointAction {
    JointAction(a.iter().map(|&(subchannel, power_index)| Action { subchannel, power_index }).collect())
}

/// Free-space gain with 1 m clamp, written out independently.
fn gain(d: f64) -> f64 {
    let pl = 32.4 + 20.0 * 5.9f64.log10() + 20.0 * d.max(1.0).log10();
    10f64.powf(-pl / 10.0)
}

fn dist(a: &VehicleState, b: &VehicleState, mob: &MobilityConfig) -> f64 {
    let dx = (a.position_m - b.position_m).abs();
    let long = dx.min(mob.track_length_m - dx);
    long.hypot((a.lane as f64 - b.lane as f64) * mob.lane_width_m)
}

#[test]
fn scripted_three_vehicle_sinr_matches_hand_computation() {
    let cfg = det_env(3, PoolLayout::shared(5).unwrap());
    let vs = vec![vehicle(0, 3, 100.0, 0), vehicle(1, 3, 160.0, 1), vehicle(2, 3, 400.0, 0)];
    let (mut env, _) = Env::from_vehicles(cfg, 0, vs).unwrap();
    let actions = [(2usize, 4usize), (2, 2), (2, 0)];
    let r = env.step(&joint(&actions)).unwrap();
    let v = env.vehicles();
    let mob = &cfg.mobility;
    let p: Vec<f64> = actions.iter().map(|a| 10f64.powf(POWER_LEVELS_DBM[a.1] / 10.0)).collect();
    let noise = 10f64.powf(-114.0 / 10.0);
    // Receivers after one step: 0 <-> 1 nearest each other, 2's nearest is 1.
    let rx = [1usize, 0, 1];
    for i in 0..3 {
        let r_i = rx[i];
        let interf: f64 = (0..3)
            .filter(|&k| k != i && k != r_i)
            .map(|k| p[k] * gain(dist(&v[k], &v[r_i], mob)))
            .sum();
        let sinr = 10.0 * (p[i] * gain(dist(&v[i], &v[r_i], mob)) / (interf + noise)).log10();
        assert!((sinr - r.per_vehicle_sinr_db[i]).abs() < 1e-9, "vehicle {i}: {sinr} vs {}", r.per_vehicle_sinr_db[i]);
    }
    assert_eq!(r.collision_flags, vec![true; 3]);
    assert_eq!(env.intended_receivers(), vec![Some(1), Some(0), Some(1)]);
}

#[test]
fn relabeling_within_a_class_leaves_metrics_unchanged() {
    let n = 6;
    let cfg = det_env(n, PoolLayout::shared(5).unwrap());
    let pos = [50.0, 700.0, 1400.0, 2100.0, 300.0, 2600.0];
    let lanes = [0u8, 1, 0, 1, 1, 0];
    let acts = [(0usize, 4usize), (1, 3), (0, 2), (1, 4), (3, 1), (0, 4)];
    // Permutation swapping the M0 pair (0, 2) and the M1 pair (3, 5).
    let perm = [2usize, 1, 0, 5, 4, 3];
    let build = |p: &[usize]| {
        let vs = (0..n).map(|k| vehicle(k, n, pos[p[k]], lanes[p[k]])).collect();
        let (mut env, _) = Env::from_vehicles(cfg, 7, vs).unwrap();
        let a: Vec<(usize, usize)> = (0..n).map(|k| acts[p[k]]).collect();
        for _ in 0..20 {
            env.step(&joint(&a)).unwrap();
        }
        env.finalize_metrics(0).unwrap()
    };
    let a = build(&[0, 1, 2, 3, 4, 5]);
    let b = build(&perm);
    for (x, y) in [
        (a.m0_pdr_mean, b.m0_pdr_mean),
        (a.m1_pdr_mean, b.m1_pdr_mean),
        (a.m0_collision_rate, b.m0_collision_rate),
        (a.m0_sinr_mean_db, b.m0_sinr_mean_db),
        (a.m0_pdr_p05_intra, b.m0_pdr_p05_intra),
    ] {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn explicit_placement_is_validated() {
    let cfg = det_env(2, PoolLayout::shared(5).unwrap());
    assert!(Env::from_vehicles(cfg, 0, vec![vehicle(0, 2, 0.0, 0)]).is_err());
    assert!(Env::from_vehicles(cfg, 0, vec![vehicle(1, 2, 0.0, 0), vehicle(0, 2, 9.0, 0)]).is_err());
    assert!(Env::from_vehicles(cfg, 0, vec![vehicle(0, 2, 0.0, 0), vehicle(1, 2, 3000.0, 0)]).is_err());
    assert!(Env::from_vehicles(cfg, 0, vec![vehicle(0, 2, 0.0, 0), vehicle(1, 2, 9.0, 2)]).is_err());
}

fn check_step(cfg: &EnvConfig, r: &StepResult, subs: &[usize]) {
    let n = cfg.n;
    assert_eq!(r.observations.len(), n);
    assert!(r.observations.iter().all(|o| o.len() == obs_dim(cfg.m()).unwrap()));
    assert_eq!(r.global_state.len(), state_dim(n, cfg.m()).unwrap());
    for i in 0..n {
        let co: Vec<usize> = (0..n).filter(|&k| k != i && subs[k] == subs[i]).collect();
        assert_eq!(r.collision_flags[i], !co.is_empty());
        if r.collision_flags[i] {
            assert!(co.iter().all(|&k| r.collision_flags[k]));
        }
        if cfg.pool.m0_pool().is_some() {
            assert!(cfg.pool.slice(class_of(i, n)).contains(&subs[i]));
            assert!(co.iter().all(|&k| class_of(k, n) == class_of(i, n)));
        }
        assert!((0.0..=1.0).contains(&r.per_vehicle_pdr[i]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_step_respects_shapes_pools_and_collision_symmetry(
        n in 1usize..9,
        m in 2usize..8,
        sep in any::<bool>(),
        seed in any::<u64>(),
        raw in prop::collection::vec((0usize..16, 0usize..5), 8 * 12),
    ) {
        let pool = if sep { PoolLayout::separated(m, m / 2).unwrap() } else { PoolLayout::shared(m).unwrap() };
        let mut cfg = EnvConfig::new(n, pool);
        cfg.episode_len_ttis = 12;
        let (mut env, first) = Env::reset(cfg, seed).unwrap();
        prop_assert_eq!(first.observations.len(), n);
        for t in 0..12 {
            // Draw inside each class's slice so no masking is needed.
            let acts: Vec<(usize, usize)> = (0..n)
                .map(|i| {
                    let s = pool.slice(class_of(i, n));
                    let (c, p) = raw[t * 8 + i];
                    (s.start + c % s.len(), p)
                })
                .collect();
            let r = env.step(&joint(&acts)).unwrap();
            let subs: Vec<usize> = acts.iter().map(|a| a.0).collect();
            check_step(&cfg, &r, &subs);
        }
        prop_assert!(env.is_done());
        prop_assert_eq!(env.masked_actions(), 0);
    }

    #[test]
    fn distinct_subchannels_dominate_any_sharing(
        n in 2usize..6,
        seed in any::<u64>(),
        share in prop::collection::vec(0usize..5, 6),
        power in prop::collection::vec(0usize..5, 6),
    ) {
        let cfg = det_env(n, PoolLayout::shared(5).unwrap());
        let distinct: Vec<(usize, usize)> = (0..n).map(|i| (i, power[i])).collect();
        let shared: Vec<(usize, usize)> = (0..n).map(|i| (share[i], power[i])).collect();
        let (mut a, _) = Env::reset(cfg, seed).unwrap();
        let (mut b, _) = Env::reset(cfg, seed).unwrap();
        let ra = a.step(&joint(&distinct)).unwrap();
        let rb = b.step(&joint(&shared)).unwrap();
        for i in 0..n {
            prop_assert!(ra.per_vehicle_pdr[i] >= rb.per_vehicle_pdr[i]);
            prop_assert!(ra.per_vehicle_sinr_db[i] >= rb.per_vehicle_sinr_db[i] - 1e-9);
        }
    }

    #[test]
    fn mobility_keeps_positions_on_the_ring(seed in any::<u64>(), n in 1usize..12) {
        let cfg = MobilityConfig::default();
        let mut v = init_positions(n, 5, &cfg, &mut stream_rng(seed, Stream::Mobility, 0));
        for _ in 0..500 {
            step_mobility(&mut v, &cfg);
            prop_assert!(v.iter().all(|s| (0.0..cfg.track_length_m).contains(&s.position_m) && s.speed_mps >= 0.0));
        }
    }
}

#[test]
fn ten_vehicle_initial_gaps_exceed_jam_distance() {
    let cfg = MobilityConfig::default();
    for seed in 0..100 {
        let v = init_positions(10, 5, &cfg, &mut stream_rng(seed, Stream::Mobility, 0));
        for a in &v {
            for b in &v {
                if a.id != b.id && a.lane == b.lane {
                    let dx = (a.position_m - b.position_m).abs();
                    let gap = dx.min(cfg.track_length_m - dx) - cfg.vehicle_length_m;
                    assert!(gap >= cfg.idm.s0_m, "seed {seed}: gap {gap}");
                }
            }
        }
    }
}

#[test]
fn trajectories_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = EnvConfig::new(7, PoolLayout::shared(5).unwrap());
            let (mut env, _) = Env::reset(cfg, 99).unwrap();
            let a: Vec<(usize, usize)> = (0..7).map(|i| (i % 5, i % 5)).collect();
            while !env.is_done() {
                env.step(&joint(&a)).unwrap();
            }
            (env.vehicles().to_vec(), env.finalize_metrics(0).unwrap())
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn m0_vehicles_are_the_low_ids() {
    for n in 1..12 {
        let m0 = m0_count(n);
        assert!((0..n).all(|i| (class_of(i, n) == TrafficClass::M0) == (i < m0)));
    }
}
