//! The sidelink contention environment.
//!
//! One step is one TTI: vehicles move, every vehicle transmits once on its
//! chosen subchannel and power, SINR is evaluated at each transmitter's
//! intended receiver, and per-class rewards are emitted. Both classes
//! transmit every TTI.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    dbm_to_mw, linear_to_db, path_loss_db_checked, sample_fading, sample_shadowing_db,
    sinr_to_pdr, ChannelConfig, GainTable,
};
use crate::error::{Error, Result};
use crate::mobility::{init_positions, step_mobility, MobilityConfig};
use crate::rng::{stream_rng, Stream};
use crate::types::{
    class_of, m0_count, obs_dim, state_dim, Action, EpisodeMetrics, GlobalState, JointAction, Observation,
    PoolLayout, TrafficClass, VehicleState, N_POWER_LEVELS,
};

pub const REWARD_ALPHA: f64 = 1.0;
pub const REWARD_BETA: f64 = 0.3;
pub const REWARD_GAMMA_TEAM: f64 = 0.5;
pub const REWARD_DELTA: f64 = 0.3;
pub const REWARD_ETA: f64 = 0.3;

/// SINR normalisation used by both reward terms.
const SINR_REWARD_SCALE_DB: f64 = 20.0;
/// Observations carry EMA SINR divided by this.
const EMA_OBS_SCALE_DB: f64 = 20.0;
const EMA_CLIP_DB: (f64, f64) = (-30.0, 60.0);

/// `alpha * pdr + beta * clip(sinr/20, 0, 1) + gamma_team * team_m0_pdr`.
pub fn reward_m0(pdr: f64, sinr_db: f64, team_m0_pdr: f64) -> f64 {
    REWARD_ALPHA * pdr
        + REWARD_BETA * (sinr_db / SINR_REWARD_SCALE_DB).clamp(0.0, 1.0)
        + REWARD_GAMMA_TEAM * team_m0_pdr
}

/// `delta * clip(sinr/20, 0, 1) - eta * (1 - team_m0_pdr)`.
pub fn reward_m1(sinr_db: f64, team_m0_pdr: f64) -> f64 {
    REWARD_DELTA * (sinr_db / SINR_REWARD_SCALE_DB).clamp(0.0, 1.0)
        - REWARD_ETA * (1.0 - team_m0_pdr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n: usize,
    pub pool: PoolLayout,
    pub episode_len_ttis: usize,
    pub channel: ChannelConfig,
    pub mobility: MobilityConfig,
    pub gamma: f64,
    /// TTIs without delivery at which the M0 queue indicator saturates.
    pub queue_horizon_ttis: usize,
    /// PDR at or above which an M0 packet counts as delivered.
    pub delivery_threshold: f64,
}

impl EnvConfig {
    pub fn new(n: usize, pool: PoolLayout) -> Self {
        Self {
            n,
            pool,
            episode_len_ttis: 100,
            channel: ChannelConfig::default(),
            mobility: MobilityConfig::default(),
            gamma: 0.99,
            queue_horizon_ttis: 10,
            delivery_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("N must be >= 1".into()));
        }
        if self.episode_len_ttis < 1 {
            return Err(Error::InvalidConfig("episode_len_ttis must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if self.queue_horizon_ttis < 1 {
            return Err(Error::InvalidConfig("queue_horizon_ttis must be >= 1".into()));
        }
        // Re-run the pool constructor checks on deserialized layouts.
        PoolLayout::new(self.pool.m(), self.pool.partition())?;
        self.channel.validate()?;
        self.mobility.validate()
    }

    pub fn m(&self) -> usize {
        self.pool.m()
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(self.m()).expect("validated pool")
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.n, self.m()).expect("validated pool")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub global_state: GlobalState,
    pub rewards: Vec<f64>,
    pub per_vehicle_pdr: Vec<f64>,
    pub per_vehicle_sinr_db: Vec<f64>,
    pub collision_flags: Vec<bool>,
}

/// One row of the optional per-TTI trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub tti: usize,
    pub id: usize,
    pub subchannel: usize,
    pub power_dbm: f64,
    pub sinr_db: f64,
    pub pdr: f64,
    pub collision: bool,
}

pub const TRACE_CSV_HEADER: &str = "tti,id,ch,power_dbm,sinr_db,pdr,collision";

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            r.tti, r.id, r.subchannel, r.power_dbm, r.sinr_db, r.pdr, r.collision as u8
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    m0_pdr_sum: f64,
    m0_samples: u64,
    m0_collisions: u64,
    m0_within_pool: u64,
    m0_sinr_db_sum: f64,
    m1_pdr_sum: f64,
    m1_samples: u64,
    m0_tti_means: Vec<f64>,
}

/// Nearest-rank percentile of an unsorted series, `q` in (0, 1].
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

pub struct Env {
    cfg: EnvConfig,
    seed: u64,
    vehicles: Vec<VehicleState>,
    channel_rng: ChaCha8Rng,
    tti: usize,
    occupancy: Vec<f64>,
    since_delivery: Vec<usize>,
    acc: Accumulator,
    masked_actions: u64,
    clamped_distances: u64,
    trace: Option<Vec<TraceRow>>,
}

impl Env {
    /// Builds a fresh episode. No transmission happens in TTI 0.
    pub fn reset(cfg: EnvConfig, seed: u64) -> Result<(Env, StepResult)> {
        cfg.validate()?;
        let vehicles = init_positions(
            cfg.n,
            cfg.m(),
            &cfg.mobility,
            &mut stream_rng(seed, Stream::Mobility, 0),
        );
        Self::from_vehicles(cfg, seed, vehicles)
    }

    /// Starts an episode from an explicit placement. Ids must be `0..n` in
    /// order with classes following [`class_of`]; EMA vectors are reset.
    pub fn from_vehicles(cfg: EnvConfig, seed: u64, mut vehicles: Vec<VehicleState>) -> Result<(Env, StepResult)> {
        cfg.validate()?;
        if vehicles.len() != cfg.n {
            return Err(Error::ShapeMismatch { expected: cfg.n, got: vehicles.len() });
        }
        let mob = &cfg.mobility;
        for (k, v) in vehicles.iter_mut().enumerate() {
            if v.id != k || v.class != class_of(k, cfg.n) {
                return Err(Error::InvalidConfig(format!("vehicle {k}: id or class out of order")));
            }
            if !(0.0..mob.track_length_m).contains(&v.position_m) || v.lane >= mob.lanes || !(v.speed_mps >= 0.0) {
                return Err(Error::InvalidConfig(format!("vehicle {k}: position, lane or speed out of range")));
            }
            v.ema_sinr_db = vec![0.0; cfg.m()];
        }
        let mut env = Env {
            cfg,
            seed,
            vehicles,
            channel_rng: stream_rng(seed, Stream::Channel, 0),
            tti: 0,
            occupancy: vec![0.0; cfg.m()],
            since_delivery: vec![0; cfg.n],
            acc: Accumulator::default(),
            masked_actions: 0,
            clamped_distances: 0,
            trace: None,
        };
        for v in &mut env.vehicles {
            v.queue_delay_norm = match v.class {
                TrafficClass::M0 => 0.0,
                TrafficClass::M1 => 1.0,
            };
        }
        let n = cfg.n;
        let result = StepResult {
            observations: env.observations(),
            global_state: env.global_state(),
            rewards: vec![0.0; n],
            per_vehicle_pdr: vec![0.0; n],
            per_vehicle_sinr_db: vec![0.0; n],
            collision_flags: vec![false; n],
        };
        Ok((env, result))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn tti(&self) -> usize {
        self.tti
    }

    pub fn is_done(&self) -> bool {
        self.tti >= self.cfg.episode_len_ttis
    }

    /// Out-of-slice or out-of-range actions replaced so far.
    pub fn masked_actions(&self) -> u64 {
        self.masked_actions
    }

    /// Link distances clamped to the path-loss minimum so far.
    pub fn clamped_distances(&self) -> u64 {
        self.clamped_distances
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    /// Intended receiver per transmitter: nearest other vehicle within
    /// `comm_range_m`, else the nearest overall; ties go to the lower id.
    /// `None` only when the vehicle is alone.
    pub fn intended_receivers(&self) -> Vec<Option<usize>> {
        let mob = &self.cfg.mobility;
        (0..self.cfg.n)
            .map(|i| {
                let mut best: Option<(f64, usize)> = None;
                for j in 0..self.cfg.n {
                    if j == i {
                        continue;
                    }
                    let d = mob.separation(&self.vehicles[i], &self.vehicles[j]);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                // The nearest vehicle is in range whenever anyone is, so the
                // fallback rule selects the same receiver.
                best.map(|(_, j)| j)
            })
            .collect()
    }

    fn mask_action(&mut self, id: usize, a: Action) -> Action {
        let slice = self.cfg.pool.slice(self.vehicles[id].class);
        let mut out = a;
        if !slice.contains(&a.subchannel) {
            out.subchannel = a.subchannel.clamp(slice.start, slice.end - 1);
            self.masked_actions += 1;
        }
        if a.power_index >= N_POWER_LEVELS {
            out.power_index = N_POWER_LEVELS - 1;
            self.masked_actions += 1;
        }
        out
    }

    pub fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        let n = self.cfg.n;
        let m = self.cfg.m();
        if actions.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: actions.len(),
            });
        }
        let actions: Vec<Action> = actions
            .0
            .iter()
            .enumerate()
            .map(|(i, a)| self.mask_action(i, *a))
            .collect();
        for (v, a) in self.vehicles.iter_mut().zip(&actions) {
            v.chosen_subchannel = a.subchannel;
            v.chosen_power_dbm = a.power_dbm();
        }
        debug_assert!(self.slices_respected());

        step_mobility(&mut self.vehicles, &self.cfg.mobility);
        let receivers = self.intended_receivers();

        let ch_cfg = self.cfg.channel;
        let subchannels: Vec<usize> = actions.iter().map(|a| a.subchannel).collect();
        let powers_mw: Vec<f64> = actions.iter().map(|a| dbm_to_mw(a.power_dbm())).collect();
        let noise_mw = ch_cfg.noise_mw();

        // Interferer-path gains for every ordered pair, then shadowing on the
        // intended links. Draw order is fixed for reproducibility.
        let mut gains = GainTable::new(n);
        for k in 0..n {
            for j in 0..n {
                if k == j {
                    continue;
                }
                let d = self
                    .cfg
                    .mobility
                    .separation(&self.vehicles[k], &self.vehicles[j]);
                let (pl, clamped) = path_loss_db_checked(d, ch_cfg.fc_ghz);
                self.clamped_distances += clamped as u64;
                let f = sample_fading(&ch_cfg, &mut self.channel_rng);
                gains.set(k, j, 10f64.powf(-pl / 10.0) * f);
            }
        }
        let signal_gain: Vec<f64> = (0..n)
            .map(|i| {
                let x = sample_shadowing_db(&ch_cfg, &mut self.channel_rng);
                let base = match receivers[i] {
                    Some(r) => gains.get(i, r),
                    None => {
                        // Lone vehicle: virtual receiver at the edge of range.
                        let (pl, _) = path_loss_db_checked(ch_cfg.comm_range_m, ch_cfg.fc_ghz);
                        10f64.powf(-pl / 10.0) * sample_fading(&ch_cfg, &mut self.channel_rng)
                    }
                };
                base * 10f64.powf(-x / 10.0)
            })
            .collect();

        let sinr_db: Vec<f64> = (0..n)
            .map(|i| {
                let interference = match receivers[i] {
                    Some(r) => crate::channel::interference_mw(
                        i,
                        r,
                        subchannels[i],
                        &subchannels,
                        &powers_mw,
                        &gains,
                    ),
                    None => 0.0,
                };
                linear_to_db(powers_mw[i] * signal_gain[i] / (interference + noise_mw))
            })
            .collect();
        let pdr: Vec<f64> = sinr_db.iter().map(|s| sinr_to_pdr(*s, &ch_cfg)).collect();

        let mut counts = vec![0usize; m];
        for &c in &subchannels {
            counts[c] += 1;
        }
        let collision: Vec<bool> = subchannels.iter().map(|&c| counts[c] > 1).collect();

        let m0 = m0_count(n);
        let team_m0_pdr = pdr[..m0].iter().sum::<f64>() / m0 as f64;
        let rewards: Vec<f64> = (0..n)
            .map(|i| match self.vehicles[i].class {
                TrafficClass::M0 => reward_m0(pdr[i], sinr_db[i], team_m0_pdr),
                TrafficClass::M1 => reward_m1(sinr_db[i], team_m0_pdr),
            })
            .collect();

        // EMA: measured SINR on the used subchannel; elsewhere a sensed proxy,
        // own signal over interference heard at the vehicle's own position.
        let decay = ch_cfg.ema_decay;
        for i in 0..n {
            let own_signal = powers_mw[i] * signal_gain[i];
            for c in 0..m {
                let sample_db = if c == subchannels[i] {
                    sinr_db[i]
                } else {
                    let heard: f64 = (0..n)
                        .filter(|&k| k != i && subchannels[k] == c)
                        .map(|k| powers_mw[k] * gains.get(k, i))
                        .sum();
                    linear_to_db(own_signal / (heard + noise_mw))
                };
                let sample_db = sample_db.clamp(EMA_CLIP_DB.0, EMA_CLIP_DB.1);
                let ema = &mut self.vehicles[i].ema_sinr_db[c];
                *ema = decay * *ema + (1.0 - decay) * sample_db;
            }
        }

        let horizon = self.cfg.queue_horizon_ttis;
        for i in 0..n {
            let v = &mut self.vehicles[i];
            match v.class {
                TrafficClass::M0 => {
                    if pdr[i] >= self.cfg.delivery_threshold {
                        self.since_delivery[i] = 0;
                    } else {
                        self.since_delivery[i] += 1;
                    }
                    v.queue_delay_norm =
                        (self.since_delivery[i] as f64 / horizon as f64).min(1.0);
                }
                TrafficClass::M1 => v.queue_delay_norm = 1.0,
            }
        }

        // Metrics.
        let pool = self.cfg.pool;
        let mut tti_sum = 0.0;
        for i in 0..n {
            match self.vehicles[i].class {
                TrafficClass::M0 => {
                    self.acc.m0_pdr_sum += pdr[i];
                    self.acc.m0_sinr_db_sum += sinr_db[i];
                    self.acc.m0_samples += 1;
                    self.acc.m0_collisions += collision[i] as u64;
                    let within = (0..n).any(|k| {
                        k != i
                            && subchannels[k] == subchannels[i]
                            && pool.slice(self.vehicles[k].class).contains(&subchannels[i])
                    });
                    self.acc.m0_within_pool += within as u64;
                    tti_sum += pdr[i];
                }
                TrafficClass::M1 => {
                    self.acc.m1_pdr_sum += pdr[i];
                    self.acc.m1_samples += 1;
                }
            }
        }
        self.acc.m0_tti_means.push(tti_sum / m0 as f64);

        if let Some(trace) = self.trace.as_mut() {
            for i in 0..n {
                trace.push(TraceRow {
                    tti: self.tti,
                    id: i,
                    subchannel: subchannels[i],
                    power_dbm: actions[i].power_dbm(),
                    sinr_db: sinr_db[i],
                    pdr: pdr[i],
                    collision: collision[i],
                });
            }
        }

        self.occupancy = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.tti += 1;

        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            rewards,
            per_vehicle_pdr: pdr,
            per_vehicle_sinr_db: sinr_db,
            collision_flags: collision,
        })
    }

    fn slices_respected(&self) -> bool {
        self.vehicles
            .iter()
            .all(|v| self.cfg.pool.slice(v.class).contains(&v.chosen_subchannel))
    }

    pub fn observation(&self, i: usize) -> Observation {
        let v = &self.vehicles[i];
        let n = self.cfg.n;
        let mob = &self.cfg.mobility;
        let mut o = Vec::with_capacity(self.cfg.obs_dim());
        o.push(v.position_m / mob.track_length_m);
        o.push(v.speed_mps / mob.idm.v0_mps);
        o.push(v.lane as f64 / (mob.lanes.max(2) - 1) as f64);
        o.extend(v.ema_sinr_db.iter().map(|e| e / EMA_OBS_SCALE_DB));
        o.push(if n > 1 {
            v.id as f64 / (n - 1) as f64
        } else {
            0.0
        });
        o.push(v.class.bit());
        o.push(v.queue_delay_norm);
        Observation(o)
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.cfg.n).map(|i| self.observation(i)).collect()
    }

    pub fn global_state(&self) -> GlobalState {
        let mut s = Vec::with_capacity(self.cfg.state_dim());
        for i in 0..self.cfg.n {
            s.extend_from_slice(self.observation(i).as_slice());
        }
        s.extend_from_slice(&self.occupancy);
        GlobalState(s)
    }

    pub fn finalize_metrics(&self, episode_index: u64) -> Result<EpisodeMetrics> {
        let acc = &self.acc;
        if acc.m0_tti_means.is_empty() {
            return Err(Error::NoSteps);
        }
        let m0 = acc.m0_samples.max(1) as f64;
        Ok(EpisodeMetrics {
            m0_pdr_mean: acc.m0_pdr_sum / m0,
            m1_pdr_mean: if acc.m1_samples > 0 {
                acc.m1_pdr_sum / acc.m1_samples as f64
            } else {
                0.0
            },
            m0_collision_rate: acc.m0_collisions as f64 / m0,
            m0_within_pool_collision_rate: acc.m0_within_pool as f64 / m0,
            m0_sinr_mean_db: acc.m0_sinr_db_sum / m0,
            m0_pdr_p05_intra: nearest_rank_percentile(&acc.m0_tti_means, 0.05)
                .expect("nonempty series"),
            episode_index,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_m0_examples() {
        assert!((reward_m0(1.0, 20.0, 1.0) - 1.8).abs() < 1e-12);
        assert_eq!(reward_m0(0.0, -10.0, 0.0), 0.0);
        assert!((reward_m0(0.5, 10.0, 0.5) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn reward_m1_examples() {
        assert!((reward_m1(20.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((reward_m1(0.0, 0.0) + 0.3).abs() < 1e-12);
        assert!(reward_m1(10.0, 0.5).abs() < 1e-12);
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(nearest_rank_percentile(&[1.0; 100], 0.05), Some(1.0));
        let alt: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert_eq!(nearest_rank_percentile(&alt, 0.05), Some(0.0));
        let ramp: Vec<f64> = (0..100).rev().map(|i| i as f64).collect();
        assert_eq!(nearest_rank_percentile(&ramp, 0.05), Some(4.0));
        assert_eq!(nearest_rank_percentile(&[], 0.05), None);
        assert_eq!(nearest_rank_percentile(&[3.0], 0.05), Some(3.0));
    }

    #[test]
    fn reset_dimensions() {
        let cfg = EnvConfig::new(4, PoolLayout::shared(5).unwrap());
        let (_, r) = Env::reset(cfg, 1).unwrap();
        assert_eq!(r.observations.len(), 4);
        assert!(r.observations.iter().all(|o| o.len() == 11));
        assert_eq!(r.global_state.len(), 49);
    }

    #[test]
    fn reset_rejects_bad_config() {
        let mut cfg = EnvConfig::new(4, PoolLayout::shared(5).unwrap());
        cfg.episode_len_ttis = 0;
        assert!(matches!(Env::reset(cfg, 1), Err(Error::InvalidConfig(_))));
        let mut cfg = EnvConfig::new(0, PoolLayout::shared(5).unwrap());
        cfg.n = 0;
        assert!(Env::reset(cfg, 1).is_err());
    }

    #[test]
    fn finalize_before_steps_is_an_error() {
        let cfg = EnvConfig::new(2, PoolLayout::shared(5).unwrap());
        let (env, _) = Env::reset(cfg, 1).unwrap();
        assert!(matches!(env.finalize_metrics(0), Err(Error::NoSteps)));
    }

    #[test]
    fn out_of_slice_actions_are_masked() {
        let cfg = EnvConfig::new(4, PoolLayout::separated(5, 2).unwrap());
        let (mut env, _) = Env::reset(cfg, 3).unwrap();
        let acts = JointAction(vec![
            Action { subchannel: 4, power_index: 4 },
            Action { subchannel: 0, power_index: 9 },
            Action { subchannel: 0, power_index: 4 },
            Action { subchannel: 3, power_index: 4 },
        ]);
        env.step(&acts).unwrap();
        assert_eq!(env.masked_actions(), 3);
        let v = env.vehicles();
        assert_eq!(v[0].chosen_subchannel, 1);
        assert_eq!(v[2].chosen_subchannel, 2);
        assert_eq!(v[1].chosen_power_dbm, 23.0);
        for veh in v {
            assert!(cfg.pool.slice(veh.class).contains(&veh.chosen_subchannel));
        }
    }

    #[test]
    fn wrong_action_length_is_rejected() {
        let cfg = EnvConfig::new(3, PoolLayout::shared(5).unwrap());
        let (mut env, _) = Env::reset(cfg, 3).unwrap();
        let r = env.step(&JointAction(vec![Action { subchannel: 0, power_index: 0 }]));
        assert!(matches!(r, Err(Error::ShapeMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn single_vehicle_episode_runs() {
        let cfg = EnvConfig::new(1, PoolLayout::shared(5).unwrap());
        let (mut env, r) = Env::reset(cfg, 3).unwrap();
        assert_eq!(r.observations[0].as_slice()[3 + 5], 0.0);
        let s = env
            .step(&JointAction(vec![Action { subchannel: 2, power_index: 4 }]))
            .unwrap();
        assert!(!s.collision_flags[0]);
        assert!(s.per_vehicle_sinr_db[0].is_finite());
        let m = env.finalize_metrics(0).unwrap();
        assert_eq!(m.m1_pdr_mean, 0.0);
    }
}
