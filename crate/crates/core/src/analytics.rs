//! Closed-form collision baselines and their Monte Carlo oracle.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Reporting default for the anti-helpful threshold on `rho_pool`.
pub const DEFAULT_RHO_FULL: f64 = 2.0;

/// Largest contender count solved by exact enumeration in the pigeonhole bound.
pub const PIGEONHOLE_EXACT_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    Deterministic,
    Probabilistic,
    AntiHelpful,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Deterministic => "deterministic",
            RegimeLabel::Probabilistic => "probabilistic",
            RegimeLabel::AntiHelpful => "anti-helpful",
        }
    }
}

/// Probability that a uniformly random subchannel pick among `m` collides
/// with at least one of `n - 1` other independent uniform picks.
pub fn nash_floor(m: usize, n: usize) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidConfig(format!(
            "nash_floor needs M >= 1 and N >= 1, got M={m}, N={n}"
        )));
    }
    cross_class_residual(m, n - 1)
}

pub fn within_pool_ceiling(m_m0: usize, m0: usize) -> Result<f64> {
    nash_floor(m_m0, m0)
}

/// Collision probability against `n_other` uncoordinated uniform contenders.
pub fn cross_class_residual(m: usize, n_other: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidConfig("pool size must be >= 1".into()));
    }
    let keep = (m as f64 - 1.0) / m as f64;
    Ok(1.0 - keep.powi(n_other as i32))
}

fn colliding(occupancy: &[usize]) -> usize {
    occupancy.iter().filter(|&&k| k >= 2).sum()
}

/// Minimum over occupancy vectors (multisets of per-channel loads summing to
/// `m0` over at most `m_m0` channels) of the colliding vehicle count.
fn pigeonhole_exact(m0: usize, m_m0: usize) -> usize {
    fn go(left: usize, channels: usize, max_part: usize, acc: &mut Vec<usize>, best: &mut usize) {
        if left == 0 {
            *best = (*best).min(colliding(acc));
            return;
        }
        if channels == 0 {
            return;
        }
        for part in (1..=max_part.min(left)).rev() {
            acc.push(part);
            go(left - part, channels - 1, part, acc, best);
            acc.pop();
        }
    }
    let mut best = usize::MAX;
    go(m0, m_m0, m0, &mut Vec::new(), &mut best);
    best
}

/// Smallest achievable fraction of `m0` vehicles that share a subchannel
/// when packed into `m_m0` subchannels.
///
/// Beyond capacity the optimum keeps `m_m0 - 1` singletons and stacks the
/// rest on one channel.
pub fn pigeonhole_min_colliding_fraction(m0: usize, m_m0: usize) -> f64 {
    if m0 == 0 || m0 <= m_m0 {
        return 0.0;
    }
    if m_m0 == 0 {
        return 1.0;
    }
    let colliding = if m0 <= PIGEONHOLE_EXACT_MAX {
        pigeonhole_exact(m0, m_m0)
    } else {
        m0 - (m_m0 - 1)
    };
    colliding as f64 / m0 as f64
}

pub fn rho_pool(m0: usize, m_m0: usize) -> Result<f64> {
    if m_m0 == 0 {
        return Err(Error::InvalidConfig("M0 pool size must be >= 1".into()));
    }
    Ok(m0 as f64 / m_m0 as f64)
}

pub fn classify_regime(rho: f64, rho_full: f64) -> RegimeLabel {
    if rho <= 1.0 {
        RegimeLabel::Deterministic
    } else if rho < rho_full {
        RegimeLabel::Probabilistic
    } else {
        RegimeLabel::AntiHelpful
    }
}

/// First `rho` at which a separated configuration's M0 PDR drops below the
/// unseparated baseline, interpolated linearly between measured points.
pub fn empirical_rho_full(points: &[(f64, f64)], baseline_pdr: f64) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prev: Option<(f64, f64)> = None;
    for (rho, pdr) in pts {
        if pdr < baseline_pdr {
            return Some(match prev {
                Some((r0, p0)) if p0 > pdr => r0 + (rho - r0) * (p0 - baseline_pdr) / (p0 - pdr),
                _ => rho,
            });
        }
        prev = Some((rho, pdr));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
}

const MC_CHUNKS: u64 = 64;

/// Fraction of (vehicle, trial) pairs that share their uniformly drawn
/// subchannel with another of the `n` vehicles.
///
/// Trials are split into a fixed number of chunks with their own streams, so
/// the estimate does not depend on the thread count.
pub fn monte_carlo_random_floor(m: usize, n: usize, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    if m == 0 || n == 0 || trials == 0 {
        return Err(Error::InvalidConfig(format!(
            "monte carlo floor needs M, N, trials >= 1, got {m}, {n}, {trials}"
        )));
    }
    let per_chunk = trials.div_ceil(MC_CHUNKS);
    let (sum, sum_sq) = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let start = c * per_chunk;
            let count = per_chunk.min(trials.saturating_sub(start));
            let mut rng = stream_rng(seed, Stream::MonteCarlo, c);
            let mut picks = vec![0usize; n];
            let mut load = vec![0usize; m];
            let (mut s, mut s2) = (0u64, 0u64);
            for _ in 0..count {
                load.iter_mut().for_each(|l| *l = 0);
                for p in picks.iter_mut() {
                    *p = rng.random_range(0..m);
                    load[*p] += 1;
                }
                let hit = picks.iter().filter(|&&p| load[p] >= 2).count() as u64;
                s += hit;
                s2 += hit * hit;
            }
            (s, s2)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = trials as f64;
    let nf = n as f64;
    let mean = sum as f64 / (t * nf);
    let second = sum_sq as f64 / (t * nf * nf);
    let var = (second - mean * mean).max(0.0);
    Ok(MonteCarloEstimate {
        mean,
        std_err: (var / t).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_examples() {
        assert!((nash_floor(5, 2).unwrap() - 0.2).abs() < 1e-12);
        assert!((nash_floor(5, 10).unwrap() - 0.866).abs() < 5e-4);
        assert_eq!(nash_floor(7, 1).unwrap(), 0.0);
        assert!(nash_floor(0, 3).is_err());
    }

    #[test]
    fn ceiling_and_residual_examples() {
        assert!((within_pool_ceiling(2, 3).unwrap() - 0.75).abs() < 1e-12);
        assert!((within_pool_ceiling(2, 2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(within_pool_ceiling(2, 1).unwrap(), 0.0);
        assert!((cross_class_residual(5, 2).unwrap() - 0.36).abs() < 1e-12);
        assert_eq!(cross_class_residual(5, 0).unwrap(), 0.0);
        assert!((cross_class_residual(5, 3).unwrap() - 0.488).abs() < 1e-12);
    }

    #[test]
    fn regimes() {
        assert!((rho_pool(2, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((rho_pool(5, 2).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(rho_pool(0, 2).unwrap(), 0.0);
        assert!(rho_pool(1, 0).is_err());
        assert_eq!(classify_regime(1.0, 2.0), RegimeLabel::Deterministic);
        assert_eq!(classify_regime(1.5, 2.0), RegimeLabel::Probabilistic);
        assert_eq!(classify_regime(2.5, 2.0), RegimeLabel::AntiHelpful);
        assert_eq!(classify_regime(2.0, 2.0), RegimeLabel::AntiHelpful);
    }

    #[test]
    fn crossover_interpolates() {
        let pts = [(1.0, 0.99), (1.5, 0.75), (2.5, 0.45)];
        let r = empirical_rho_full(&pts, 0.6).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert_eq!(empirical_rho_full(&pts, 0.2), None);
    }

    #[test]
    fn forced_collision_monte_carlo() {
        let e = monte_carlo_random_floor(1, 2, 1000, 3).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_err, 0.0);
        assert_eq!(monte_carlo_random_floor(5, 1, 1000, 3).unwrap().mean, 0.0);
    }
}
