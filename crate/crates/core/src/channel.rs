//! Radio layer: LOS path loss, log-normal shadowing on the intended link,
//! Rayleigh power fading, co-channel SINR and the SINR to PDR mapping.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances are clamped to this before entering the path-loss law.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub fc_ghz: f64,
    pub shadow_sigma_db: f64,
    pub noise_dbm: f64,
    /// SINR (dB) at which PDR reaches 0.
    pub pdr_anchor_lo_db: f64,
    /// SINR (dB) at which PDR reaches 1.
    pub pdr_anchor_hi_db: f64,
    pub comm_range_m: f64,
    /// EMA weight kept from the previous estimate.
    pub ema_decay: f64,
    /// Disabled shadowing forces X = 0.
    pub shadowing: bool,
    /// Disabled fading forces F = 1.
    pub fading: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            fc_ghz: 5.9,
            shadow_sigma_db: 3.0,
            noise_dbm: -114.0,
            pdr_anchor_lo_db: 15.0,
            pdr_anchor_hi_db: 25.0,
            comm_range_m: 300.0,
            ema_decay: 0.9,
            shadowing: true,
            fading: true,
        }
    }
}

impl ChannelConfig {
    /// Shadowing and fading off: SINR becomes a function of geometry and actions.
    pub fn deterministic() -> Self {
        Self {
            shadowing: false,
            fading: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fc_ghz > 0.0) {
            return Err(Error::InvalidConfig("fc_ghz must be > 0".into()));
        }
        if !(self.pdr_anchor_lo_db < self.pdr_anchor_hi_db) {
            return Err(Error::InvalidConfig(
                "pdr_anchor_lo_db must be below pdr_anchor_hi_db".into(),
            ));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::InvalidConfig("shadow_sigma_db must be >= 0".into()));
        }
        if !(self.comm_range_m > 0.0) {
            return Err(Error::InvalidConfig("comm_range_m must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig("ema_decay must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `32.4 + 20 log10(fc_GHz) + 20 log10(d_m)` dB, with `d` clamped to 1 m.
pub fn path_loss_db(d_m: f64, fc_ghz: f64) -> f64 {
    path_loss_db_checked(d_m, fc_ghz).0
}

/// Like [`path_loss_db`], also reporting whether the distance was clamped.
pub fn path_loss_db_checked(d_m: f64, fc_ghz: f64) -> (f64, bool) {
    let clamped = !(d_m >= MIN_DISTANCE_M);
    let d = if clamped { MIN_DISTANCE_M } else { d_m };
    (32.4 + 20.0 * fc_ghz.log10() + 20.0 * d.log10(), clamped)
}

/// Dimensionless power gain of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGain(pub f64);

impl LinkGain {
    pub fn linear(self) -> f64 {
        self.0
    }
}

/// Unit-mean exponential draw (Rayleigh envelope, power domain).
pub fn sample_fading<R: Rng>(cfg: &ChannelConfig, rng: &mut R) -> f64 {
    if cfg.fading {
        let f: f64 = Exp1.sample(rng);
        // Exp1 can return exactly 0; keep gains strictly positive.
        f.max(f64::MIN_POSITIVE)
    } else {
        1.0
    }
}

/// Zero-mean Normal draw with `shadow_sigma_db` deviation, in dB.
pub fn sample_shadowing_db<R: Rng>(cfg: &ChannelConfig, rng: &mut R) -> f64 {
    if cfg.shadowing {
        let z: f64 = StandardNormal.sample(rng);
        z * cfg.shadow_sigma_db
    } else {
        0.0
    }
}

/// `10^(-(PL + X)/10) * F`. Shadowing `X` applies only on the intended path.
pub fn sample_link_gain<R: Rng>(
    path_loss_db: f64,
    intended: bool,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> LinkGain {
    let shadow = if intended {
        sample_shadowing_db(cfg, rng)
    } else {
        0.0
    };
    let fading = sample_fading(cfg, rng);
    LinkGain(10f64.powf(-(path_loss_db + shadow) / 10.0) * fading)
}

/// Square gain table, `gains[k * n + j]` is the interferer-path gain k to j.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    n: usize,
    gains: Vec<f64>,
}

impl GainTable {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            gains: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut t = Self::new(n);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "gain table must be square");
            for (j, g) in row.iter().enumerate() {
                t.set(k, j, *g);
            }
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.gains[tx * self.n + rx]
    }

    pub fn set(&mut self, tx: usize, rx: usize, g: f64) {
        self.gains[tx * self.n + rx] = g;
    }
}

/// Co-channel interference at `rx` on `subchannel`, excluding transmitter
/// `exclude` and the receiver's own transmission.
pub fn interference_mw(
    exclude: usize,
    rx: usize,
    subchannel: usize,
    subchannels: &[usize],
    powers_mw: &[f64],
    gains: &GainTable,
) -> f64 {
    subchannels
        .iter()
        .enumerate()
        .filter(|&(k, &ch)| k != exclude && k != rx && ch == subchannel)
        .map(|(k, _)| powers_mw[k] * gains.get(k, rx))
        .sum()
}

/// Linear SINR of the `tx -> rx` link given every vehicle's subchannel.
///
/// `signal_gain` is the intended-path gain (shadowing included).
/// Interferers use the table.
#[allow(clippy::too_many_arguments)]
pub fn sinr_linear(
    tx: usize,
    rx: usize,
    signal_gain: f64,
    subchannels: &[usize],
    powers_mw: &[f64],
    gains: &GainTable,
    noise_mw: f64,
) -> f64 {
    let interference = interference_mw(tx, rx, subchannels[tx], subchannels, powers_mw, gains);
    powers_mw[tx] * signal_gain / (interference + noise_mw)
}

/// Piecewise-linear PDR between the two anchors, clipped to `[0, 1]`.
pub fn sinr_to_pdr(sinr_db: f64, cfg: &ChannelConfig) -> f64 {
    let x = (sinr_db - cfg.pdr_anchor_lo_db) / (cfg.pdr_anchor_hi_db - cfg.pdr_anchor_lo_db);
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1.0, 5.9) - 47.817).abs() < 1e-3);
        assert!((path_loss_db(100.0, 5.9) - 87.817).abs() < 1e-3);
        let decade = path_loss_db(100.0, 5.9) - path_loss_db(10.0, 5.9);
        assert!((decade - 20.0).abs() < 1e-12);
    }

    #[test]
    fn path_loss_clamps_short_distances() {
        let (pl, clamped) = path_loss_db_checked(0.0, 5.9);
        assert!(clamped);
        assert_eq!(pl, path_loss_db(1.0, 5.9));
        assert!(!path_loss_db_checked(2.0, 5.9).1);
        assert!(path_loss_db_checked(-3.0, 5.9).1);
    }

    #[test]
    fn unshadowed_unfaded_gain_is_path_loss() {
        let cfg = ChannelConfig::deterministic();
        let pl = path_loss_db(250.0, cfg.fc_ghz);
        let g = sample_link_gain(pl, false, &cfg, &mut stream_rng(0, Stream::Channel, 0));
        assert_eq!(g.linear(), 10f64.powf(-pl / 10.0));
    }

    #[test]
    fn fading_has_unit_mean() {
        let cfg = ChannelConfig::default();
        let mut rng = stream_rng(11, Stream::Channel, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_fading(&cfg, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn shadowing_has_three_db_spread() {
        let cfg = ChannelConfig::default();
        let mut rng = stream_rng(12, Stream::Channel, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_shadowing_db(&cfg, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 3.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn sinr_without_interferers_is_snr() {
        let gains = GainTable::from_rows(&[vec![0.0, 1e-9], vec![1e-9, 0.0]]);
        let powers = [200.0, 200.0];
        let s = sinr_linear(0, 1, 1e-9, &[0, 1], &powers, &gains, 1e-11);
        assert_eq!(s, 200.0 * 1e-9 / 1e-11);
    }

    #[test]
    fn equal_interferer_gives_unit_sinr() {
        // tx 0 -> rx 1, interferer 2 lands at rx 1 with the same received power.
        let gains = GainTable::from_rows(&[
            vec![0.0, 2e-9, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 2e-9, 0.0],
        ]);
        let powers = [100.0, 1.0, 100.0];
        let s = sinr_linear(0, 1, 2e-9, &[3, 1, 3], &powers, &gains, 1e-30);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_vehicle_sinr_matches_explicit_sum() {
        // Hand-set table; every vehicle on subchannel 0.
        let rows = vec![
            vec![0.0, 3e-10, 5e-10],
            vec![4e-10, 0.0, 1e-10],
            vec![2e-10, 6e-10, 0.0],
        ];
        let gains = GainTable::from_rows(&rows);
        let powers = [10.0, 20.0, 40.0];
        let noise = 4e-12;
        let chans = [0, 0, 0];
        // tx 0 -> rx 2: interferer 1 only (rx itself excluded).
        let expect = 10.0 * 5e-10 / (20.0 * 1e-10 + noise);
        let got = sinr_linear(0, 2, 5e-10, &chans, &powers, &gains, noise);
        assert!((got - expect).abs() / expect < 1e-12);
        // Move vehicle 1 off-channel: pure SNR.
        let got = sinr_linear(0, 2, 5e-10, &[0, 1, 0], &powers, &gains, noise);
        assert!((got - 10.0 * 5e-10 / noise).abs() / got < 1e-12);
        // tx 1 -> rx 0 with interferer 2.
        let expect = 20.0 * 4e-10 / (40.0 * 2e-10 + noise);
        let got = sinr_linear(1, 0, 4e-10, &chans, &powers, &gains, noise);
        assert!((got - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn pdr_mapping_anchors() {
        let cfg = ChannelConfig::default();
        assert_eq!(sinr_to_pdr(-40.0, &cfg), 0.0);
        assert_eq!(sinr_to_pdr(60.0, &cfg), 1.0);
        let mid = 0.5 * (cfg.pdr_anchor_lo_db + cfg.pdr_anchor_hi_db);
        assert!((sinr_to_pdr(mid, &cfg) - 0.5).abs() < 1e-12);
        assert_eq!(sinr_to_pdr(f64::NEG_INFINITY, &cfg), 0.0);
    }

    proptest! {
        #[test]
        fn pdr_is_monotone_and_bounded(a in -60.0f64..80.0, b in -60.0f64..80.0) {
            let cfg = ChannelConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pl, ph) = (sinr_to_pdr(lo, &cfg), sinr_to_pdr(hi, &cfg));
            prop_assert!((0.0..=1.0).contains(&pl));
            prop_assert!(pl <= ph);
        }

        #[test]
        fn sinr_monotone_in_powers(
            g in proptest::collection::vec(1e-12f64..1e-6, 16),
            p in proptest::collection::vec(0.1f64..200.0, 4),
            chans in proptest::collection::vec(0usize..2, 4),
            bump in 1.0f64..10.0,
        ) {
            let gains = GainTable::from_rows(&g.chunks(4).map(|r| r.to_vec()).collect::<Vec<_>>());
            let noise = 1e-11;
            let base = sinr_linear(0, 1, gains.get(0, 1), &chans, &p, &gains, noise);
            let mut own = p.clone();
            own[0] *= bump;
            prop_assert!(sinr_linear(0, 1, gains.get(0, 1), &chans, &own, &gains, noise) >= base);
            for k in 2..4 {
                let mut other = p.clone();
                other[k] *= bump;
                prop_assert!(sinr_linear(0, 1, gains.get(0, 1), &chans, &other, &gains, noise) <= base);
            }
        }
    }
}
