//! Phase presets, single-run execution and the phase driver.

pub mod config;
pub mod ledger;
pub mod report;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    classify_regime, nash_floor, pigeonhole_min_colliding_fraction, rho_pool, within_pool_ceiling,
};
use crate::error::{Error, Result};
use crate::marl::{checkpoint, evaluate, train, ActorMode, PolicyBundle};
use crate::types::{m0_count, Partition, PoolLayout};

pub use config::{config_digest, RunConfig};
pub use ledger::{append_entries, ledger_csv, read_ledger, LedgerEntry, SCHEMA_VERSION};
pub use report::{report, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Parse(format!("unknown scale `{other}` (expected desk or full)"))),
        }
    }

    pub fn episodes(self) -> u64 {
        match self {
            Scale::Desk => 1000,
            Scale::Full => 3000,
        }
    }

    pub fn eval_episodes(self) -> u64 {
        match self {
            Scale::Desk => 50,
            Scale::Full => 100,
        }
    }

    pub fn seeds(self) -> Vec<u64> {
        match self {
            Scale::Desk => vec![0, 1, 2],
            Scale::Full => vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseName {
    A,
    B,
    C,
    D,
}

impl PhaseName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(PhaseName::A),
            "B" | "b" => Ok(PhaseName::B),
            "C" | "c" => Ok(PhaseName::C),
            "D" | "d" => Ok(PhaseName::D),
            other => Err(Error::Parse(format!("unknown phase `{other}` (expected A, B, C or D)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::A => "A",
            PhaseName::B => "B",
            PhaseName::C => "C",
            PhaseName::D => "D",
        }
    }
}

/// One cell of a phase's configuration matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSpec {
    pub phase: &'static str,
    pub n: usize,
    pub pool: PoolLayout,
    pub mode: ActorMode,
}

impl RunSpec {
    pub fn new(phase: &'static str, n: usize, pool: PoolLayout, mode: ActorMode) -> Self {
        Self { phase, n, pool, mode }
    }

    pub fn run_id(&self, seed: u64, episodes: u64) -> String {
        let pool = match self.pool.m0_pool() {
            Some(p) => format!("-p{p}"),
            None => String::new(),
        };
        format!(
            "{}-n{}-m{}{}-{}-s{}-e{}",
            self.phase,
            self.n,
            self.pool.m(),
            pool,
            self.mode.tag(),
            seed,
            episodes
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePreset {
    pub name: PhaseName,
    pub runs: Vec<RunSpec>,
    pub episodes: u64,
    pub eval_episodes: u64,
    pub seeds: Vec<u64>,
}

pub const PHASE_A_N: [usize; 6] = [2, 3, 4, 5, 7, 10];
pub const PHASE_B_M: [usize; 3] = [3, 7, 10];
pub const PHASE_C_N: [usize; 3] = [4, 7, 10];
pub const PHASE_D_N: [usize; 2] = [4, 10];
pub const BASELINE_M: usize = 5;
pub const SEPARATED_M0_POOL: usize = 2;

fn shared(m: usize) -> PoolLayout {
    PoolLayout::shared(m).expect("preset pool sizes are valid")
}

fn separated() -> PoolLayout {
    PoolLayout::separated(BASELINE_M, SEPARATED_M0_POOL).expect("preset pool sizes are valid")
}

pub fn preset(name: PhaseName, scale: Scale) -> PhasePreset {
    let p = name.as_str();
    let runs = match name {
        PhaseName::A => PHASE_A_N
            .iter()
            .map(|&n| RunSpec::new(p, n, shared(BASELINE_M), ActorMode::Mode0a))
            .collect(),
        PhaseName::B => PHASE_B_M
            .iter()
            .map(|&m| RunSpec::new(p, 4, shared(m), ActorMode::Mode0a))
            .collect(),
        PhaseName::C => PHASE_C_N
            .iter()
            .map(|&n| RunSpec::new(p, n, separated(), ActorMode::Mode0a))
            .collect(),
        PhaseName::D => PHASE_D_N
            .iter()
            .map(|&n| RunSpec::new(p, n, separated(), ActorMode::Mode0c))
            .collect(),
    };
    PhasePreset {
        name,
        runs,
        episodes: scale.episodes(),
        eval_episodes: scale.eval_episodes(),
        seeds: scale.seeds(),
    }
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    config: &'a RunConfig,
    spec: &'a RunSpec,
    seed: u64,
    episodes: u64,
    eval_episodes: u64,
}

pub fn run_digest(cfg: &RunConfig, spec: &RunSpec, seed: u64, episodes: u64, eval_episodes: u64) -> String {
    config_digest(&ResolvedRun {
        config: cfg,
        spec,
        seed,
        episodes,
        eval_episodes,
    })
}

/// Trains one configuration for one seed and evaluates the result.
pub fn run_single(
    spec: &RunSpec,
    cfg: &RunConfig,
    seed: u64,
    episodes: u64,
    eval_episodes: u64,
) -> Result<(LedgerEntry, PolicyBundle)> {
    let start = Instant::now();
    let env = cfg.env(spec.n, spec.pool);
    let outcome = train(env, spec.mode, &cfg.train(), seed, episodes)?;
    let metrics = evaluate(&outcome.bundle, env, eval_episodes, seed)?;
    let entry = ledger_entry(spec, cfg, seed, episodes, eval_episodes, metrics, start.elapsed().as_secs_f64())?;
    Ok((entry, outcome.bundle))
}

pub fn ledger_entry(
    spec: &RunSpec,
    cfg: &RunConfig,
    seed: u64,
    episodes: u64,
    eval_episodes: u64,
    metrics: crate::types::EpisodeMetrics,
    wall_time_s: f64,
) -> Result<LedgerEntry> {
    let m0 = m0_count(spec.n);
    let m = spec.pool.m();
    let (ceiling, rho, regime, pool_size) = match spec.pool.partition() {
        Partition::Shared => (None, None, None, m),
        Partition::Separated { m0: p } => {
            let rho = rho_pool(m0, p)?;
            (
                Some(within_pool_ceiling(p, m0)?),
                Some(rho),
                Some(classify_regime(rho, cfg.rho_full).as_str().to_string()),
                p,
            )
        }
    };
    Ok(LedgerEntry {
        schema_version: SCHEMA_VERSION,
        run_id: spec.run_id(seed, episodes),
        phase: spec.phase.to_string(),
        n: spec.n,
        m,
        m_m0: spec.pool.m0_pool(),
        mode: spec.mode.tag().to_string(),
        seed,
        episodes,
        eval_episodes,
        metrics,
        wall_time_s,
        config_digest: run_digest(cfg, spec, seed, episodes, eval_episodes),
        m0_count: m0,
        analytic_nash_floor: nash_floor(m, spec.n)?,
        analytic_within_pool_ceiling: ceiling,
        analytic_pigeonhole_min: pigeonhole_min_colliding_fraction(m0, pool_size),
        rho_pool: rho,
        regime,
    })
}

pub const LEDGER_FILE: &str = "ledger.json";

/// Runs every configuration and seed of a preset, writing checkpoints to
/// `out_dir/checkpoints` and appending to `out_dir/ledger.json`.
///
/// Nothing is trained if any of the preset's run ids is already recorded.
pub fn run_phase(
    preset: &PhasePreset,
    cfg: &RunConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&LedgerEntry),
) -> Result<Vec<LedgerEntry>> {
    cfg.validate()?;
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let ledger_path = out_dir.join(LEDGER_FILE);
    let existing = read_ledger(&ledger_path)?;
    for spec in &preset.runs {
        for &seed in &preset.seeds {
            let id = spec.run_id(seed, preset.episodes);
            if existing.iter().any(|e| e.run_id == id) {
                return Err(Error::DuplicateRun(id));
            }
        }
    }
    let mut out = Vec::new();
    for spec in &preset.runs {
        for &seed in &preset.seeds {
            let (entry, bundle) = run_single(spec, cfg, seed, preset.episodes, preset.eval_episodes)?;
            let ckpt = ckpt_dir.join(format!("{}.ckpt", entry.run_id));
            checkpoint::save(&ckpt, &bundle, &cfg.train())?;
            append_entries(&ledger_path, std::slice::from_ref(&entry))?;
            progress(&entry);
            out.push(entry);
        }
    }
    Ok(out)
}

/// Median of a nonempty slice; the mean of the middle pair for even length.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}
