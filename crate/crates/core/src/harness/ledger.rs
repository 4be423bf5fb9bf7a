//! The results ledger.
//!
//! A ledger file is a JSON array with one entry object per line:
//!
//! ```text
//! [
//! {"schema_version":1,"run_id":"A-n4-m5-0a-s0-e1000",...},
//! {"schema_version":1,"run_id":"D-n4-m5-p2-0c-s0-e1000",...}
//! ]
//! ```
//!
//! Appending rewrites the file through a temporary sibling and a rename, and
//! leaves every earlier line byte-identical.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EpisodeMetrics;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub schema_version: u32,
    pub run_id: String,
    pub phase: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "M_m0")]
    pub m_m0: Option<usize>,
    pub mode: String,
    pub seed: u64,
    pub episodes: u64,
    pub eval_episodes: u64,
    pub metrics: EpisodeMetrics,
    pub wall_time_s: f64,
    pub config_digest: String,
    pub m0_count: usize,
    /// `nash_floor(M, N)`.
    pub analytic_nash_floor: f64,
    /// `within_pool_ceiling(M_m0, m0_count)` under separation.
    pub analytic_within_pool_ceiling: Option<f64>,
    /// Pigeonhole minimum colliding fraction for the M0 pool.
    pub analytic_pigeonhole_min: f64,
    pub rho_pool: Option<f64>,
    pub regime: Option<String>,
}

impl LedgerEntry {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "run {}: unsupported schema_version {}",
                self.run_id, self.schema_version
            )));
        }
        let m = &self.metrics;
        for (name, v) in [
            ("m0_pdr_mean", m.m0_pdr_mean),
            ("m1_pdr_mean", m.m1_pdr_mean),
            ("m0_collision_rate", m.m0_collision_rate),
            ("m0_within_pool_collision_rate", m.m0_within_pool_collision_rate),
            ("m0_pdr_p05_intra", m.m0_pdr_p05_intra),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse(format!("run {}: {name} = {v} outside [0, 1]", self.run_id)));
            }
        }
        Ok(())
    }
}

pub fn parse_ledger(text: &str) -> Result<Vec<LedgerEntry>> {
    let entries: Vec<LedgerEntry> =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("ledger: {e}")))?;
    let mut seen = HashSet::new();
    for e in &entries {
        e.validate()?;
        if !seen.insert(e.run_id.as_str()) {
            return Err(Error::DuplicateRun(e.run_id.clone()));
        }
    }
    Ok(entries)
}

pub fn format_ledger(entries: &[LedgerEntry]) -> String {
    let mut s = String::from("[\n");
    for (k, e) in entries.iter().enumerate() {
        s.push_str(&serde_json::to_string(e).expect("entry serializes"));
        if k + 1 < entries.len() {
            s.push(',');
        }
        s.push('\n');
    }
    s.push_str("]\n");
    s
}

/// Reads a ledger; a missing file is an empty ledger.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_ledger(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Appends `new` entries, refusing any run id already present.
pub fn append_entries(path: &Path, new: &[LedgerEntry]) -> Result<()> {
    let mut all = read_ledger(path)?;
    let existing: HashSet<String> = all.iter().map(|e| e.run_id.clone()).collect();
    let mut fresh = HashSet::new();
    for e in new {
        e.validate()?;
        if existing.contains(&e.run_id) || !fresh.insert(e.run_id.clone()) {
            return Err(Error::DuplicateRun(e.run_id.clone()));
        }
    }
    all.extend_from_slice(new);
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(format_ledger(&all).as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub const LEDGER_CSV_HEADER: &str = "run_id,phase,N,M,M_m0,mode,seed,episodes,eval_episodes,\
m0_pdr_mean,m1_pdr_mean,m0_collision_rate,m0_within_pool_collision_rate,m0_sinr_mean_db,\
m0_pdr_p05_intra,wall_time_s,config_digest,m0_count,analytic_nash_floor,\
analytic_within_pool_ceiling,analytic_pigeonhole_min,rho_pool,regime";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// CSV mirror of the ledger; absent optional values are empty cells.
pub fn ledger_csv(entries: &[LedgerEntry]) -> String {
    let mut s = String::from(LEDGER_CSV_HEADER);
    s.push('\n');
    for e in entries {
        let m = &e.metrics;
        let row = [
            e.run_id.clone(),
            e.phase.clone(),
            e.n.to_string(),
            e.m.to_string(),
            opt(&e.m_m0),
            e.mode.clone(),
            e.seed.to_string(),
            e.episodes.to_string(),
            e.eval_episodes.to_string(),
            m.m0_pdr_mean.to_string(),
            m.m1_pdr_mean.to_string(),
            m.m0_collision_rate.to_string(),
            m.m0_within_pool_collision_rate.to_string(),
            m.m0_sinr_mean_db.to_string(),
            m.m0_pdr_p05_intra.to_string(),
            e.wall_time_s.to_string(),
            e.config_digest.clone(),
            e.m0_count.to_string(),
            e.analytic_nash_floor.to_string(),
            opt(&e.analytic_within_pool_ceiling),
            e.analytic_pigeonhole_min.to_string(),
            opt(&e.rho_pool),
            opt(&e.regime),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
