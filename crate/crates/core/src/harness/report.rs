//! PDR deltas against the shared-pool N = 4 baseline and Pareto status.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ledger::LedgerEntry;
use super::median;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub phase: String,
    pub n: usize,
    pub m: usize,
    pub m_m0: Option<usize>,
    pub mode: String,
    pub seeds: usize,
    pub m0_pdr: f64,
    pub m1_pdr: f64,
    pub delta_m0: f64,
    pub delta_m1: f64,
    pub m0_collision: f64,
    pub m0_within_pool_collision: f64,
    pub m0_pdr_p05: f64,
    pub status: String,
}

pub const BASELINE_LABEL: &str = "A N=4 M=5 shared 0a";

type Key = (String, usize, usize, Option<usize>, String);

fn key(e: &LedgerEntry) -> Key {
    (e.phase.clone(), e.n, e.m, e.m_m0, e.mode.clone())
}

fn label(k: &Key) -> String {
    let pool = match k.3 {
        Some(p) => format!("M_m0={p}"),
        None => "shared".to_string(),
    };
    format!("{} N={} M={} {} {}", k.0, k.1, k.2, pool, k.4)
}

pub fn pareto_status(delta_m0: f64, delta_m1: f64) -> &'static str {
    match (delta_m0 > 0.0, delta_m1 > 0.0) {
        (true, true) => "strict Pareto",
        (true, false) => "M0-prioritising trade",
        (false, true) => "M1-prioritising trade",
        (false, false) => "dominated",
    }
}

/// Per-configuration medians across seeds, with deltas relative to the
/// Phase-A N = 4, M = 5 shared-pool baseline.
pub fn report(entries: &[LedgerEntry]) -> Result<Vec<ReportRow>> {
    if entries.is_empty() {
        return Err(Error::MissingBaseline(format!("{BASELINE_LABEL} (ledger is empty)")));
    }
    let mut groups: BTreeMap<Key, Vec<&LedgerEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(key(e)).or_default().push(e);
    }
    let med = |g: &[&LedgerEntry], f: fn(&LedgerEntry) -> f64| {
        median(&g.iter().map(|e| f(e)).collect::<Vec<_>>()).expect("nonempty group")
    };
    let base_key: Key = ("A".into(), 4, 5, None, "0a".into());
    let base = groups
        .get(&base_key)
        .ok_or_else(|| Error::MissingBaseline(BASELINE_LABEL.into()))?;
    let (b0, b1) = (
        med(base, |e| e.metrics.m0_pdr_mean),
        med(base, |e| e.metrics.m1_pdr_mean),
    );
    let mut rows = Vec::new();
    for (k, g) in &groups {
        let m0_pdr = med(g, |e| e.metrics.m0_pdr_mean);
        let m1_pdr = med(g, |e| e.metrics.m1_pdr_mean);
        let (d0, d1) = (m0_pdr - b0, m1_pdr - b1);
        let status = if *k == base_key { "baseline" } else { pareto_status(d0, d1) };
        rows.push(ReportRow {
            label: label(k),
            phase: k.0.clone(),
            n: k.1,
            m: k.2,
            m_m0: k.3,
            mode: k.4.clone(),
            seeds: g.len(),
            m0_pdr,
            m1_pdr,
            delta_m0: d0,
            delta_m1: d1,
            m0_collision: med(g, |e| e.metrics.m0_collision_rate),
            m0_within_pool_collision: med(g, |e| e.metrics.m0_within_pool_collision_rate),
            m0_pdr_p05: med(g, |e| e.metrics.m0_pdr_p05_intra),
            status: status.to_string(),
        });
    }
    Ok(rows)
}

pub const REPORT_CSV_HEADER: &str = "label,phase,N,M,M_m0,mode,seeds,m0_pdr,m1_pdr,delta_m0,delta_m1,\
m0_collision,m0_within_pool_collision,m0_pdr_p05,status";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.phase,
            r.n,
            r.m,
            r.m_m0.map(|p| p.to_string()).unwrap_or_default(),
            r.mode,
            r.seeds,
            r.m0_pdr,
            r.m1_pdr,
            r.delta_m0,
            r.delta_m1,
            r.m0_collision,
            r.m0_within_pool_collision,
            r.m0_pdr_p05,
            r.status
        ));
    }
    s
}

pub fn report_table(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:<28} {:>5} {:>7} {:>7} {:>8} {:>8} {:>7} {:>7}  {}\n",
        "configuration", "seeds", "M0 PDR", "M1 PDR", "dM0", "dM1", "M0 col", "p05", "status"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>5} {:>7.3} {:>7.3} {:>+8.3} {:>+8.3} {:>7.3} {:>7.3}  {}\n",
            r.label, r.seeds, r.m0_pdr, r.m1_pdr, r.delta_m0, r.delta_m1, r.m0_collision, r.m0_pdr_p05, r.status
        ));
    }
    s
}
