//! Advisory subchannel planning and the mandatory-stop escalation protocol.
//!
//! Each vehicle is its own sub-zone. Sub-zones that are kinematically likely
//! to interact share an edge in a conflict graph, and a proper coloring of
//! that graph is a subchannel recommendation with spatial reuse.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mobility::MobilityConfig;
use crate::types::VehicleState;

pub const DEFAULT_HORIZON_S: f64 = 5.0;
pub const DEFAULT_THRESHOLD_M: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubZone {
    pub id: usize,
    pub member_vehicle_ids: Vec<usize>,
    pub centroid_m: f64,
}

/// Simple undirected graph over sub-zone ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl ConflictGraph {
    pub fn new(n: usize) -> Self {
        Self { n, edges: BTreeSet::new() }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Adds `{a, b}`. Self-loops and repeats are ignored; returns whether an
    /// edge was inserted.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        assert!(a < self.n && b < self.n, "edge ({a}, {b}) outside 0..{}", self.n);
        if a == b {
            return false;
        }
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }
}

/// Smallest centre-to-centre separation between two constant-velocity
/// vehicles over `[0, horizon_s]`.
pub fn min_predicted_separation(
    a: &VehicleState,
    b: &VehicleState,
    horizon_s: f64,
    cfg: &MobilityConfig,
) -> f64 {
    let l = cfg.track_length_m;
    let r0 = b.position_m - a.position_m;
    let r1 = r0 + (b.speed_mps - a.speed_mps) * horizon_s;
    let (lo, hi) = (r0.min(r1), r0.max(r1));
    let long = if (hi / l).floor() > (lo / l).floor() || lo.rem_euclid(l) == 0.0 {
        0.0
    } else {
        cfg.ring_distance(0.0, r0).min(cfg.ring_distance(0.0, r1))
    };
    let lat = (a.lane as f64 - b.lane as f64) * cfg.lane_width_m;
    long.hypot(lat)
}

/// One sub-zone per vehicle, with an edge wherever the predicted minimum
/// separation within `horizon_s` is below `threshold_m`, or the two share a
/// lane and are already closer than `threshold_m`.
pub fn build_conflict_graph(
    vehicles: &[VehicleState],
    horizon_s: f64,
    threshold_m: f64,
    cfg: &MobilityConfig,
) -> (Vec<SubZone>, ConflictGraph) {
    let zones = vehicles
        .iter()
        .enumerate()
        .map(|(k, v)| SubZone {
            id: k,
            member_vehicle_ids: vec![v.id],
            centroid_m: v.position_m,
        })
        .collect();
    let mut g = ConflictGraph::new(vehicles.len());
    for i in 0..vehicles.len() {
        for j in i + 1..vehicles.len() {
            let (a, b) = (&vehicles[i], &vehicles[j]);
            let same_lane_close =
                a.lane == b.lane && cfg.ring_distance(a.position_m, b.position_m) < threshold_m;
            if same_lane_close || min_predicted_separation(a, b, horizon_s, cfg) < threshold_m {
                g.add_edge(i, j);
            }
        }
    }
    (zones, g)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coloring {
    /// Color (subchannel) per node.
    Assigned(Vec<usize>),
    /// `node` found every one of the `available` colors taken by neighbours.
    Infeasible { node: usize, available: usize },
}

/// Largest-degree-first greedy coloring with at most `colors` colors.
pub fn greedy_color(graph: &ConflictGraph, colors: usize) -> Coloring {
    let adj = graph.adjacency();
    let mut order: Vec<usize> = (0..graph.node_count()).collect();
    order.sort_by(|&a, &b| adj[b].len().cmp(&adj[a].len()).then(a.cmp(&b)));
    let mut color: Vec<Option<usize>> = vec![None; graph.node_count()];
    for v in order {
        let used: BTreeSet<usize> = adj[v].iter().filter_map(|&u| color[u]).collect();
        let c = (0..).find(|c| !used.contains(c)).expect("unbounded range");
        if c >= colors {
            return Coloring::Infeasible { node: v, available: colors };
        }
        color[v] = Some(c);
    }
    Coloring::Assigned(color.into_iter().map(|c| c.expect("all colored")).collect())
}

pub fn is_proper(graph: &ConflictGraph, assignment: &[usize]) -> bool {
    assignment.len() == graph.node_count() && graph.edges().all(|(a, b)| assignment[a] != assignment[b])
}

/// Sub-zones served per distinct subchannel used.
pub fn reuse_factor(assignment: &[usize], n_subzones: usize) -> Result<f64> {
    let distinct: BTreeSet<usize> = assignment.iter().copied().collect();
    if distinct.is_empty() {
        return Err(Error::InvalidConfig("empty assignment".into()));
    }
    Ok(n_subzones as f64 / distinct.len() as f64)
}

/// Condition 2 helper: more than `max_count` vehicles within `radius_m` of
/// `center_m` along the road.
pub fn density_exceeded(
    vehicles: &[VehicleState],
    center_m: f64,
    radius_m: f64,
    max_count: usize,
    cfg: &MobilityConfig,
) -> bool {
    vehicles
        .iter()
        .filter(|v| cfg.ring_distance(v.position_m, center_m) <= radius_m)
        .count()
        > max_count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "kebab-case")]
pub enum Phase {
    Normal,
    MandatoryStop {
        segment: String,
        horizon_m: f64,
        expires_at: f64,
    },
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationConfig {
    pub segment: String,
    pub horizon_m: f64,
    /// Lifetime of a mandatory stop, in the same unit as input timestamps.
    pub stop_duration_s: f64,
}

impl Default for EscalationConfig {
    fn default() -> Self {
        Self {
            segment: "segment-0".into(),
            horizon_m: 300.0,
            stop_duration_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EscalationInputs {
    pub c1_sensor_verified: bool,
    pub c2_density_exceeded: bool,
    pub c3_preauthorized: bool,
    #[serde(default)]
    pub human_override: Option<String>,
    #[serde(default)]
    pub hazard_resolved: bool,
    pub now: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSnapshot {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub override_present: bool,
    pub hazard_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub index: u64,
    pub timestamp: f64,
    pub event: String,
    pub conditions: ConditionSnapshot,
    pub credential: Option<String>,
    pub prev_hash: String,
    pub entry_hash: String,
}

#[derive(Serialize)]
struct EntryBody<'a> {
    index: u64,
    timestamp: f64,
    event: &'a str,
    conditions: &'a ConditionSnapshot,
    credential: &'a Option<String>,
}

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

impl LogEntry {
    fn body_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&EntryBody {
            index: self.index,
            timestamp: self.timestamp,
            event: &self.event,
            conditions: &self.conditions,
            credential: &self.credential,
        })
        .expect("entry serializes")
    }

    /// SHA-256 over the previous hash followed by the canonical entry body.
    pub fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prev_hash.as_bytes());
        h.update(self.body_bytes());
        hex::encode(h.finalize())
    }
}

pub fn verify_chain(log: &[LogEntry]) -> Result<()> {
    let mut prev = GENESIS_HASH.to_string();
    for (k, e) in log.iter().enumerate() {
        if e.index != k as u64 {
            return Err(Error::Tamper { index: k, reason: format!("index field is {}", e.index) });
        }
        if e.prev_hash != prev {
            return Err(Error::Tamper { index: k, reason: "prev_hash does not link".into() });
        }
        if e.compute_hash() != e.entry_hash {
            return Err(Error::Tamper { index: k, reason: "entry_hash mismatch".into() });
        }
        prev = e.entry_hash.clone();
    }
    Ok(())
}

/// One canonical JSON object per line.
pub fn log_to_bytes(log: &[LogEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in log {
        out.extend(serde_json::to_vec(e).expect("entry serializes"));
        out.push(b'\n');
    }
    out
}

/// Parses a serialized log and verifies it. Any line that is not
/// byte-for-byte the canonical encoding of its entry is rejected.
pub fn verify_bytes(bytes: &[u8]) -> Result<Vec<LogEntry>> {
    let mut log = Vec::new();
    if bytes.is_empty() {
        return Ok(log);
    }
    let body = bytes.strip_suffix(b"\n").ok_or_else(|| Error::Tamper {
        index: 0,
        reason: "missing trailing newline".into(),
    })?;
    for (k, line) in body.split(|&b| b == b'\n').enumerate() {
        let e: LogEntry = serde_json::from_slice(line).map_err(|err| Error::Tamper {
            index: k,
            reason: format!("unparseable entry: {err}"),
        })?;
        if serde_json::to_vec(&e).expect("entry serializes") != line {
            return Err(Error::Tamper { index: k, reason: "non-canonical encoding".into() });
        }
        log.push(e);
    }
    verify_chain(&log)?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscalationState {
    pub phase: Phase,
    pub config: EscalationConfig,
    log: Vec<LogEntry>,
}

impl EscalationState {
    pub fn new(config: EscalationConfig) -> Self {
        Self { phase: Phase::Normal, config, log: Vec::new() }
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Mutable access to the log, for tamper experiments.
    pub fn log_mut(&mut self) -> &mut Vec<LogEntry> {
        &mut self.log
    }

    fn append(&mut self, now: f64, event: &str, conditions: ConditionSnapshot, credential: Option<String>) {
        let prev_hash = self
            .log
            .last()
            .map(|e| e.entry_hash.clone())
            .unwrap_or_else(|| GENESIS_HASH.to_string());
        let mut e = LogEntry {
            index: self.log.len() as u64,
            timestamp: now,
            event: event.to_string(),
            conditions,
            credential,
            prev_hash,
            entry_hash: String::new(),
        };
        e.entry_hash = e.compute_hash();
        self.log.push(e);
    }

    /// Advances the state machine by one input sample.
    ///
    /// From `Normal` or `Cancelled`, a stop is issued when conditions 2 and
    /// 3 hold together with either condition 1 or a credentialed human
    /// override. An active stop is cancelled when the hazard resolves or it
    /// expires. Transitions and override credentials are logged.
    pub fn step(&mut self, inputs: &EscalationInputs) -> Result<()> {
        verify_chain(&self.log)?;
        let snap = ConditionSnapshot {
            c1: inputs.c1_sensor_verified,
            c2: inputs.c2_density_exceeded,
            c3: inputs.c3_preauthorized,
            override_present: inputs.human_override.is_some(),
            hazard_resolved: inputs.hazard_resolved,
        };
        let now = inputs.now;
        match &self.phase {
            Phase::Normal | Phase::Cancelled => {
                let pathway1 = snap.c1 && snap.c2 && snap.c3;
                let pathway2 = snap.override_present && snap.c2 && snap.c3;
                if pathway1 || pathway2 {
                    let event = if pathway1 { "mandatory-stop:pathway-1" } else { "mandatory-stop:pathway-2" };
                    self.phase = Phase::MandatoryStop {
                        segment: self.config.segment.clone(),
                        horizon_m: self.config.horizon_m,
                        expires_at: now + self.config.stop_duration_s,
                    };
                    self.append(now, event, snap, inputs.human_override.clone());
                } else if snap.override_present {
                    self.append(now, "override-rejected", snap, inputs.human_override.clone());
                }
            }
            Phase::MandatoryStop { expires_at, .. } => {
                let expired = now >= *expires_at;
                if snap.hazard_resolved || expired {
                    let event = if snap.hazard_resolved { "cancel:hazard-resolved" } else { "cancel:expired" };
                    self.phase = Phase::Cancelled;
                    self.append(now, event, snap, inputs.human_override.clone());
                } else if snap.override_present {
                    self.append(now, "override-noted", snap, inputs.human_override.clone());
                }
            }
        }
        Ok(())
    }
}
