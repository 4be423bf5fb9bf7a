use mode0_core::error::Error;
use mode0_core::harness::ledger::{format_ledger, parse_ledger, LEDGER_CSV_HEADER};
use mode0_core::harness::report::{report_csv, REPORT_CSV_HEADER};
use mode0_core::harness::{
    append_entries, ledger_csv, ledger_entry, preset, read_ledger, report, run_phase, LedgerEntry, PhaseName,
    RunConfig, RunSpec, Scale,
};
use mode0_core::marl::{checkpoint, ActorMode};
use mode0_core::types::{EpisodeMetrics, PoolLayout};

fn metrics(m0: f64, m1: f64) -> EpisodeMetrics {
    EpisodeMetrics {
        m0_pdr_mean: m0,
        m1_pdr_mean: m1,
        m0_collision_rate: 0.4,
        m0_within_pool_collision_rate: 0.4,
        m0_sinr_mean_db: 20.0,
        m0_pdr_p05_intra: 0.1,
        ..EpisodeMetrics::default()
    }
}

fn entry(phase: &'static str, n: usize, pool: PoolLayout, mode: ActorMode, seed: u64, m0: f64, m1: f64) -> LedgerEntry {
    let spec = RunSpec::new(phase, n, pool, mode);
    ledger_entry(&spec, &RunConfig::default(), seed, 1000, 50, metrics(m0, m1), 1.0).unwrap()
}

fn shared() -> PoolLayout {
    PoolLayout::shared(5).unwrap()
}

fn sep() -> PoolLayout {
    PoolLayout::separated(5, 2).unwrap()
}

#[test]
fn appends_keep_the_file_valid_and_prior_lines_intact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.json");
    let mut prior_lines: Vec<String> = Vec::new();
    for seed in 0..6 {
        append_entries(&path, &[entry("A", 4, shared(), ActorMode::Mode0a, seed, 0.7, 0.8)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let all = parse_ledger(&text).unwrap();
        assert_eq!(all.len(), seed as usize + 1);
        let lines: Vec<String> = text.lines().map(|l| l.trim_end_matches(',').to_string()).collect();
        for (k, l) in prior_lines.iter().enumerate() {
            assert_eq!(&lines[k + 1], l);
        }
        prior_lines = lines[1..lines.len() - 1].to_vec();
    }
    let dup = entry("A", 4, shared(), ActorMode::Mode0a, 3, 0.1, 0.1);
    assert!(matches!(append_entries(&path, &[dup]), Err(Error::DuplicateRun(_))));
    assert_eq!(read_ledger(&path).unwrap().len(), 6);
    assert_eq!(read_ledger(&dir.path().join("absent.json")).unwrap(), Vec::<LedgerEntry>::new());
}

#[test]
fn malformed_ledgers_are_rejected() {
    let e = entry("A", 4, shared(), ActorMode::Mode0a, 0, 0.7, 0.8);
    let text = format_ledger(&[e.clone(), e.clone()]);
    assert!(matches!(parse_ledger(&text), Err(Error::DuplicateRun(_))));
    assert!(parse_ledger("[{\"schema_version\": 1}]").is_err());
    let mut bad = e;
    bad.metrics.m0_pdr_mean = 1.5;
    assert!(parse_ledger(&format_ledger(&[bad])).is_err());
}

#[test]
fn entries_carry_analytic_columns() {
    let a = entry("A", 10, shared(), ActorMode::Mode0a, 0, 0.6, 0.5);
    assert!((a.analytic_nash_floor - 0.865782).abs() < 1e-6);
    assert_eq!(a.m_m0, None);
    assert_eq!(a.regime, None);
    let c = entry("C", 7, sep(), ActorMode::Mode0a, 0, 0.5, 0.5);
    assert_eq!(c.analytic_within_pool_ceiling, Some(0.75));
    assert_eq!(c.regime.as_deref(), Some("probabilistic"));
    assert_eq!(c.rho_pool, Some(1.5));
    assert!((c.analytic_pigeonhole_min - 2.0 / 3.0).abs() < 1e-12);
    let csv = ledger_csv(&[a, c]);
    let cols = LEDGER_CSV_HEADER.split(',').count();
    assert!(csv.lines().all(|l| l.split(',').count() == cols));
}

#[test]
fn report_deltas_and_status() {
    let mut ledger = Vec::new();
    for (s, m0, m1) in [(0, 0.77, 0.88), (1, 0.78, 0.89), (2, 0.79, 0.90)] {
        ledger.push(entry("A", 4, shared(), ActorMode::Mode0a, s, m0, m1));
    }
    ledger.push(entry("D", 4, sep(), ActorMode::Mode0c, 0, 0.999, 0.998));
    ledger.push(entry("C", 4, sep(), ActorMode::Mode0a, 0, 0.95, 0.80));
    let rows = report(&ledger).unwrap();
    let row = |p: &str| rows.iter().find(|r| r.phase == p).unwrap();
    assert_eq!(row("A").status, "baseline");
    assert_eq!(row("A").seeds, 3);
    let d = row("D");
    assert!((d.delta_m0 - 0.219).abs() < 1e-12 && (d.delta_m1 - 0.108).abs() < 1e-12);
    assert_eq!(d.status, "strict Pareto");
    assert_eq!(row("C").status, "M0-prioritising trade");
    let csv = report_csv(&rows);
    assert!(csv.starts_with(REPORT_CSV_HEADER));
    assert_eq!(csv.lines().count(), rows.len() + 1);

    assert!(matches!(report(&[]), Err(Error::MissingBaseline(_))));
    let err = report(&ledger[3..]).unwrap_err().to_string();
    assert!(err.contains("A N=4 M=5 shared 0a"), "{err}");
}

fn tiny() -> RunConfig {
    RunConfig {
        episode_len_ttis: 5,
        actor_hidden: 8,
        critic_hidden: 8,
        ..RunConfig::default()
    }
}

#[test]
fn phase_run_writes_ledger_and_checkpoints_then_refuses_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = preset(PhaseName::D, Scale::Desk);
    p.episodes = 2;
    p.eval_episodes = 2;
    p.seeds = vec![5];
    let cfg = tiny();
    let made = run_phase(&p, &cfg, dir.path(), |_| {}).unwrap();
    assert_eq!(made.len(), 2);
    let ledger = read_ledger(&dir.path().join("ledger.json")).unwrap();
    assert_eq!(ledger, made);
    for e in &made {
        let ck = dir.path().join("checkpoints").join(format!("{}.ckpt", e.run_id));
        let (bundle, train) = checkpoint::load(&ck).unwrap();
        assert_eq!((bundle.mode, bundle.n), (ActorMode::Mode0c, e.n));
        assert_eq!(train, cfg.train());
    }
    let before = std::fs::read(dir.path().join("ledger.json")).unwrap();
    assert!(matches!(run_phase(&p, &cfg, dir.path(), |_| {}), Err(Error::DuplicateRun(_))));
    assert_eq!(std::fs::read(dir.path().join("ledger.json")).unwrap(), before);
}

#[test]
fn config_files_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "pdr_anchor_lo_db = 0.0\npdr_anchor_hi_db = 20.0\nidm_v0_mps = 30.0\n").unwrap();
    let c = RunConfig::load(&path).unwrap();
    let env = c.env(4, shared());
    assert_eq!((env.channel.pdr_anchor_lo_db, env.channel.pdr_anchor_hi_db), (0.0, 20.0));
    assert_eq!(env.mobility.idm.v0_mps, 30.0);
    std::fs::write(&path, "pdr_anchor_lo_db = 30.0\n").unwrap();
    assert!(RunConfig::load(&path).is_err(), "anchor_lo above anchor_hi");
    assert!(matches!(RunConfig::load(&dir.path().join("missing.toml")), Err(Error::Io { .. })));
}
