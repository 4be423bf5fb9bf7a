use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mode0_core::advisory::{
    build_conflict_graph, greedy_color, log_to_bytes, reuse_factor, verify_bytes, Coloring, EscalationConfig,
    EscalationInputs, EscalationState, Phase, DEFAULT_HORIZON_S, DEFAULT_THRESHOLD_M,
};
use mode0_core::analytics::{monte_carlo_random_floor, nash_floor};
use mode0_core::env::write_trace_csv;
use mode0_core::error::{Error, Result};
use mode0_core::harness::{
    self, append_entries, ledger_csv, preset, read_ledger, report, run_phase, run_single, PhaseName, RunConfig,
    RunSpec, Scale, LEDGER_FILE, PHASE_A_N,
};
use mode0_core::marl::{checkpoint, evaluate, trace_eval_episode, ActorMode};
use mode0_core::mobility::init_positions;
use mode0_core::rng::{stream_rng, Stream};
use mode0_core::types::{m0_count, PoolLayout, VehicleState};

#[derive(Parser)]
#[command(name = "mode0", version, about = "Mode 0 V2X resource-allocation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytical symmetric-Nash collision floor.
    Floor {
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Population sizes; defaults to the Phase A sweep.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
    },
    /// Monte Carlo estimate of the uniform-random floor next to the closed form.
    Oracle {
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one configuration, save its checkpoint and append a ledger entry.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "0a")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        episodes: u64,
        #[arg(long, default_value_t = 50)]
        eval_episodes: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print aggregate metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        episodes: u64,
        /// Write the per-TTI trace of the first evaluation episode as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a phase preset (A, B, C or D).
    Phase {
        name: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Overrides the preset's training episodes.
        #[arg(long)]
        episodes: Option<u64>,
        /// Runs a single seed instead of the preset's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Deltas against the Phase A N=4 baseline with Pareto status.
    Report {
        #[arg(long, default_value = "out/ledger.json")]
        ledger: PathBuf,
        /// Also write the report table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the raw ledger as CSV.
        #[arg(long)]
        ledger_csv: Option<PathBuf>,
    },
    /// Conflict graph and subchannel coloring for a vehicle snapshot.
    Advisory {
        /// JSON file with `vehicles` and optional `horizon_s`, `threshold_m`, `colors`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Size of a random snapshot when no input is given.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        colors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Drive the escalation state machine, or verify a stored audit log.
    Escalate {
        /// JSON array of input samples.
        #[arg(long, required_unless_present = "verify")]
        input: Option<PathBuf>,
        /// Where to write the JSON-lines audit log.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "input")]
        verify: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// M0 pool size; omit for a shared pool.
    #[arg(long)]
    m0_pool: Option<usize>,
}

impl RunArgs {
    fn pool(&self) -> Result<PoolLayout> {
        match self.m0_pool {
            Some(p) => PoolLayout::separated(self.m, p),
            None => PoolLayout::shared(self.m),
        }
    }
}

#[derive(Deserialize)]
struct AdvisoryInput {
    vehicles: Vec<VehicleState>,
    horizon_s: Option<f64>,
    threshold_m: Option<f64>,
    colors: Option<usize>,
}

#[derive(Serialize)]
struct AdvisoryOutput {
    subzones: usize,
    edges: Vec<(usize, usize)>,
    coloring: Coloring,
    reuse_factor: Option<f64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn populations(n: Vec<usize>) -> Vec<usize> {
    if n.is_empty() {
        PHASE_A_N.to_vec()
    } else {
        n
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Floor { m, n } => {
            println!("{:>3} {:>3} {:>3} {:>8}", "N", "M", "m0", "floor");
            for n in populations(n) {
                println!("{n:>3} {m:>3} {:>3} {:>8.3}", m0_count(n), nash_floor(m, n)?);
            }
        }
        Cmd::Oracle { m, n, trials, seed } => {
            println!("{:>3} {:>3} {:>9} {:>9} {:>9} {:>9}", "N", "M", "analytic", "mc", "stderr", "diff");
            for n in populations(n) {
                let a = nash_floor(m, n)?;
                let mc = monte_carlo_random_floor(m, n, trials, seed)?;
                println!(
                    "{n:>3} {m:>3} {a:>9.4} {:>9.4} {:>9.5} {:>+9.4}",
                    mc.mean,
                    mc.std_err,
                    mc.mean - a
                );
            }
        }
        Cmd::Train { run, mode, seed, episodes, eval_episodes, out, config } => {
            let cfg = load_config(&config)?;
            let spec = RunSpec::new("X", run.n, run.pool()?, ActorMode::parse(&mode)?);
            let ledger = out.join(LEDGER_FILE);
            let id = spec.run_id(seed, episodes);
            if read_ledger(&ledger)?.iter().any(|e| e.run_id == id) {
                return Err(Error::DuplicateRun(id));
            }
            let (entry, bundle) = run_single(&spec, &cfg, seed, episodes, eval_episodes)?;
            let ckpt = out.join("checkpoints").join(format!("{id}.ckpt"));
            if let Some(dir) = ckpt.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            checkpoint::save(&ckpt, &bundle, &cfg.train())?;
            append_entries(&ledger, std::slice::from_ref(&entry))?;
            println!("{}", json(&entry));
            eprintln!("checkpoint: {}", ckpt.display());
        }
        Cmd::Eval { checkpoint: path, run, seed, episodes, trace, config } => {
            let cfg = load_config(&config)?;
            let (bundle, _) = checkpoint::load(&path)?;
            let env = cfg.env(run.n, run.pool()?);
            if bundle.n != env.n {
                return Err(Error::ShapeMismatch { expected: env.n, got: bundle.n });
            }
            let metrics = evaluate(&bundle, env, episodes, seed)?;
            if let Some(t) = trace {
                let (_, rows) = trace_eval_episode(&bundle, env, seed, 0)?;
                let f = fs::File::create(&t).map_err(|e| Error::io(&t, e))?;
                write_trace_csv(&mut BufWriter::new(f), &rows).map_err(|e| Error::io(&t, e))?;
            }
            println!("{}", json(&metrics));
        }
        Cmd::Phase { name, scale, episodes, seed, out, config } => {
            let cfg = load_config(&config)?;
            let mut p = preset(PhaseName::parse(&name)?, Scale::parse(&scale)?);
            if let Some(e) = episodes {
                p.episodes = e;
            }
            if let Some(s) = seed {
                p.seeds = vec![s];
            }
            let entries = run_phase(&p, &cfg, &out, |e| {
                eprintln!(
                    "{}: m0_collision {:.3} m0_pdr {:.3} m1_pdr {:.3} p05 {:.3} ({:.0}s)",
                    e.run_id,
                    e.metrics.m0_collision_rate,
                    e.metrics.m0_pdr_mean,
                    e.metrics.m1_pdr_mean,
                    e.metrics.m0_pdr_p05_intra,
                    e.wall_time_s
                )
            })?;
            println!("{} runs appended to {}", entries.len(), out.join(LEDGER_FILE).display());
        }
        Cmd::Report { ledger, csv, ledger_csv: raw } => {
            let entries = read_ledger(&ledger)?;
            let rows = report(&entries)?;
            print!("{}", harness::report::report_table(&rows));
            if let Some(p) = csv {
                write(&p, harness::report::report_csv(&rows))?;
            }
            if let Some(p) = raw {
                write(&p, ledger_csv(&entries))?;
            }
        }
        Cmd::Advisory { input, n, colors, seed, config } => {
            let cfg = load_config(&config)?;
            let mob = cfg.env(n.max(1), PoolLayout::shared(colors.max(1))?).mobility;
            let (vehicles, horizon, threshold, colors) = match input {
                Some(p) => {
                    let inp: AdvisoryInput = serde_json::from_str(&read(&p)?)
                        .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                    (
                        inp.vehicles,
                        inp.horizon_s.unwrap_or(DEFAULT_HORIZON_S),
                        inp.threshold_m.unwrap_or(DEFAULT_THRESHOLD_M),
                        inp.colors.unwrap_or(colors),
                    )
                }
                None => {
                    let mut rng = stream_rng(seed, Stream::Mobility, 0);
                    (init_positions(n, colors.max(1), &mob, &mut rng), DEFAULT_HORIZON_S, DEFAULT_THRESHOLD_M, colors)
                }
            };
            let (zones, graph) = build_conflict_graph(&vehicles, horizon, threshold, &mob);
            let coloring = greedy_color(&graph, colors);
            let reuse = match &coloring {
                Coloring::Assigned(a) => Some(reuse_factor(a, zones.len())?),
                Coloring::Infeasible { .. } => None,
            };
            println!(
                "{}",
                serde_json::to_string(&AdvisoryOutput {
                    subzones: zones.len(),
                    edges: graph.edges().collect(),
                    coloring,
                    reuse_factor: reuse,
                })
                .expect("output serializes")
            );
        }
        Cmd::Escalate { input, out, verify } => {
            if let Some(p) = verify {
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let log = verify_bytes(&bytes)?;
                println!("audit log intact: {} entries", log.len());
                return Ok(());
            }
            let p = input.expect("clap enforces --input without --verify");
            let samples: Vec<EscalationInputs> =
                serde_json::from_str(&read(&p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
            let mut st = EscalationState::new(EscalationConfig::default());
            for s in &samples {
                st.step(s)?;
            }
            for e in st.log() {
                println!("{:>4} t={:<8} {}", e.index, e.timestamp, e.event);
            }
            let phase = match &st.phase {
                Phase::Normal => "normal",
                Phase::MandatoryStop { .. } => "mandatory-stop",
                Phase::Cancelled => "cancelled",
            };
            println!("final phase: {phase}");
            if let Some(o) = out {
                write(&o, log_to_bytes(st.log()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
