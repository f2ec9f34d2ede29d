//! Command-line front end: `simulate`, `sweep`, `game`, `thresholds` and
//! `report`.

pub mod config;
pub mod io;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::game::{build_game, epsilon_pe, hm_preference_filter, max_deviation_gain, StrategyProfile};
use crate::sim::{run_replicated, Instance, InstanceRunner, PowerAllocation};
use crate::sweep::{
    analyze, enumerate_allocations, simulate_task, AnalysisOptions, GridAllocation,
    GridSpec, SweepAnalysis, SweepData, SweepError,
};
use config::{ConfigError, RawConfig, RunConfig};
use io::{write_csv, Appender, Provenance, Row};
use manifest::{
    reconcile, sort_games, task_rows, GridEntry, GridKey, Manifest, TaskKey, TaskStatus, GAMES_FILE,
    GAMES_HEADER, MANIFEST_FILE,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCOMPLETE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Incomplete(String),
    Io(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Incomplete(_) => EXIT_INCOMPLETE,
            CliError::Io(_) => EXIT_IO,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Incomplete(m) => write!(f, "incomplete sweep: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Incomplete(_) => CliError::Incomplete(e.to_string()),
            SweepError::AuditFailed(_) => CliError::Internal(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sm-arena", version, about = "Honest vs selfish mining simulator and game analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one power allocation and strategy assignment.
    Simulate(Opts),
    /// Simulate every task of one or more power grids (resumable).
    Sweep(Opts),
    /// Build the game table and equilibria of one allocation.
    Game(Opts),
    /// Compute thresholds, curves, equilibria and ranges from a finished sweep.
    Thresholds(Opts),
    /// Print a summary of a finished sweep.
    Report(Opts),
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<u32>,
    #[arg(long)]
    pub cap: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Convergence window length in steps.
    #[arg(long)]
    pub window: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Reward read from several surviving equilibria: max, min or mean.
    #[arg(long)]
    pub aggregate: Option<String>,
    /// Grid step; defaults depend on the number of malicious miners.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub n_malicious: Vec<usize>,
    /// fixed, dynamic, or both comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    /// full, equal, or both comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub layout: Vec<String>,
    /// Shorthand for `--layout equal`.
    #[arg(long)]
    pub equal_power: bool,
    /// Per-miner strategies, e.g. `HM,SM`.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Per-miner types for `game`, e.g. `StrM,HM`.
    #[arg(long)]
    pub types: Option<String>,
    /// Per-miner powers, e.g. `0.55,0.45`.
    #[arg(long)]
    pub powers: Option<String>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Continue the sweep recorded in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Shrink repetitions and step cap for quick runs.
    #[arg(long)]
    pub desk_scale: bool,
    /// Write results in canonical row order.
    #[arg(long)]
    pub sort: bool,
    /// Stop after this many tasks (testing interrupted sweeps).
    #[arg(long, hide = true)]
    pub max_tasks: Option<usize>,
}

impl Opts {
    fn raw_config(&self) -> Result<RawConfig, CliError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        macro_rules! flag {
            ($field:expr, $key:literal) => {
                if let Some(v) = &$field {
                    raw.set_flag($key, v);
                }
            };
        }
        flag!(self.seed, "seed");
        flag!(self.reps, "reps");
        flag!(self.cap, "cap");
        flag!(self.alpha, "alpha");
        flag!(self.window, "window");
        flag!(self.epsilon, "epsilon");
        flag!(self.aggregate, "aggregate");
        flag!(self.step, "step");
        flag!(self.strategies, "strategies");
        flag!(self.types, "types");
        flag!(self.powers, "powers");
        let join = |v: &[String]| v.join(",");
        if !self.n_malicious.is_empty() {
            let s: Vec<String> = self.n_malicious.iter().map(usize::to_string).collect();
            raw.set_flag("n_malicious", join(&s));
        }
        if !self.model.is_empty() {
            raw.set_flag("model", join(&self.model));
        }
        if self.equal_power {
            raw.set_flag("layout", "equal");
        } else if !self.layout.is_empty() {
            raw.set_flag("layout", join(&self.layout));
        }
        if self.desk_scale {
            raw.set_flag("desk_scale", true);
        }
        Ok(raw)
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        Ok(self.raw_config()?.resolve()?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(CliError::Config("--jobs must be >= 1".into()));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::Internal(e.to_string()))
    }
}

/// Parses arguments and runs the chosen command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(o) => cmd_simulate(&o),
        Command::Sweep(o) => cmd_sweep(&o),
        Command::Game(o) => cmd_game(&o),
        Command::Thresholds(o) => cmd_thresholds(&o),
        Command::Report(o) => cmd_report(&o),
    }
}

/// Explicit seed, or a fresh one from the OS.
fn choose_seed(cfg: &RunConfig) -> (u64, &'static str) {
    match cfg.seed {
        Some(s) => (s, "flag"),
        None => (rand::random::<u64>(), "entropy"),
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct MinerSummary {
    miner: usize,
    strategy: String,
    power: f64,
    mean_reward: f64,
    sem: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    tool: &'static str,
    version: &'static str,
    schema: u32,
    seed: u64,
    seed_source: &'static str,
    config_hash: String,
    config: BTreeMap<String, String>,
    converged_fraction: f64,
    mean_steps: f64,
    reward_sum: f64,
    miners: Vec<MinerSummary>,
}

fn instance_from(cfg: &RunConfig) -> Result<Instance, CliError> {
    let powers = cfg
        .powers
        .clone()
        .ok_or_else(|| CliError::Config("`powers` is required".into()))?;
    let strategies = cfg
        .strategies
        .clone()
        .ok_or_else(|| CliError::Config("`strategies` is required".into()))?;
    let alloc = PowerAllocation::new(powers).map_err(|e| CliError::Config(e.to_string()))?;
    Instance::new(alloc, strategies).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_simulate(o: &Opts) -> Result<(), CliError> {
    let cfg = o.resolve()?;
    let instance = instance_from(&cfg)?;
    let (seed, seed_source) = choose_seed(&cfg);
    let sim = cfg.sim.with_seed(seed);
    let pool = o.pool()?;
    let result = pool
        .install(|| run_replicated(&instance, &sim))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let prov = Provenance {
        seed,
        config_hash: cfg.hash(),
    };
    create_out(&o.out)?;
    let rows: Vec<Row> = (0..instance.len())
        .map(|i| {
            vec![
                i.to_string(),
                instance.strategies[i].to_string(),
                instance.allocation.powers()[i].to_string(),
                result.mean_rewards[i].to_string(),
                result.sem[i].to_string(),
                result.converged_fraction.to_string(),
                result.mean_steps().to_string(),
            ]
        })
        .collect();
    write_csv(
        &o.out.join("rewards.csv"),
        &prov,
        &["miner", "strategy", "power", "mean_reward", "sem", "converged_fraction", "mean_steps"],
        &rows,
    )?;
    let summary = SimulateSummary {
        tool: "sm-arena",
        version: io::VERSION,
        schema: io::SCHEMA,
        seed,
        seed_source,
        config_hash: prov.config_hash.clone(),
        config: cfg.snapshot(),
        converged_fraction: result.converged_fraction,
        mean_steps: result.mean_steps(),
        reward_sum: result.mean_rewards.iter().sum(),
        miners: (0..instance.len())
            .map(|i| MinerSummary {
                miner: i,
                strategy: instance.strategies[i].to_string(),
                power: instance.allocation.powers()[i],
                mean_reward: result.mean_rewards[i],
                sem: result.sem[i],
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    json.push('\n');
    io::write_atomic(&o.out.join("summary.json"), json.as_bytes())?;
    println!("seed {seed} ({seed_source})");
    for m in &summary.miners {
        println!(
            "miner {} {} power {:.4} reward {:.5} ± {:.5}",
            m.miner, m.strategy, m.power, m.mean_reward, m.sem
        );
    }
    Ok(())
}

/// Grids requested on the command line, with their resolved steps.
fn requested_grids(cfg: &RunConfig) -> Result<Vec<GridSpec>, CliError> {
    let mut grids = Vec::new();
    for &model in &cfg.models {
        for &n in &cfg.n_malicious {
            for &layout in &cfg.layouts {
                let mut spec = GridSpec::new(n, model).with_layout(layout);
                if let Some(step) = cfg.step {
                    spec = spec.with_step(step);
                }
                enumerate_allocations(&spec)?;
                grids.push(spec);
            }
        }
    }
    Ok(grids)
}

/// Where a sweep stands after loading or creating its manifest.
struct SweepState {
    manifest: Manifest,
    results: manifest::GameResults,
}

fn load_state(dir: &Path) -> Result<SweepState, CliError> {
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(CliError::Io(format!("{}: no sweep manifest", mpath.display())));
    }
    let manifest = Manifest::load(&mpath).map_err(|e| CliError::Io(format!("{}: {e}", mpath.display())))?;
    let results = reconcile(&dir.join(GAMES_FILE), &manifest.provenance())?;
    Ok(SweepState { manifest, results })
}

/// Marks every task of every grid as done or pending from the results.
fn sync_tasks(state: &mut SweepState) -> Result<Vec<(GridSpec, GridAllocation, StrategyProfile)>, CliError> {
    let mut pending = Vec::new();
    state.manifest.tasks.clear();
    for g in &state.manifest.grids {
        let spec = g.spec();
        let grid = enumerate_allocations(&spec)?;
        for a in &grid {
            for p in spec.profiles() {
                let key = TaskKey {
                    grid: GridKey::of(&spec),
                    allocation_id: a.id,
                    profile_bits: p.bits(),
                };
                let status = if state.results.contains_key(&key) {
                    TaskStatus::Done
                } else {
                    pending.push((spec, a.clone(), p));
                    TaskStatus::Pending
                };
                state.manifest.tasks.insert(key.label(), status);
            }
        }
    }
    Ok(pending)
}

pub fn cmd_sweep(o: &Opts) -> Result<(), CliError> {
    create_out(&o.out)?;
    let mpath = o.out.join(MANIFEST_FILE);
    let gpath = o.out.join(GAMES_FILE);
    let (mut state, cfg) = if o.resume && mpath.exists() {
        let state = load_state(&o.out)?;
        let cfg = recorded_config(o, &state.manifest)?;
        if cfg.seed.is_some_and(|s| s != state.manifest.seed) {
            return Err(CliError::Config(format!(
                "--seed differs from the recorded seed {}",
                state.manifest.seed
            )));
        }
        if state.manifest.config_hash != cfg.hash() {
            return Err(CliError::Config(
                "parameters differ from the recorded sweep; resume with the same config".into(),
            ));
        }
        (state, cfg)
    } else {
        if mpath.exists() || gpath.exists() {
            return Err(CliError::Config(format!(
                "{} already holds a sweep; pass --resume or choose another --out",
                o.out.display()
            )));
        }
        let cfg = o.resolve()?;
        let (seed, source) = choose_seed(&cfg);
        let prov = Provenance {
            seed,
            config_hash: cfg.hash(),
        };
        let state = SweepState {
            manifest: Manifest::new(&prov, source, cfg.snapshot()),
            results: Default::default(),
        };
        (state, cfg)
    };
    let resuming = !state.manifest.grids.is_empty();
    let explicit_grids = !o.n_malicious.is_empty() || !o.model.is_empty() || o.config.is_some();
    if !resuming || explicit_grids {
        for spec in requested_grids(&cfg)? {
            match state.manifest.grid(GridKey::of(&spec)) {
                Some(g) if (g.step - spec.step).abs() > 1e-12 => {
                    return Err(CliError::Config(format!(
                        "grid {} n={} {} was recorded with step {}",
                        spec.model, spec.n_malicious, spec.layout, g.step
                    )))
                }
                Some(_) => {}
                None => {
                    let allocations = enumerate_allocations(&spec)?.len();
                    state.manifest.grids.push(GridEntry {
                        model: spec.model,
                        n_malicious: spec.n_malicious,
                        layout: spec.layout,
                        step: spec.step,
                        allocations,
                        tasks: allocations * spec.profiles().len(),
                    });
                }
            }
        }
    }
    let pending = sync_tasks(&mut state)?;
    state.manifest.save(&mpath)?;
    let prov = state.manifest.provenance();
    let limit = o.max_tasks.unwrap_or(usize::MAX);
    let batch: Vec<_> = pending.into_iter().take(limit).collect();
    let total = batch.len();
    eprintln!(
        "seed {} ({}): {} tasks to run, {} already done",
        prov.seed,
        state.manifest.seed_source,
        total,
        state.results.len()
    );

    let runner = InstanceRunner::new(cfg.sim.with_seed(prov.seed)).map_err(|e| CliError::Config(e.to_string()))?;
    let pool = o.pool()?;
    let mut appender = Appender::open(&gpath, &prov, GAMES_HEADER)?;
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let mut last_save = Instant::now();
    let mut done = 0usize;
    let outcome: Result<(), CliError> = std::thread::scope(|s| {
        let stop = &stop;
        let runner = &runner;
        let pool = &pool;
        s.spawn(move || {
            pool.install(|| {
                batch.into_par_iter().for_each_with(tx, |tx, (spec, alloc, profile)| {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let payoff = simulate_task(&alloc, &profile, runner);
                    let _ = tx.send((spec, alloc, profile, payoff));
                });
            });
        });
        for (spec, alloc, profile, payoff) in rx {
            let key = TaskKey {
                grid: GridKey::of(&spec),
                allocation_id: alloc.id,
                profile_bits: profile.bits(),
            };
            let written = appender.append(&task_rows(&spec, &alloc, &profile, &payoff));
            if let Err(e) = written {
                stop.store(true, Ordering::Relaxed);
                return Err(e.into());
            }
            state.manifest.set(&key, TaskStatus::Done);
            done += 1;
            if last_save.elapsed() > Duration::from_secs(2) {
                if let Err(e) = state.manifest.save(&mpath) {
                    stop.store(true, Ordering::Relaxed);
                    return Err(e.into());
                }
                last_save = Instant::now();
                eprintln!("{done}/{total} tasks");
            }
        }
        Ok(())
    });
    outcome?;
    state.manifest.save(&mpath)?;
    if o.sort {
        sort_games(&gpath, &prov)?;
    }
    let left = state.manifest.pending();
    eprintln!("{done} tasks run, {} simulations, {left} pending", runner.simulations());
    if left > 0 {
        return Err(CliError::Incomplete(format!("{left} tasks pending; rerun with --resume")));
    }
    Ok(())
}

/// Loads a finished sweep and analyses every grid.
fn analyse_sweep(o: &Opts) -> Result<(Manifest, RunConfig, Vec<SweepAnalysis>), CliError> {
    let mut state = load_state(&o.out)?;
    let pending = sync_tasks(&mut state)?;
    if !pending.is_empty() {
        let grids: BTreeSet<String> = pending
            .iter()
            .map(|(s, ..)| format!("{} n={} {}", s.model, s.n_malicious, s.layout))
            .collect();
        return Err(CliError::Incomplete(format!(
            "{} tasks pending in {}; run `sm-arena sweep --resume --out {}`",
            pending.len(),
            grids.into_iter().collect::<Vec<_>>().join(", "),
            o.out.display()
        )));
    }
    let cfg = recorded_config(o, &state.manifest)?;
    let recorded = &state.manifest.config;
    for (k, v) in cfg.snapshot() {
        if !matches!(k.as_str(), "epsilon" | "aggregate") && recorded.get(&k) != Some(&v) {
            return Err(CliError::Config(format!(
                "`{k}` = {v} differs from the recorded sweep ({})",
                recorded.get(&k).map_or("unset", String::as_str)
            )));
        }
    }
    let opts = AnalysisOptions {
        epsilon: cfg.epsilon,
        aggregate: cfg.aggregate,
    };
    let mut analyses = Vec::new();
    for g in &state.manifest.grids {
        let spec = g.spec();
        let mut data = SweepData::new(spec)?;
        for (key, pay) in &state.results {
            if key.grid == GridKey::of(&spec) {
                data.payoffs.insert((key.allocation_id, key.profile_bits), pay.clone());
            }
        }
        analyses.push(analyze(&data, opts)?);
    }
    Ok((state.manifest, cfg, analyses))
}

/// Recorded sweep parameters with this invocation's flags on top.
fn recorded_config(o: &Opts, manifest: &Manifest) -> Result<RunConfig, CliError> {
    let mut base = RawConfig::default();
    for (k, v) in &manifest.config {
        base.set_flag(k, v);
    }
    base.set_flag("seed", manifest.seed);
    let mine = o.raw_config()?;
    let user_seed = mine.seed()?;
    let mut cfg = base.overlay(mine).resolve()?;
    // the recorded seed fills in, but a conflicting flag must stay visible
    cfg.seed = user_seed.or(Some(manifest.seed));
    Ok(cfg)
}

pub const THRESHOLDS_HEADER: &[&str] = &[
    "n",
    "model",
    "step",
    "power_threshold",
    "safety_level",
    "threshold_witness",
    "safety_witness",
    "aggregate",
];
pub const CURVES_HEADER: &[&str] =
    &["n", "model", "layout", "group", "power", "mean_reward", "sem", "n_samples"];
pub const EQUILIBRIA_HEADER: &[&str] =
    &["model", "n", "layout", "allocation_id", "profile_bits", "profile", "hm_preferred"];
pub const RANGES_HEADER: &[&str] = &["n", "model", "step", "lo", "hi", "points", "width"];

fn opt_id(w: Option<usize>) -> String {
    w.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cmd_thresholds(o: &Opts) -> Result<(), CliError> {
    let (manifest, cfg, analyses) = analyse_sweep(o)?;
    let prov = Provenance {
        seed: manifest.seed,
        config_hash: cfg.hash(),
    };
    let mut thresholds = Vec::new();
    let mut curves = Vec::new();
    let mut equilibria = Vec::new();
    let mut ranges = Vec::new();
    for a in &analyses {
        let s = a.spec;
        for (variant, r) in &a.thresholds {
            thresholds.push(vec![
                s.n_malicious.to_string(),
                variant.to_string(),
                s.step.to_string(),
                r.power_threshold.to_string(),
                r.safety_level.to_string(),
                opt_id(r.threshold_witness),
                opt_id(r.safety_witness),
                cfg.aggregate.to_string(),
            ]);
        }
        for (variant, group, points) in &a.curves {
            for p in points {
                curves.push(vec![
                    s.n_malicious.to_string(),
                    variant.to_string(),
                    s.layout.to_string(),
                    group.to_string(),
                    p.power.to_string(),
                    p.mean_reward.to_string(),
                    p.sem.to_string(),
                    p.n_samples.to_string(),
                ]);
            }
        }
        for e in &a.equilibria {
            let preferred: BTreeSet<u64> = e.preferred.equilibria.iter().map(StrategyProfile::bits).collect();
            for p in &e.all.equilibria {
                equilibria.push(vec![
                    s.model.to_string(),
                    s.n_malicious.to_string(),
                    s.layout.to_string(),
                    e.allocation_id.to_string(),
                    p.bits().to_string(),
                    p.to_string(),
                    preferred.contains(&p.bits()).to_string(),
                ]);
            }
        }
        for (variant, k, iv) in &a.ranges {
            ranges.push(vec![
                k.to_string(),
                variant.to_string(),
                s.step.to_string(),
                iv.lo.to_string(),
                iv.hi.to_string(),
                iv.points.to_string(),
                iv.width(s.step).to_string(),
            ]);
        }
    }
    write_csv(&o.out.join("thresholds.csv"), &prov, THRESHOLDS_HEADER, &thresholds)?;
    write_csv(&o.out.join("curves.csv"), &prov, CURVES_HEADER, &curves)?;
    write_csv(&o.out.join("equilibria.csv"), &prov, EQUILIBRIA_HEADER, &equilibria)?;
    write_csv(&o.out.join("ranges.csv"), &prov, RANGES_HEADER, &ranges)?;
    print_summary(&analyses);
    Ok(())
}

pub fn cmd_report(o: &Opts) -> Result<(), CliError> {
    let (manifest, cfg, analyses) = analyse_sweep(o)?;
    println!(
        "sm-arena {} seed {} config {} (reps {}, cap {}, epsilon {}, aggregate {})",
        manifest.version,
        manifest.seed,
        &manifest.config_hash[..12],
        cfg.sim.repetitions,
        cfg.sim.step_cap,
        cfg.epsilon,
        cfg.aggregate
    );
    print_summary(&analyses);
    Ok(())
}

fn print_summary(analyses: &[SweepAnalysis]) {
    for a in analyses {
        let s = a.spec;
        for (variant, r) in &a.thresholds {
            println!(
                "n={} {:<14} step {:<5} threshold {:<10} safety {}",
                s.n_malicious,
                variant,
                s.step,
                r.power_threshold,
                r.safety_level
            );
        }
        for (variant, k, iv) in &a.ranges {
            println!(
                "n={k} {variant:<14} step {:<5} multi-SM range [{}, {}] width {}",
                s.step,
                iv.lo,
                iv.hi,
                iv.width(s.step)
            );
        }
        if !a.equilibria.is_empty() {
            let counts: Vec<usize> = a.equilibria.iter().map(|e| e.all.equilibria.len()).collect();
            let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
            let empty = counts.iter().filter(|&&c| c == 0).count();
            println!(
                "n={} {} {}: {:.2} equilibria per allocation, {} without any",
                s.n_malicious, s.model, s.layout, mean, empty
            );
        }
    }
}

pub fn cmd_game(o: &Opts) -> Result<(), CliError> {
    let cfg = o.resolve()?;
    let powers = cfg
        .powers
        .clone()
        .ok_or_else(|| CliError::Config("`powers` is required".into()))?;
    let types = cfg
        .types
        .clone()
        .ok_or_else(|| CliError::Config("`types` is required".into()))?;
    let alloc = PowerAllocation::new(powers).map_err(|e| CliError::Config(e.to_string()))?;
    if alloc.len() != types.len() {
        return Err(CliError::Config(format!(
            "{} powers for {} miner types",
            alloc.len(),
            types.len()
        )));
    }
    let (seed, source) = choose_seed(&cfg);
    let runner = InstanceRunner::new(cfg.sim.with_seed(seed)).map_err(|e| CliError::Config(e.to_string()))?;
    let game = o
        .pool()?
        .install(|| build_game(&alloc, &types, &runner))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let all = epsilon_pe(&game, cfg.epsilon);
    let preferred = hm_preference_filter(&all, &game);
    let prov = Provenance {
        seed,
        config_hash: cfg.hash(),
    };
    create_out(&o.out)?;
    let n_strategic = types.iter().filter(|t| **t == crate::game::MinerType::Strategic).count();
    let mut rows = Vec::new();
    for (profile, pay) in game.iter() {
        for i in 0..types.len() {
            rows.push(vec![
                "dynamic".to_string(),
                n_strategic.to_string(),
                "single".to_string(),
                String::new(),
                "0".to_string(),
                profile.bits().to_string(),
                i.to_string(),
                alloc.powers()[i].to_string(),
                profile.choices[i].to_string(),
                pay.mean[i].to_string(),
                pay.sem[i].to_string(),
            ]);
        }
    }
    write_csv(&o.out.join(GAMES_FILE), &prov, GAMES_HEADER, &rows)?;
    let preferred_bits: BTreeSet<u64> = preferred.equilibria.iter().map(StrategyProfile::bits).collect();
    let eq_rows: Vec<Row> = all
        .equilibria
        .iter()
        .map(|p| {
            vec![
                "dynamic".to_string(),
                n_strategic.to_string(),
                "single".to_string(),
                "0".to_string(),
                p.bits().to_string(),
                p.to_string(),
                preferred_bits.contains(&p.bits()).to_string(),
            ]
        })
        .collect();
    write_csv(&o.out.join("equilibria.csv"), &prov, EQUILIBRIA_HEADER, &eq_rows)?;
    println!("seed {seed} ({source})");
    for (profile, pay) in game.iter() {
        let tag = if preferred_bits.contains(&profile.bits()) {
            "  <- equilibrium (HM-preferred)"
        } else if all.equilibria.contains(&profile) {
            "  <- equilibrium"
        } else {
            ""
        };
        let rewards: Vec<String> = pay.mean.iter().map(|r| format!("{r:.4}")).collect();
        println!(
            "{profile} rewards [{}] max gain {:.4}{tag}",
            rewards.join(", "),
            max_deviation_gain(&game, &profile)
        );
    }
    Ok(())
}
