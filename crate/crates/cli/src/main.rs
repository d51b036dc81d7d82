//! `ridepool` command-line entry point.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use ridepool::model::{DelayParams, Objective, DEFAULT_EPOCH_LEN, DEFAULT_WALK_SPEED};
use ridepool::network::{generate_grid, load_network, write_network, RoadNetwork};
use ridepool::rvrp::DelayReference;
use ridepool::simulator::{
    compare, gen_requests, read_requests, rng_stream, streams, train_value, write_epoch_csv, write_requests,
    write_summary, ComparePlan, Comparison, HotspotProfile, Mode, RequestStream, SimConfig, SimError, Summary,
};
use ridepool::valuefn::ValueNet;

const SUBCOMMANDS: [&str; 5] = ["gen-network", "gen-requests", "simulate", "train", "compare"];
const LOG_ENV: &str = "RIDEPOOL_LOG";

#[derive(Parser)]
#[command(name = "ridepool", version, about = "Ride-pool dispatch with flexible pickup and drop-off areas")]
#[command(after_help = "Log verbosity is read from RIDEPOOL_LOG (error, warn, info, debug, trace).")]
struct Cli {
    /// File of `key = value` lines, one per long flag of the subcommand
    /// (`vehicles = 50`). Flags on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a grid road network as nodes.csv and edges.csv.
    GenNetwork(GenNetworkArgs),
    /// Write a synthetic request stream as CSV.
    GenRequests(GenRequestsArgs),
    /// Run one simulation and write its summary and per-epoch CSV.
    Simulate(SimulateArgs),
    /// Train a value network over one or more runs and save a checkpoint.
    Train(TrainArgs),
    /// Run several modes on the same demand and seeds and report the differences.
    Compare(CompareArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenNetworkArgs {
    /// Grid size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_grid, default_value = "20x20")]
    grid: (usize, usize),
    /// Edge length in meters.
    #[arg(long, default_value_t = 100.0)]
    edge_m: f64,
    /// Driving speed in m/s.
    #[arg(long, default_value_t = 5.0)]
    speed: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct NetArgs {
    /// Directory holding nodes.csv and edges.csv. Without it a grid is generated.
    #[arg(long, value_name = "DIR", conflicts_with = "grid")]
    network: Option<PathBuf>,
    /// Grid size as WIDTHxHEIGHT when no network directory is given.
    #[arg(long, value_parser = parse_grid, default_value = "20x20")]
    grid: (usize, usize),
    /// Grid edge length in meters.
    #[arg(long, default_value_t = 100.0)]
    edge_m: f64,
    /// Grid driving speed in m/s.
    #[arg(long, default_value_t = 5.0)]
    speed: f64,
}

#[derive(Args)]
struct DemandArgs {
    /// Requests CSV. Without it requests are generated per seed.
    #[arg(long, value_name = "FILE")]
    requests: Option<PathBuf>,
    /// Mean generated requests per epoch.
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
    /// Spatial demand pattern of generated requests.
    #[arg(long, value_parser = ["hotspots", "uniform"], default_value = "hotspots")]
    profile: String,
}

#[derive(Args)]
struct GenRequestsArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Mean requests per epoch.
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
    #[arg(long, value_parser = ["hotspots", "uniform"], default_value = "hotspots")]
    profile: String,
    /// Number of epochs.
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Epoch length in seconds.
    #[arg(long, default_value_t = DEFAULT_EPOCH_LEN)]
    epoch_len: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Maximum pickup delay in seconds.
    #[arg(long, default_value_t = 300.0)]
    delta: f64,
    /// Maximum time from pickup to drop-off in seconds [default: 2 x delta].
    #[arg(long)]
    detour: Option<f64>,
    /// Epoch length in seconds.
    #[arg(long, default_value_t = DEFAULT_EPOCH_LEN)]
    epoch_len: f64,
    /// Walking speed in m/s.
    #[arg(long, default_value_t = DEFAULT_WALK_SPEED)]
    walk_speed: f64,
    /// Maximum walking distance in meters [default: delta x walk speed].
    #[arg(long)]
    max_walk: Option<f64>,
    #[arg(long, default_value_t = 50)]
    vehicles: usize,
    #[arg(long, default_value_t = 4)]
    capacity: usize,
    /// Number of epochs.
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Discount on the value of the vehicle's next state; 0 scores actions by reward alone.
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Update the value network from observed transitions.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    training: bool,
    /// Reward per action: served_count or neg_travel_time.
    #[arg(long, default_value = "served_count")]
    objective: Objective,
    /// What the pickup delay is measured from: route_start or request_arrival.
    #[arg(long, value_parser = parse_delay_reference, default_value = "route_start")]
    delay_reference: DelayReference,
    /// Nearest pending requests each vehicle considers per epoch.
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    train_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Record wall-clock phase timings; turn off for byte-identical outputs.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    timings: bool,
    /// Value-network checkpoint to start from.
    #[arg(long, value_name = "FILE")]
    value_in: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// flexible, fixed, pickup_only or dropoff_only.
    #[arg(long, default_value = "flexible")]
    mode: Mode,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "flexible")]
    mode: Mode,
    /// Training runs; run `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Modes to compare; the first is the baseline of the first pair.
    #[arg(long, value_delimiter = ',', default_value = "fixed,flexible")]
    modes: Vec<Mode>,
    /// Evaluation seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Seeds of training runs done per mode before evaluation.
    #[arg(long, value_delimiter = ',')]
    train_seeds: Vec<u64>,
    /// Keep training during evaluation runs.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set, value_name = "BOOL")]
    train_during_eval: bool,
    #[command(flatten)]
    out: OutArgs,
}

/// Failure classes with distinct exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid size {v:?}: {e}"));
    Ok((n(w)?, n(h)?))
}

fn parse_delay_reference(s: &str) -> Result<DelayReference, String> {
    match s {
        "route_start" => Ok(DelayReference::RouteStart),
        "request_arrival" => Ok(DelayReference::RequestArrival),
        other => Err(format!("expected route_start or request_arrival, got {other:?}")),
    }
}

/// Turns `key = value` lines into `--key=value` arguments. Blank lines and
/// lines starting with `#` are skipped.
fn config_args(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return usage(format!("config {} line {}: expected key = value", path.display(), i + 1));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return usage(format!("config {} line {}: invalid key", path.display(), i + 1));
        }
        let value = value.trim();
        match (key.as_str(), value) {
            ("force", "true") => out.push("--force".to_string()),
            ("force", "false") => {}
            _ => out.push(format!("--{key}={value}")),
        }
    }
    Ok(out)
}

/// Command-line arguments with config-file entries inserted right after
/// the subcommand, so later command-line flags override them.
fn merged_args(argv: Vec<String>) -> Result<Vec<String>, Failure> {
    let mut config = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            config = argv.get(i + 1).cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        }
    }
    let Some(path) = config else { return Ok(argv) };
    let Some(pos) = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else { return Ok(argv) };
    let mut merged = argv[..pos + 2].to_vec();
    merged.extend(config_args(Path::new(&path))?);
    merged.extend_from_slice(&argv[pos + 2..]);
    Ok(merged)
}

fn sim_config(a: &SimArgs, mode: Mode) -> Result<SimConfig, Failure> {
    let params = DelayParams {
        pickup_delay: a.delta,
        detour_delay: a.detour.unwrap_or(2.0 * a.delta),
        epoch_len: a.epoch_len,
        walk_speed: a.walk_speed,
        max_walk: a.max_walk.unwrap_or(a.delta * a.walk_speed),
    };
    let mut c = SimConfig::new(params);
    c.num_vehicles = a.vehicles;
    c.capacity = a.capacity;
    c.horizon = a.horizon;
    c.seed = a.seed;
    c.mode = mode;
    c.objective = a.objective;
    c.gamma = a.gamma;
    c.training = a.training;
    c.delay_reference = a.delay_reference;
    c.candidate_limit = a.candidates;
    c.batch_size = a.batch_size;
    c.train_steps_per_epoch = a.train_steps;
    c.learning_rate = a.learning_rate;
    c.record_timings = a.timings;
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn load_or_grid(a: &NetArgs) -> anyhow::Result<RoadNetwork> {
    match &a.network {
        Some(dir) => {
            let open = |name: &str| {
                let p = dir.join(name);
                File::open(&p).map(BufReader::new).with_context(|| format!("opening {}", p.display()))
            };
            load_network(open("nodes.csv")?, open("edges.csv")?).with_context(|| format!("loading network from {}", dir.display()))
        }
        None => Ok(generate_grid(a.grid.0, a.grid.1, a.edge_m, a.speed)?),
    }
}

fn profile(name: &str, net: &RoadNetwork) -> HotspotProfile {
    match name {
        "uniform" => HotspotProfile::uniform(),
        _ => HotspotProfile::default_for(net),
    }
}

/// Demand for a seed: the file when given, otherwise generated from the
/// seed's request sub-stream.
struct Demand<'a> {
    net: &'a RoadNetwork,
    file: Option<RequestStream>,
    rate: f64,
    profile: HotspotProfile,
    horizon: usize,
    epoch_len: f64,
}

impl<'a> Demand<'a> {
    fn new(net: &'a RoadNetwork, a: &DemandArgs, c: &SimConfig) -> anyhow::Result<Self> {
        let file = match &a.requests {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Some(read_requests(BufReader::new(f), net, None).with_context(|| format!("reading {}", p.display()))?)
            }
            None => None,
        };
        Ok(Self { net, file, rate: a.rate, profile: profile(&a.profile, net), horizon: c.horizon, epoch_len: c.params.epoch_len })
    }

    fn stream(&self, seed: u64) -> Result<RequestStream, SimError> {
        match &self.file {
            Some(s) => Ok(s.clone()),
            None => {
                let mut rng = rng_stream(seed, streams::REQUESTS);
                gen_requests(self.net, self.rate, self.horizon, self.epoch_len, &self.profile, &mut rng)
            }
        }
    }
}

/// Creates `dir` and refuses to clobber any of `files` without `force`.
fn prepare_out(dir: &Path, files: &[&str], force: bool) -> Result<(), Failure> {
    if !force {
        if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return usage(format!("{} exists; pass --force to overwrite", f.display()));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_value(path: &Option<PathBuf>) -> anyhow::Result<Option<ValueNet>> {
    path.as_ref()
        .map(|p| ValueNet::load(p).with_context(|| format!("loading value network {}", p.display())))
        .transpose()
}

fn write_run(dir: &Path, summary: &Summary, value: Option<&ValueNet>) -> anyhow::Result<()> {
    let p = dir.join("epochs.csv");
    write_epoch_csv(create(&p)?, &summary.metrics.epochs).with_context(|| format!("writing {}", p.display()))?;
    let p = dir.join("summary.json");
    write_summary(create(&p)?, summary).with_context(|| format!("writing {}", p.display()))?;
    if let Some(v) = value {
        let p = dir.join("value.ckpt");
        v.save(&p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn print_metrics(summary: &Summary) {
    let m = &summary.metrics;
    println!(
        "{}: served {} rejected {} in_flight {} avg_distance_m {:.1} audit_violations {}",
        summary.config.mode,
        m.served,
        m.rejected,
        m.in_flight,
        m.avg_distance_per_served_m,
        m.audit.total()
    );
}

fn gen_network(a: GenNetworkArgs) -> Result<(), Failure> {
    prepare_out(&a.out.out, &["nodes.csv", "edges.csv"], a.out.force)?;
    let net = generate_grid(a.grid.0, a.grid.1, a.edge_m, a.speed).map_err(|e| Failure::Usage(e.to_string()))?;
    let (n, e) = (a.out.out.join("nodes.csv"), a.out.out.join("edges.csv"));
    write_network(&net, create(&n)?, create(&e)?).map_err(|err| anyhow!("writing {} / {}: {err}", n.display(), e.display()))?;
    println!("wrote {} nodes to {}", net.node_count(), a.out.out.display());
    Ok(())
}

fn gen_requests_cmd(a: GenRequestsArgs) -> Result<(), Failure> {
    if a.out.exists() && !a.force {
        return usage(format!("{} exists; pass --force to overwrite", a.out.display()));
    }
    if !(a.rate >= 0.0 && a.rate.is_finite()) || !(a.epoch_len > 0.0) || a.horizon == 0 {
        return usage("rate must be non-negative, epoch length and horizon positive");
    }
    let net = load_or_grid(&a.net)?;
    let mut rng = rng_stream(a.seed, streams::REQUESTS);
    let stream = gen_requests(&net, a.rate, a.horizon, a.epoch_len, &profile(&a.profile, &net), &mut rng)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_requests(create(&a.out)?, &net, &stream).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} requests to {}", stream.len(), a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let config = sim_config(&a.sim, a.mode)?;
    prepare_out(&a.out.out, &["epochs.csv", "summary.json", "value.ckpt"], a.out.force)?;
    let net = load_or_grid(&a.net)?;
    let demand = Demand::new(&net, &a.demand, &config)?;
    let value = load_value(&a.sim.value_in)?;
    let out = ridepool::simulator::run(config.clone(), &net, demand.stream(config.seed)?, value)?;
    let summary = Summary { config, metrics: out.metrics };
    write_run(&a.out.out, &summary, out.value.as_ref())?;
    print_metrics(&summary);
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut config = sim_config(&a.sim, a.mode)?;
    config.training = true;
    if a.rounds == 0 {
        return usage("--rounds must be positive");
    }
    prepare_out(&a.out.out, &["epochs.csv", "summary.json", "value.ckpt"], a.out.force)?;
    let net = load_or_grid(&a.net)?;
    let demand = Demand::new(&net, &a.demand, &config)?;
    let start = load_value(&a.sim.value_in)?;
    let seeds: Vec<u64> = (0..a.rounds - 1).map(|i| config.seed + i).collect();
    let value = train_value(&net, &config, &seeds, |s| demand.stream(s), start)?;
    let mut last = config.clone();
    last.seed = config.seed + a.rounds - 1;
    let out = ridepool::simulator::run(last.clone(), &net, demand.stream(last.seed)?, value)?;
    let summary = Summary { config: last, metrics: out.metrics };
    write_run(&a.out.out, &summary, out.value.as_ref())?;
    print_metrics(&summary);
    Ok(())
}

fn report(c: &Comparison) -> String {
    let mut s = String::from("mode           mean_served  mean_avg_distance_m  mean_epoch_objective  audit_violations\n");
    for m in &c.modes {
        s += &format!(
            "{:<14} {:>11.1}  {:>19.1}  {:>20.3}  {:>16}\n",
            m.mode.to_string(),
            m.mean_served,
            m.mean_avg_distance_m,
            m.mean_epoch_objective,
            m.audit_violations
        );
    }
    let n = c.plan.seeds.len();
    for i in &c.improvements {
        s += &format!(
            "{} vs {}: served {:+.2}% (>= on {}/{n} seeds), avg distance {:+.2}% lower (<= on {}/{n} seeds), both on {}/{n}\n",
            i.mode, i.baseline, i.served_pct, i.seeds_served_ge, i.avg_distance_pct, i.seeds_distance_le, i.seeds_both
        );
    }
    s
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let base = sim_config(&a.sim, Mode::default())?;
    if a.modes.is_empty() || a.seeds.is_empty() {
        return usage("--modes and --seeds must not be empty");
    }
    let mut files = vec!["compare.json".to_string(), "compare.txt".to_string()];
    for m in &a.modes {
        for s in &a.seeds {
            files.push(format!("{m}_seed{s}.csv"));
        }
    }
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    prepare_out(&a.out.out, &names, a.out.force)?;
    let net = load_or_grid(&a.net)?;
    let demand = Demand::new(&net, &a.demand, &base)?;
    if a.sim.value_in.is_some() {
        return usage("compare trains its own networks; use --train-seeds instead of --value-in");
    }
    let plan = ComparePlan {
        base,
        modes: a.modes.clone(),
        seeds: a.seeds.clone(),
        train_seeds: a.train_seeds.clone(),
        train_during_eval: a.train_during_eval,
    };
    let cmp = match compare(&net, &plan, |s| demand.stream(s)) {
        Err(SimError::Config(msg)) => return usage(msg),
        other => other?,
    };
    for r in &cmp.runs {
        let p = a.out.out.join(format!("{}_seed{}.csv", r.mode, r.seed));
        write_epoch_csv(create(&p)?, &r.metrics.epochs).with_context(|| format!("writing {}", p.display()))?;
    }
    let p = a.out.out.join("compare.json");
    serde_json::to_writer_pretty(create(&p)?, &cmp).with_context(|| format!("writing {}", p.display()))?;
    let text = report(&cmp);
    let p = a.out.out.join("compare.txt");
    create(&p)?.write_all(text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    print!("{text}");
    Ok(())
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenNetwork(a) => gen_network(a),
        Command::GenRequests(a) => gen_requests_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Compare(a) => compare_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let parsed = merged_args(std::env::args().collect()).and_then(|argv| {
        let cmd = Cli::command().args_override_self(true).mut_subcommands(|s| s.args_override_self(true));
        let matches = cmd.try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
        Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))
    });
    let result = parsed.and_then(run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
