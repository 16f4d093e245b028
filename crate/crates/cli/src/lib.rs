//! Argument handling and command execution for the `unison` binary.
//!
//! [`parse_invocation`] turns argv plus an optional JSON config file into a
//! validated [`CliConfig`], reporting every problem at once. [`execute`]
//! runs it and maps the outcome to an exit code (see [`exit`]).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use unison_core::adversary::{parse_activation, parse_fault, ActivationPolicy};
use unison_core::checks::{self, CheckReport, Corpus, BATTERIES};
use unison_core::engine::{run, InitSpec, RunParams, StopCondition};
use unison_core::scenarios::{self, AssertionResult, CatalogOptions, CATALOG};
use unison_core::scheduler::parse_scheduler;
use unison_core::trace::encode_trace;
use unison_core::{Configuration, Error, ProcessorRole, Topology, TopologyKind};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const NOT_STABILIZED: i32 = 2;
    pub const VIOLATION: i32 = 3;
}

/// Seed used when neither a flag, the config file nor `UNISON_SEED` gives one.
pub const DEFAULT_SEED: u64 = 0;
const DEFAULT_SIZE: usize = 6;
const DEFAULT_DRIFT: u64 = 8;

#[derive(Debug, Parser)]
#[command(name = "unison", version, about = "Simulate and check strictly-stabilizing asynchronous unison")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Run a single simulation.
    Run(RunArgs),
    /// Run a named scenario family and check its assertions.
    Scenario {
        /// lower-bound-chain, lower-bound-ring, upper-bound-sweep or weakly-fair-starvation
        name: String,
        /// Lower-bound parameter t (initial drift is 2t).
        #[arg(long)]
        t: Option<u64>,
        /// Lower-bound base clock value a.
        #[arg(long, allow_negative_numbers = true)]
        a: Option<i64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a property-check battery.
    Check {
        /// closure, islands, drift, liveness, fairness or all
        battery: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// chain or ring
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Comma-separated clocks, or `random` (see --drift)
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<String>,
    /// Exact initial drift for --init random
    #[arg(long)]
    pub drift: Option<u64>,
    /// Faulty processor id (repeatable)
    #[arg(long)]
    pub faulty: Vec<usize>,
    /// crash or byz:<fixed:v|script:path|walk:lo:hi|chase:d|silent>, one for all
    /// faulty processors or one per --faulty
    #[arg(long, allow_hyphen_values = true)]
    pub fault: Vec<String>,
    /// never, every:<k>, prob:<p> or script:<path>
    #[arg(long)]
    pub activation: Option<String>,
    /// strongly-fair, synchronous, distributed:<p> or scripted:<path>
    #[arg(long)]
    pub scheduler: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// on-inv, window:<rounds> or exhaust
    #[arg(long)]
    pub stop: Option<String>,
    /// Write the trace as JSON Lines here
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write statistics as JSON here
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Trials per grid point for sweeps and checks
    #[arg(long)]
    pub trials: Option<u64>,
    /// Allow more than one faulty processor
    #[arg(long)]
    pub unchecked: bool,
    /// JSON file with default values for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Config file contents: flag names with dashes turned into underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: Option<String>,
    pub size: Option<usize>,
    pub init: Option<String>,
    pub drift: Option<u64>,
    pub faulty: Option<Vec<usize>>,
    pub fault: Option<Vec<String>>,
    pub activation: Option<String>,
    pub scheduler: Option<String>,
    pub seed: Option<u64>,
    pub max_rounds: Option<u64>,
    pub max_steps: Option<u64>,
    pub stop: Option<String>,
    pub trace: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub trials: Option<u64>,
    pub unchecked: Option<bool>,
    pub verbose: Option<u8>,
    pub t: Option<u64>,
    pub a: Option<i64>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("usage error:\n  {}", .violations.join("\n  "))]
pub struct UsageError {
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run(Box<RunParams>),
    Scenario { name: String, options: CatalogOptions },
    Check { battery: String, corpus: Corpus },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub trace: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub verbose: u8,
}

/// Parses `argv` (without the program name) against an optional config
/// file, taking the default seed from `UNISON_SEED`.
pub fn parse_invocation(argv: &[String], config_file: Option<&[u8]>) -> Result<CliConfig, UsageError> {
    let env_seed = std::env::var("UNISON_SEED").ok();
    parse_invocation_with_env(argv, config_file, env_seed.as_deref())
}

/// [`parse_invocation`] with the environment seed passed in explicitly.
pub fn parse_invocation_with_env(
    argv: &[String],
    config_file: Option<&[u8]>,
    env_seed: Option<&str>,
) -> Result<CliConfig, UsageError> {
    let args = std::iter::once("unison".to_string()).chain(argv.iter().cloned());
    let cli = Cli::try_parse_from(args).map_err(|e| UsageError { violations: vec![e.to_string().trim_end().to_string()] })?;
    let file: ConfigFile = match config_file {
        Some(bytes) => serde_json::from_slice(bytes)
            .map_err(|e| UsageError { violations: vec![format!("config file: {e}")] })?,
        None => ConfigFile::default(),
    };
    let mut v = Violations::default();
    let config = match cli.command {
        CommandArgs::Run(args) => {
            let merged = Merged::new(&args, &file, env_seed, &mut v);
            let params = merged.run_params(&mut v);
            let (trace, stats) = (merged.trace.clone(), merged.stats.clone());
            params.map(|p| CliConfig { command: Command::Run(Box::new(p)), trace, stats, verbose: merged.verbose })
        }
        CommandArgs::Scenario { name, t, a, run } => {
            let merged = Merged::new(&run, &file, env_seed, &mut v);
            if !CATALOG.contains(&name.as_str()) {
                v.push(format!("unknown scenario `{name}`; expected one of {}", CATALOG.join(", ")));
            }
            let t = t.or(file.t).unwrap_or(3);
            if matches!(name.as_str(), "lower-bound-chain" | "lower-bound-ring") && t < 2 {
                v.push(format!("--t must be at least 2, got {t}"));
            }
            if name == "upper-bound-sweep" && merged.trace.is_some() {
                v.push("--trace is only available for single-run scenarios".into());
            }
            let options = CatalogOptions {
                a: a.or(file.a).unwrap_or(0),
                t,
                trials: merged.trials,
                seed: merged.seed,
                ..CatalogOptions::default()
            };
            Some(CliConfig {
                command: Command::Scenario { name, options },
                trace: merged.trace,
                stats: merged.stats,
                verbose: merged.verbose,
            })
        }
        CommandArgs::Check { battery, run } => {
            let merged = Merged::new(&run, &file, env_seed, &mut v);
            if battery != "all" && !BATTERIES.contains(&battery.as_str()) {
                v.push(format!("unknown check `{battery}`; expected one of {}, all", BATTERIES.join(", ")));
            }
            if merged.trace.is_some() {
                v.push("--trace is not available for check batteries".into());
            }
            let corpus = Corpus { trials: merged.trials, seed: merged.seed, ..Corpus::default() };
            Some(CliConfig { command: Command::Check { battery, corpus }, trace: None, stats: merged.stats, verbose: merged.verbose })
        }
    };
    match config {
        Some(c) if v.0.is_empty() => Ok(c),
        _ => Err(UsageError { violations: v.0 }),
    }
}

#[derive(Default)]
struct Violations(Vec<String>);

impl Violations {
    fn push(&mut self, msg: String) {
        self.0.push(msg);
    }

    fn check<T>(&mut self, what: &str, r: Result<T, Error>) -> Option<T> {
        r.map_err(|e| self.push(format!("{what}: {e}"))).ok()
    }
}

/// Flag values with config-file and default fallbacks applied.
struct Merged {
    topology: Option<String>,
    size: Option<usize>,
    init: Option<String>,
    drift: Option<u64>,
    faulty: Vec<usize>,
    fault: Vec<String>,
    activation: Option<String>,
    scheduler: Option<String>,
    seed: u64,
    max_rounds: Option<u64>,
    max_steps: Option<u64>,
    stop: Option<String>,
    trace: Option<PathBuf>,
    stats: Option<PathBuf>,
    trials: u64,
    unchecked: bool,
    verbose: u8,
}

impl Merged {
    fn new(args: &RunArgs, file: &ConfigFile, env_seed: Option<&str>, v: &mut Violations) -> Self {
        let env_seed = env_seed.and_then(|s| match s.trim().parse::<u64>() {
            Ok(seed) => Some(seed),
            Err(_) => {
                v.push(format!("UNISON_SEED `{s}` is not a non-negative integer"));
                None
            }
        });
        let trials = args.trials.or(file.trials).unwrap_or(2);
        if trials == 0 {
            v.push("--trials must be at least 1".into());
        }
        Merged {
            topology: args.topology.clone().or_else(|| file.topology.clone()),
            size: args.size.or(file.size),
            init: args.init.clone().or_else(|| file.init.clone()),
            drift: args.drift.or(file.drift),
            faulty: if args.faulty.is_empty() { file.faulty.clone().unwrap_or_default() } else { args.faulty.clone() },
            fault: if args.fault.is_empty() { file.fault.clone().unwrap_or_default() } else { args.fault.clone() },
            activation: args.activation.clone().or_else(|| file.activation.clone()),
            scheduler: args.scheduler.clone().or_else(|| file.scheduler.clone()),
            seed: args.seed.or(file.seed).or(env_seed).unwrap_or(DEFAULT_SEED),
            max_rounds: args.max_rounds.or(file.max_rounds),
            max_steps: args.max_steps.or(file.max_steps),
            stop: args.stop.clone().or_else(|| file.stop.clone()),
            trace: args.trace.clone().or_else(|| file.trace.clone()),
            stats: args.stats.clone().or_else(|| file.stats.clone()),
            trials,
            unchecked: args.unchecked || file.unchecked.unwrap_or(false),
            verbose: args.verbose.max(file.verbose.unwrap_or(0)),
        }
    }

    fn run_params(&self, v: &mut Violations) -> Option<RunParams> {
        let read = |path: &str| fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")));
        let kind = v.check("--topology", self.topology.as_deref().unwrap_or("chain").parse::<TopologyKind>());

        let (init, init_len) = match self.init.as_deref() {
            None | Some("random") => (None, None),
            Some(csv) => match v.check("--init", csv.parse::<Configuration>()) {
                Some(c) => {
                    let n = c.len();
                    (Some(c), Some(n))
                }
                None => (None, None),
            },
        };
        if init.is_some() && self.drift.is_some() {
            v.push("--drift only applies to --init random".into());
        }
        let size = self.size.or(init_len).unwrap_or(DEFAULT_SIZE);
        if let (Some(n), true) = (init_len, self.size.is_some()) {
            if n != size {
                v.push(format!("--init lists {n} clocks but --size is {size}"));
            }
        }
        let topology = kind.and_then(|k| v.check("--topology/--size", Topology::new(k, size)));

        let mut roles = vec![ProcessorRole::Correct; size];
        if !self.fault.is_empty() && self.fault.len() != 1 && self.fault.len() != self.faulty.len() {
            v.push(format!("{} --fault values for {} --faulty processors", self.fault.len(), self.faulty.len()));
        }
        if self.faulty.is_empty() && !self.fault.is_empty() {
            v.push("--fault given without --faulty".into());
        }
        for (i, &p) in self.faulty.iter().enumerate() {
            let spec = self.fault.get(i).or(self.fault.first()).map_or("crash", String::as_str);
            let role = v.check("--fault", parse_fault(spec, self.seed, read));
            if p >= size {
                v.push(format!("--faulty {p} is out of range for {size} processors"));
            } else if let Some(role) = role {
                if roles[p].is_faulty() {
                    v.push(format!("--faulty {p} given twice"));
                }
                roles[p] = role;
            }
        }
        let faulty = roles.iter().filter(|r| r.is_faulty()).count();
        if faulty > 1 && !self.unchecked {
            v.push(format!("{faulty} faulty processors configured; at most one is allowed without --unchecked"));
        }

        let activation = match self.activation.as_deref() {
            None => Some(ActivationPolicy::EveryK(1)),
            Some(s) => v.check("--activation", parse_activation(s, self.seed, read)),
        };
        let policy = v.check("--scheduler", parse_scheduler(self.scheduler.as_deref().unwrap_or("strongly-fair"), self.seed, read));
        let stop = match self.stop.as_deref() {
            None | Some("on-inv") => Some(StopCondition::OnInv),
            Some("exhaust") => Some(StopCondition::Exhaust),
            Some(s) => match s.strip_prefix("window:").map(str::parse::<u64>) {
                Some(Ok(w)) => Some(StopCondition::OnInvPlusWindow(w)),
                _ => {
                    v.push(format!("--stop `{s}`: expected on-inv, window:<rounds> or exhaust"));
                    None
                }
            },
        };
        let init = match init {
            Some(c) => InitSpec::Explicit(c),
            None => InitSpec::Random { target_l: self.drift.unwrap_or(DEFAULT_DRIFT), seed: self.seed },
        };

        let (topology, activation, policy, stop) = (topology?, activation?, policy?, stop?);
        let mut params = RunParams::new(topology, init).with_policy(policy).with_stop(stop);
        params.roles = roles;
        params.activation = activation;
        params.seed = self.seed;
        params.unchecked = self.unchecked;
        if let Some(r) = self.max_rounds {
            params.max_rounds = r;
        }
        if let Some(s) = self.max_steps {
            params.max_steps = s;
        }
        if v.0.is_empty() {
            v.check("parameters", params.validate());
            if matches!(params.init, InitSpec::Random { .. }) {
                v.check("--init random", unison_core::engine::initial_configuration(&params));
            }
        }
        Some(params)
    }
}

/// Statistics file written by `scenario`.
#[derive(Debug, Serialize)]
struct ScenarioStats<'a> {
    scenario: &'a str,
    label: &'a str,
    passed: bool,
    results: &'a [AssertionResult],
    stats: &'a unison_core::engine::RunStats,
}

/// Statistics file written when a run aborts on an engine error.
#[derive(Debug, Serialize)]
struct FailureStats {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Runs a validated configuration. Returns the process exit code.
pub fn execute(config: &CliConfig) -> i32 {
    match execute_inner(config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit::USAGE
        }
    }
}

fn execute_inner(config: &CliConfig) -> std::io::Result<i32> {
    match &config.command {
        Command::Run(params) => execute_run(params, config),
        Command::Scenario { name, options } => execute_scenario(name, options, config),
        Command::Check { battery, corpus } => execute_check(battery, corpus, config),
    }
}

fn execute_run(params: &RunParams, config: &CliConfig) -> std::io::Result<i32> {
    let (trace, stats) = match run(params) {
        Ok(r) => r,
        Err(e) => {
            let step = match &e {
                Error::ScriptViolation { step, .. } | Error::Deadlock { step } => Some(*step),
                _ => None,
            };
            let property = match &e {
                Error::ScriptViolation { .. } => "script-validity",
                Error::Deadlock { .. } => "no-deadlock",
                Error::Overflow(_) => "no-overflow",
                _ => "run-setup",
            };
            eprintln!("violation: {property} at step {}: {e}", step.map_or("?".to_string(), |s| s.to_string()));
            if let Some(path) = &config.stats {
                write_json(path, &FailureStats { error: format!("{property}: {e}"), step })?;
            }
            return Ok(exit::VIOLATION);
        }
    };
    if let Some(path) = &config.trace {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        encode_trace(&trace, &mut out).map_err(|e| std::io::Error::other(e.to_string()))?;
        out.flush()?;
    }
    if let Some(path) = &config.stats {
        write_json(path, &stats)?;
    }
    if let Some(v) = stats.violations.first() {
        eprintln!("violation: {} at step {}: {}", v.property, v.step, v.detail);
        return Ok(exit::VIOLATION);
    }
    match stats.rounds_to_inv {
        Some(r) => {
            println!("stabilized: rounds_to_inv={r} steps_to_inv={} initial_l={}", stats.steps_to_inv.unwrap_or(0), stats.initial_l);
            Ok(exit::OK)
        }
        None => {
            println!("not stabilized after {} rounds ({} steps), initial_l={}", stats.rounds, stats.steps, stats.initial_l);
            Ok(exit::NOT_STABILIZED)
        }
    }
}

fn execute_scenario(name: &str, options: &CatalogOptions, config: &CliConfig) -> std::io::Result<i32> {
    let list = match scenarios::by_name(name, options) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit::USAGE);
        }
    };
    let mut code = exit::OK;
    let mut records = Vec::new();
    let runs: Vec<_> = list.iter().map(|s| (s, s.execute())).collect();
    for (scenario, result) in &runs {
        match result {
            Ok(r) => {
                println!("{} [{}]: {}", r.name, scenario.label, if r.passed() { "pass" } else { "FAIL" });
                for f in r.failures() {
                    let at = f.step.map_or("-".to_string(), |s| s.to_string());
                    eprintln!("violation: {} in {} at step {at}: {}", f.assertion, r.name, f.detail);
                    code = exit::VIOLATION;
                }
                if let Some(path) = &config.trace {
                    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
                    encode_trace(&r.trace, &mut out).map_err(|e| std::io::Error::other(e.to_string()))?;
                    out.flush()?;
                }
            }
            Err(e) => {
                eprintln!("violation: {} aborted: {e}", scenario.name);
                code = exit::VIOLATION;
            }
        }
    }
    if let Some(path) = &config.stats {
        for (scenario, result) in &runs {
            if let Ok(r) = result {
                records.push(ScenarioStats {
                    scenario: &r.name,
                    label: &scenario.label,
                    passed: r.passed(),
                    results: &r.results,
                    stats: &r.stats,
                });
            }
        }
        if records.len() == 1 {
            write_json(path, &records[0])?;
        } else {
            write_json(path, &records)?;
        }
    }
    Ok(code)
}

fn execute_check(battery: &str, corpus: &Corpus, config: &CliConfig) -> std::io::Result<i32> {
    let reports: Vec<CheckReport> = match checks::by_name(battery, corpus) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit::USAGE);
        }
    };
    let mut code = exit::OK;
    for r in &reports {
        println!("{}: {} cases, {} counterexamples", r.name, r.cases, r.counterexamples.len());
        if let Some(c) = r.counterexamples.first() {
            let at = c.step.map_or("-".to_string(), |s| s.to_string());
            eprintln!("violation: {} in {} at step {at}: {}", r.name, c.case, c.detail);
            code = exit::VIOLATION;
        }
    }
    if let Some(path) = &config.stats {
        write_json(path, &reports)?;
    }
    Ok(code)
}
