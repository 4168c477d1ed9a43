//! `bpfhost` — run simulator scenarios, evaluate policy matrices, and
//! re-verify event logs.
//!
//! Exit codes: 0 success, 2 usage (clap), 3 config/log parse error,
//! 4 validation error (dangling references, unknown policy), 5 invariant
//! violation found by replay, 6 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bpfhost::policy::matrix::evaluate_matrix;
use bpfhost::policy::Policy;
use bpfhost::scenario::config::PolicyRef;
use bpfhost::scenario::{
    parse_policies, parse_scenario, replay_log, run_scenario, write_outputs, ConfigError,
    ReplayError, RunError, Scenario,
};

const EXIT_PARSE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_INVARIANT: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Parser)]
#[command(
    name = "bpfhost",
    version,
    about = "Deterministic simulator of a multi-container host running an eBPF-accelerated 5G user plane"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: execute to quiescence or the tick limit, then write
    /// the event log, report, and exfil dumps.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Policies file providing named policies.
        #[arg(long)]
        policies: Option<PathBuf>,
        /// Override the scenario's policy by name.
        #[arg(long)]
        policy: Option<String>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory root.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print per-attack channel summaries.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Evaluate every policy in the policies file against the scenario and
    /// render the attack/policy outcome matrix.
    Matrix {
        scenario: PathBuf,
        #[arg(long)]
        policies: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-verify the structural invariants of an event log produced by
    /// `run`: lifecycle ordering, phase safety, policy soundness.
    Replay {
        log: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            policies,
            policy,
            seed,
            out,
            verbose,
        } => cmd_run(&scenario, policies.as_deref(), policy, seed, &out, verbose),
        Command::Matrix {
            scenario,
            policies,
            seed,
            out,
        } => cmd_matrix(&scenario, &policies, seed, &out),
        Command::Replay { log } => cmd_replay(&log),
    }
}

fn read(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })
}

fn config_exit(e: &ConfigError) -> ExitCode {
    match e {
        ConfigError::Parse(_) | ConfigError::Schema(_) => ExitCode::from(EXIT_PARSE),
        ConfigError::Validation(_) => ExitCode::from(EXIT_VALIDATION),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, ExitCode> {
    parse_scenario(&read(path)?).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        config_exit(&e)
    })
}

fn load_policies(path: Option<&Path>) -> Result<Vec<Policy>, ExitCode> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => parse_policies(&read(p)?).map_err(|e| {
            eprintln!("error: {}: {e}", p.display());
            config_exit(&e)
        }),
    }
}

fn run_exit(e: &RunError) -> ExitCode {
    match e {
        RunError::UnknownPolicy(_) | RunError::Build(_) => ExitCode::from(EXIT_VALIDATION),
    }
}

fn cmd_run(
    scenario_path: &Path,
    policies_path: Option<&Path>,
    policy_override: Option<String>,
    seed: Option<u64>,
    out_root: &Path,
    verbose: bool,
) -> ExitCode {
    let mut scenario = match load_scenario(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let policies = match load_policies(policies_path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if let Some(name) = policy_override {
        scenario.policy = PolicyRef::Named(name);
    }
    let output = match run_scenario(&scenario, &policies, seed) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return run_exit(&e);
        }
    };
    let dir = match write_outputs(&output, out_root) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: writing outputs: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    print!("{}", output.report.summary());
    if verbose {
        for (attack, records) in &output.attack_channels {
            println!("  channel {attack}: {} records", records.len());
        }
        println!("  log: {} events", output.host.log().records().len());
    }
    println!("wrote {}", dir.display());
    ExitCode::SUCCESS
}

fn cmd_matrix(
    scenario_path: &Path,
    policies_path: &Path,
    seed: Option<u64>,
    out_root: &Path,
) -> ExitCode {
    let mut scenario = match load_scenario(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let policies = match load_policies(Some(policies_path)) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let matrix = match evaluate_matrix(&scenario, &policies) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return run_exit(&e);
        }
    };
    let table = matrix.render_table();
    print!("{table}");
    let dir = out_root.join(&scenario.name).join(scenario.seed.to_string());
    if let Err(e) = fs::create_dir_all(&dir)
        .and_then(|_| fs::write(dir.join("matrix.txt"), &table))
        .and_then(|_| fs::write(dir.join("matrix.json"), matrix.to_json()))
    {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::from(EXIT_IO);
    }
    println!("wrote {}", dir.display());
    ExitCode::SUCCESS
}

fn cmd_replay(log_path: &Path) -> ExitCode {
    let text = match read(log_path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match replay_log(&text) {
        Ok(stats) => {
            println!(
                "PASS: {} records, {} syscalls, {} helper calls",
                stats.records, stats.syscalls, stats.helper_calls
            );
            ExitCode::SUCCESS
        }
        Err(e @ ReplayError::Parse { .. }) => {
            eprintln!("FAIL: {e}");
            ExitCode::from(EXIT_PARSE)
        }
        Err(e @ ReplayError::Violation { .. }) => {
            eprintln!("FAIL: {e}");
            ExitCode::from(EXIT_INVARIANT)
        }
    }
}
