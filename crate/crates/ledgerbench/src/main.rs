use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ledgerbench::bench::{self, sweep::SweepSpec, RunConfig};
use ledgerbench::core::profile::ChaincodeProfile;
use ledgerbench::export::{render_json, verify_export};
use ledgerbench::network::{KeygenOptions, NetworkSpec, DEFAULT_POLICY};
use ledgerbench::statedb::server::{ServerConfig, StateServer};
use ledgerbench::statedb::BackendKind;

#[derive(Parser)]
#[command(name = "ledgerbench", version, about = "Permissioned-ledger transaction pipeline benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark.
    Run(RunArgs),
    /// Run every point of a parameter grid and write a combined CSV.
    Sweep {
        /// JSON file with `base` (a run config) and `grid` (field path to values).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Generate a network bootstrap file.
    Keygen {
        #[arg(long, default_value_t = 4)]
        orgs: usize,
        #[arg(long, default_value_t = 1)]
        peers_per_org: usize,
        #[arg(long, default_value_t = 1)]
        clients_per_org: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value = DEFAULT_POLICY)]
        policy: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short, default_value = "network.json")]
        out: PathBuf,
    },
    /// State database server.
    Statedb {
        #[command(subcommand)]
        command: StatedbCommand,
    },
    /// Check an exported ledger: hash chain, commit hashes and orderer signatures.
    VerifyChain {
        file: PathBuf,
        /// Print the ledger as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum StatedbCommand {
    Serve {
        #[arg(long, default_value = "127.0.0.1:5984")]
        listen: String,
        #[arg(long, default_value_t = 1.0)]
        latency_ms: f64,
        /// Directory for the append-only logs; state is in memory only without it.
        #[arg(long)]
        persist: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn parse_profile(s: &str) -> Result<ChaincodeProfile, String> {
    s.parse().map_err(|e: ledgerbench::core::profile::UnknownProfile| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// Run config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    block_timeout_ms: Option<u64>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    remote_endpoint: Option<String>,
    #[arg(long)]
    bulk_ops: bool,
    #[arg(long)]
    msp_cache: bool,
    #[arg(long)]
    policy_cache: bool,
    #[arg(long)]
    vscc_workers: Option<usize>,
    #[arg(long)]
    arrival_rate: Option<f64>,
    /// Load period in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<ChaincodeProfile>,
    #[arg(long, value_enum)]
    lock_mode: Option<Switch>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write commit events of the first peer as JSON lines.
    #[arg(long)]
    commit_feed: Option<PathBuf>,
    /// Deliver blocks to peers over loopback TCP.
    #[arg(long)]
    distributed: bool,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set! {
            channels => c.channels,
            block_size => c.block_size,
            block_timeout_ms => c.block_timeout_ms,
            policy => c.policy,
            backend => c.backend,
            vscc_workers => c.optimizations.vscc_workers,
            arrival_rate => c.arrival_rate,
            duration => c.duration_s,
            profile => c.profile,
            seed => c.seed,
        }
        if self.remote_endpoint.is_some() {
            c.remote_endpoint = self.remote_endpoint.clone();
        }
        if let Some(s) = self.lock_mode {
            c.lock_mode = matches!(s, Switch::On);
        }
        c.optimizations.bulk_ops |= self.bulk_ops;
        c.optimizations.msp_cache |= self.msp_cache;
        c.optimizations.policy_cache |= self.policy_cache;
        c.distributed |= self.distributed;
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let output = bench::run_with_feed(&cfg, args.commit_feed.as_deref())?;
            print!("{}", output.report.table());
            if let Some(out) = &args.out {
                output.write(out)?;
                eprintln!("wrote {}", out.display());
            }
        }
        Command::Sweep { config, out } => {
            let spec = SweepSpec::load(&config)?;
            let reports = bench::sweep::sweep(&spec, &out)?;
            eprintln!("{} runs, wrote {}", reports.len(), out.join("sweep.csv").display());
        }
        Command::Keygen { orgs, peers_per_org, clients_per_org, channels, policy, seed, out } => {
            let spec =
                NetworkSpec::generate(&KeygenOptions { orgs, peers_per_org, clients_per_org, channels, policy, seed });
            spec.check()?;
            spec.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Statedb { command: StatedbCommand::Serve { listen, latency_ms, persist } } => {
            let server = StateServer::start(ServerConfig {
                listen,
                latency: Duration::from_secs_f64(latency_ms.max(0.0) / 1e3),
                persist,
                ..ServerConfig::default()
            })
            .context("starting state server")?;
            eprintln!("listening on {}", server.endpoint());
            server.join();
        }
        Command::VerifyChain { file, json } => {
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            match verify_export(&bytes, None) {
                Ok(export) => {
                    if json {
                        println!("{}", serde_json::to_string_pretty(&render_json(&export))?);
                    } else {
                        println!("ok: {} blocks", export.blocks.len());
                    }
                }
                Err(e) => {
                    println!("invalid: {e}");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
