//! Command-line front end: `forward`, `protocol`, `jl-check`, `bench`.
//!
//! Flags override config-file entries, which override per-subcommand
//! defaults. Exit codes: 0 success, 2 configuration error, 3 numeric
//! or runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use varkv::config::{parse_noise, OutputFormat, RunConfig, Subcommand};

#[derive(Parser)]
#[command(
    name = "varkv",
    version,
    about = "Scale-pyramid attention, streaming KV cache, and the index protocol it can carry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key=value config file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Final map side (power of two, at least 2).
    #[arg(short, long)]
    n: Option<usize>,
    /// Key/value width.
    #[arg(short, long)]
    d: Option<usize>,
    /// Gram slack, in (0, 0.5).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative noise magnitude, in [0, 1); 0 selects exact mode.
    #[arg(long)]
    eta: Option<f64>,
    /// Trials (protocol, bench) or seeds (jl-check).
    #[arg(long)]
    trials: Option<usize>,
    /// Root of all per-trial randomness.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json or csv.
    #[arg(long)]
    format: Option<String>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Run the one-shot and streaming forward passes and compare them.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Directory for token-map and append-log artifacts.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Run index-protocol trials through the attention engine.
    Protocol {
        #[command(flatten)]
        common: Common,
        /// Noise shape for approximate mode: uniform, low-extreme, or
        /// high-extreme.
        #[arg(long)]
        noise: Option<String>,
        /// Per-trial JSON-lines log.
        #[arg(long)]
        trial_log: Option<PathBuf>,
    },
    /// Measure the Gram acceptance rate of projected keys over seeds.
    JlCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Benchmark cache compressors against protocol recovery.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Scheme spec (repeatable): identity, evict:<keep>,
        /// quant:<bits>, quant-keys:<bits>, quant-values:<bits>,
        /// sketch:<rank>. Defaults to the full grid.
        #[arg(long = "compressor")]
        compressors: Vec<String>,
    },
}

fn build_config(sub: Subcommand, common: &Common) -> varkv::Result<RunConfig> {
    let defaults = RunConfig::defaults_for(sub);
    let mut config = match &common.config {
        Some(path) => RunConfig::load_file(path, defaults)?,
        None => defaults,
    };
    // The invoked subcommand wins over whatever the file says.
    config.subcommand = sub;
    if let Some(n) = common.n {
        config.n = n;
    }
    if let Some(d) = common.d {
        config.d = d;
    }
    if let Some(epsilon) = common.epsilon {
        config.epsilon = epsilon;
    }
    if let Some(eta) = common.eta {
        config.eta = eta;
    }
    if let Some(trials) = common.trials {
        config.trials = trials;
    }
    if let Some(seed) = common.master_seed {
        config.master_seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_path = Some(out.clone());
    }
    if let Some(format) = &common.format {
        config.format = OutputFormat::parse(format)?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> varkv::Result<()> {
    let config = match &cli.command {
        Command::Forward { common, dump_dir } => {
            let mut c = build_config(Subcommand::Forward, common)?;
            if let Some(dir) = dump_dir {
                c.dump_dir = Some(dir.clone());
            }
            c
        }
        Command::Protocol {
            common,
            noise,
            trial_log,
        } => {
            let mut c = build_config(Subcommand::Protocol, common)?;
            if let Some(noise) = noise {
                c.noise = Some(parse_noise(noise)?);
            }
            if let Some(path) = trial_log {
                c.trial_log = Some(path.clone());
            }
            c
        }
        Command::JlCheck { common } => build_config(Subcommand::JlCheck, common)?,
        Command::Bench {
            common,
            compressors,
        } => {
            let mut c = build_config(Subcommand::Bench, common)?;
            if !compressors.is_empty() {
                c.compressors = compressors.clone();
            }
            c
        }
    };
    let text = varkv::cli::run(&config)?;
    match &config.output_path {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
