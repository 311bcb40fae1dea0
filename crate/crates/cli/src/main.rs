use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obfscope::model::Preset;
use obfscope::pipeline::fixture::{self, FixtureConfig};
use obfscope::pipeline::{run, PipelineConfig, PipelineError, Stage, StageArgs, Workspace};

/// Obfuscation scoring and audit triage for EVM runtime bytecode.
#[derive(Parser, Debug)]
#[command(name = "obfscope", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "work")]
    out: PathBuf,
    /// Restrict ingest and scoring to one chain.
    #[arg(long, global = true)]
    chain: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured model preset (desk or paper).
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a `chain,address,bytecode_hex` corpus into the store.
    Ingest { corpus: PathBuf },
    /// Compute structural features for every stored contract.
    Extract,
    /// Train the surrogate on an `address,s_tool,f1..fK` label file.
    Train {
        #[arg(long)]
        labels: PathBuf,
    },
    /// Score every stored contract with the trained checkpoint.
    Score,
    /// Build per-chain emergency, main and watch queues.
    Queues,
    /// Apply one chain's tail cutoff to every other chain.
    Transfer {
        #[arg(long)]
        source: Option<String>,
    },
    /// Selector and opcode lift of the tail, and label shares.
    Enrich,
    /// Cross-chain code reuse overlap and clusters.
    Reuse,
    /// Place incident addresses in their chain's score distribution.
    Align {
        #[arg(long)]
        incidents: PathBuf,
    },
    /// Bundle the reports with a run manifest.
    Report,
    /// Run every stage from ingest to report.
    All {
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        incidents: PathBuf,
        #[arg(long)]
        source: Option<String>,
    },
    /// Write a synthetic corpus, label file and incident file to a directory.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 150)]
        per_chain: usize,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.preset {
        cfg.preset = p;
    }
    cfg.model_config()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    let ws = Workspace::new(&g.out);
    let mut args = StageArgs { chain: g.chain.clone(), ..Default::default() };
    let stages: Vec<Stage> = match cli.command {
        Command::Ingest { corpus } => {
            args.input = Some(corpus);
            vec![Stage::Ingest]
        }
        Command::Extract => vec![Stage::Extract],
        Command::Train { labels } => {
            args.labels = Some(labels);
            vec![Stage::Train]
        }
        Command::Score => vec![Stage::Score],
        Command::Queues => vec![Stage::Queues],
        Command::Transfer { source } => {
            args.source = source;
            vec![Stage::Transfer]
        }
        Command::Enrich => vec![Stage::Enrich],
        Command::Reuse => vec![Stage::Reuse],
        Command::Align { incidents } => {
            args.incidents = Some(incidents);
            vec![Stage::Align]
        }
        Command::Report => vec![Stage::Report],
        Command::All { corpus, labels, incidents, source } => {
            args.input = Some(corpus);
            args.labels = Some(labels);
            args.incidents = Some(incidents);
            args.source = source;
            Stage::ALL.to_vec()
        }
        Command::Synth { dir, per_chain } => {
            let fc = FixtureConfig { per_chain, seed: cfg.seed, ..Default::default() };
            let p = fixture::write(&dir, &fc)?;
            for f in [p.corpus, p.labels, p.incidents] {
                println!("{}", f.display());
            }
            return Ok(());
        }
    };
    for stage in stages {
        let s = run(stage, &ws, &cfg, &args)?;
        println!("{}: {}", s.stage, s.message);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
