use std::path::PathBuf;
use std::process::ExitCode;

use causaltext::backends::BackendOverrides;
use causaltext::commands::{cache, consensus, evaluate, generate, graphgen, transfer};
use causaltext::config::BackendKind;
use causaltext::{CliError, Config};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causaltext", version, about = "Generate and evaluate text annotated with causal graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<Config, CliError> {
        let mut config = Config::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct BackendArgs {
    /// `http` or `mock`.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Mock script (JSON, `"kind": "rules"` or `"simulated"`); implies the mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

impl BackendArgs {
    fn overrides(&self) -> BackendOverrides {
        BackendOverrides { kind: self.backend, mock_script: self.mock_script.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample random DAGs and write one JSON file per graph.
    Graphgen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Graphs per node count, overriding the config.
        #[arg(long)]
        per_n: Option<usize>,
    },
    /// Assign concepts and write text for every graph into a JSONL store.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        /// Directory written by `graphgen`.
        #[arg(long)]
        graphs: PathBuf,
        /// Store directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue an existing store, skipping stored ids.
        #[arg(long)]
        resume: bool,
    },
    /// Score predicted graphs against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        /// Store directory written by `generate`.
        #[arg(long)]
        store: PathBuf,
        /// JSONL of `{id, adjacency, support?}` or consensus output; the stored graphs when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// JSONL of `{id, adjacency}`; causal discovery on the stored text when omitted.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement between generated-corpus and real-corpus scores.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Score table CSV: algorithm,n,corpus,f1,shd,sid.
        #[arg(long)]
        scores: PathBuf,
        /// Sampled permutations.
        #[arg(long)]
        b_perms: Option<usize>,
        /// Enumerate all within-bucket permutations.
        #[arg(long)]
        exhaustive: bool,
        /// Add leave-one-algorithm-out tables.
        #[arg(long)]
        loo: bool,
        /// Bootstrap intervals, optionally with the replicate count.
        #[arg(long, num_args = 0..=1, value_name = "B")]
        bootstrap: Option<Option<usize>>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Majority-vote consensus graphs and agreement from annotator ratings.
    Consensus {
        #[command(flatten)]
        common: Common,
        /// CSV: text_id,i,j,rater_id,label.
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect or clear the verifier response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Inspect {
        #[arg(long)]
        dir: PathBuf,
    },
    Clear {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Graphgen { common, out, per_n } => {
            let mut config = common.load()?;
            if let Some(k) = per_n {
                config.graphgen.per_n = k;
            }
            let s = graphgen::graphgen(&config, &out)?;
            println!("wrote {} graphs to {}", s.written, out.display());
            for (n, k) in s.per_n {
                println!("  n={n}: {k}");
            }
        }
        Command::Generate { common, backend, graphs, out, resume } => {
            let config = common.load()?;
            let opts = generate::GenerateOptions { resume, backends: backend.overrides() };
            let m = generate::generate(&config, &graphs, &out, &opts)?;
            println!("{} samples in {}", m.records, out.display());
            if let Some(rate) = m.success_rate {
                println!("  loop success rate {rate:.3}");
            }
            if let Some(it) = m.iterations {
                println!("  iterations median {} mean {:.2}", it.median, it.mean);
            }
            if let Some(t) = m.tokens.per_sample {
                println!("  tokens per sample median {}", t.median);
            }
        }
        Command::Evaluate { common, backend, store, reference, predictions, out } => {
            let config = common.load()?;
            let opts = evaluate::EvaluateOptions { reference, predictions, backends: backend.overrides() };
            let report = evaluate::evaluate_store(&config, &store, &out, &opts)?;
            print_summary(&report.summary);
        }
        Command::Transfer { common, scores, b_perms, exhaustive, loo, bootstrap, out } => {
            let config = common.load()?;
            let opts = transfer::TransferOptions {
                permutations: b_perms,
                seed: common.seed,
                exhaustive,
                loo,
                bootstrap: bootstrap.is_some(),
                bootstrap_replicates: bootstrap.flatten(),
            };
            let report = transfer::transfer(&config, &scores, &opts)?;
            print!("{}", transfer::render(&report));
            if let Some(path) = out {
                causaltext::write_json(&path, &report)?;
            }
        }
        Command::Consensus { common, ratings, out } => {
            let config = common.load()?;
            let (_, report) = consensus::consensus(&config, &ratings, &out)?;
            println!("{} texts, alpha {:.4}", report.texts, report.alpha);
            println!(
                "  {} borderline edges, {} flagged graphs, {} projected",
                report.low_agreement.edges.len(),
                report.low_agreement.graphs.iter().filter(|g| g.flagged).count(),
                report.projected.len()
            );
        }
        Command::Cache { action } => match action {
            CacheAction::Inspect { dir } => print_json(&cache::inspect(&dir)?),
            CacheAction::Clear { dir } => println!("removed {} entries", cache::clear(&dir)?),
        },
    }
    Ok(())
}

fn print_summary(s: &evaluate::EvaluationSummary) {
    println!("{} samples", s.samples);
    println!("{:>4} {:>6} {:>8} {:>8} {:>8} {:>8}", "n", "count", "f1", "shd", "sid", "p95 shd");
    for (n, b) in &s.per_n {
        println!(
            "{n:>4} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            b.samples, b.f1.mean, b.shd.mean, b.sid.mean, b.shd.p95
        );
    }
    if let Some(b) = &s.overall {
        println!(
            "{:>4} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            "all", b.samples, b.f1.mean, b.shd.mean, b.sid.mean, b.shd.p95
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
