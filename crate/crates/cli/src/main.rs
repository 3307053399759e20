use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fgat::pipeline::{self, RunConfig};

/// Hierarchical graph-attention outfit recommender.
///
/// Settings come from an optional `key=value` config file, then from the
/// flags below, then from repeated `--set key=value` overrides.
#[derive(Parser, Debug)]
#[command(name = "fgat", version)]
struct Cli {
    /// Config file with one key=value per line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream (required).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding interactions.tsv, outfits.tsv, items.tsv and feature files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Use the planted-cluster synthetic dataset instead of files.
    #[arg(long, global = true)]
    synthetic: bool,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Evaluation worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra override, e.g. --set heads=2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a dataset, then print a summary.
    Ingest,
    /// Write the configured synthetic dataset to a directory.
    Synth {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Train and keep the best-validation checkpoint.
    Train {
        /// Continue from last.state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Rank test interactions and score compatibility; writes report.txt.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the top-k unseen outfits for one user.
    Recommend {
        #[arg(long)]
        user: u64,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fill-in-the-blank accuracy on test outfits.
    Fltb {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write propagated embeddings as users.feat, outfits.feat, items.feat.
    ExportEmbeddings {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> fgat::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    if cli.synthetic {
        cfg.synthetic = true;
    }
    if let Some(e) = cli.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = cli.lr {
        cfg.train.lr = lr;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fgat::Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> fgat::Result<()> {
    let cfg = resolve(&cli)?;
    pipeline::init_threads(cfg.threads);
    match &cli.command {
        Command::Ingest => println!("{}", pipeline::cmd_ingest(&cfg)?),
        Command::Synth { dir } => {
            let summary = pipeline::cmd_synth(&cfg, dir)?;
            println!("wrote {}\n{summary}", dir.display());
        }
        Command::Train { resume } => {
            let outcome = pipeline::cmd_train(&cfg, *resume)?;
            for rec in &outcome.epochs {
                println!("{}", rec.log_line());
            }
            println!(
                "best epoch {} (val HR@{} {:.4}); checkpoint {}",
                outcome.best_epoch,
                cfg.k,
                outcome.best_val_hr,
                cfg.out.join(pipeline::MODEL_FILE).display()
            );
        }
        Command::Evaluate { checkpoint } => {
            let report = pipeline::cmd_evaluate(&cfg, checkpoint.as_deref())?;
            print!("{}", report.render());
        }
        Command::Recommend { user, k, checkpoint } => {
            for (rank, (outfit, score)) in pipeline::cmd_recommend(&cfg, checkpoint.as_deref(), *user, *k)?
                .into_iter()
                .enumerate()
            {
                println!("{}\t{outfit}\t{score:.6}", rank + 1);
            }
        }
        Command::Fltb { checkpoint } => {
            let s = pipeline::cmd_fltb(&cfg, checkpoint.as_deref())?;
            println!("fltb_accuracy={:.4} ({} of {} trials)", s.accuracy, s.correct, s.trials);
        }
        Command::ExportEmbeddings { dir, checkpoint } => {
            for path in pipeline::cmd_export_embeddings(&cfg, checkpoint.as_deref(), dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
