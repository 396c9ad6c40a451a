use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ftmkit::pipeline::{Run, RunConfig, Variant};
use ftmkit::LmTag;

/// Lattice-based false trigger mitigation experiments.
#[derive(Parser, Debug)]
#[command(name = "ftmkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `out` directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate corpora and utterances, train missing LMs, decode lattices.
    GenData(Common),
    /// Train one LM (`base` or `chatter`), or both.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Decode utterances into paired lattices with the stored LMs.
    Decode(Common),
    /// Train one classifier variant, or every configured variant.
    TrainFtm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score trained checkpoints and write summary, DET and error-matrix files.
    Eval(Common),
    /// Write report.md for the run directory.
    Report(Common),
}

/// Bad arguments found after clap parsing; exits 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn open(c: &Common) -> Result<Run> {
    let text = std::fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    let mut cfg = RunConfig::from_text(&text).with_context(|| format!("in {}", c.config.display()))?;
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    Ok(Run::from_config(cfg))
}

fn print_splits(s: &ftmkit::pipeline::DataSummary) {
    println!("split\tTT\tFT");
    for (split, tt, ft) in &s.splits {
        println!("{split}\t{tt}\t{ft}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let run = open(&c)?;
            print_splits(&run.gen_data()?);
            println!("wrote {}", run.path("data/manifest.tsv").display());
        }
        Command::TrainLm { common, variant } => {
            let which = match variant.as_deref() {
                None => None,
                Some("base") => Some(LmTag::Base),
                Some("chatter") => Some(LmTag::Chatter),
                Some(other) => return Err(UsageError(format!("unknown LM `{other}` (expected base or chatter)")).into()),
            };
            let run = open(&common)?;
            println!("model\tin_domain_ppl\tchatter_ppl\town_domain_lower");
            for r in run.train_lm(which)? {
                let own = match r.tag {
                    LmTag::Base => r.in_domain_ppl < r.chatter_ppl,
                    LmTag::Chatter => r.chatter_ppl < r.in_domain_ppl,
                };
                println!("{}\t{:.3}\t{:.3}\t{}", r.tag, r.in_domain_ppl, r.chatter_ppl, own);
            }
        }
        Command::Decode(c) => print_splits(&open(&c)?.decode()?),
        Command::TrainFtm { common, variant } => {
            let variants = match variant {
                Some(v) => vec![v.parse::<Variant>().map_err(|e| UsageError(e.to_string()))?],
                None => Vec::new(),
            };
            let run = open(&common)?;
            let variants = if variants.is_empty() { run.training_order() } else { variants };
            let samples = run.load_samples()?;
            for v in variants {
                let t = run.train_ftm_with(v, &samples)?;
                match t.selected_epoch {
                    Some(e) => {
                        let best = &t.log[e - 1];
                        println!("{v}: epoch {e}/{} selected, cv FT {:.4}", t.log.len(), best.cv_ft);
                    }
                    None => println!("{v}: no training needed"),
                }
            }
        }
        Command::Eval(c) => {
            let run = open(&c)?;
            println!("classifier\tft_at_fs\tauc");
            for r in run.eval()? {
                println!("{}\t{:.4}\t{:.6}", r.classifier, r.ft_at_fs, r.auc);
            }
        }
        Command::Report(c) => {
            let path = open(&c)?.write_report()?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("FTMKIT_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
