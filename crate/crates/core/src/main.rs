//! `recipegen`: preprocess a recipe corpus, train the personalized
//! generator, decode held-out recipes and score them.
//!
//! Exit status: 0 on success, 1 on internal failures (diverged training,
//! model errors), 2 on bad input or configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recipegen::config::Config;
use recipegen::evaluation::{mrr, uma};
use recipegen::model::Variant;
use recipegen::{pipeline, Error};

#[derive(Debug, Parser)]
#[command(name = "recipegen", version, about = "Personalized recipe generation pipeline")]
struct Cli {
    /// TOML configuration file; built-in defaults apply to every key it omits.
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set train.batch_size=8`.
    /// Repeatable; applied after the file and before the dedicated flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,

    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory for all derived artifacts (same as `--set paths.workdir=DIR`).
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug). `RUST_LOG` takes precedence.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter the raw corpus, split it per user and write profiles and statistics.
    Preprocess(PreprocessArgs),
    /// Train the BPE vocabulary on the training recipes.
    Tokenize(TokenizeArgs),
    /// Train one model variant and write its best checkpoint and epoch log.
    Train(TrainArgs),
    /// Generate a recipe for every test interaction.
    Generate(GenerateArgs),
    /// Score generation files and write the metric report.
    Evaluate(EvaluateArgs),
    /// Rank each test case's gold user against decoy users by likelihood.
    Rank(RankArgs),
    /// Print the fully resolved configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Raw recipes file, one JSON record per line.
    #[arg(long, value_name = "FILE")]
    recipes: Option<PathBuf>,
    /// Raw interactions file (CSV with a header, or JSON lines).
    #[arg(long, value_name = "FILE")]
    interactions: Option<PathBuf>,
    /// Technique lexicon, one technique per line.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    /// Target BPE vocabulary size, specials included.
    #[arg(long, value_name = "N")]
    vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Model variant: enc_dec, prior_tech, prior_recipe or prior_name.
    #[arg(long, value_name = "NAME")]
    variant: Option<Variant>,
    /// Number of training epochs.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Where to write the checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Model variant the checkpoint must hold.
    #[arg(long, value_name = "NAME")]
    variant: Option<Variant>,
    /// Top-k sampling width; 1 decodes greedily.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Checkpoint to decode with.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Where to write the generations.
    #[arg(long, short = 'o', value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Generation files to score (repeatable). Defaults to every
    /// `generations_*.jsonl` in the work directory.
    #[arg(long = "generations", short = 'g', value_name = "FILE")]
    generations: Vec<PathBuf>,
    /// Where to write the JSON report; a `.txt` table is written beside it.
    #[arg(long, short = 'o', value_name = "FILE")]
    output: Option<PathBuf>,
    /// Model variant whose checkpoint `--checkpoint` refers to.
    #[arg(long, value_name = "NAME")]
    variant: Option<Variant>,
    /// Checkpoint of the configured variant.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Model variant the checkpoint must hold.
    #[arg(long, value_name = "NAME")]
    variant: Option<Variant>,
    /// Checkpoint to score with.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Number of decoy users per case.
    #[arg(long, value_name = "N")]
    decoys: Option<usize>,
}

fn parse_override(raw: &str) -> Result<(String, String), String> {
    let (key, value) = raw.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {raw:?}"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(format!("empty key in {raw:?}"));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

fn path_value(p: &std::path::Path) -> String {
    // quoted so the override parser never reinterprets the path
    toml::Value::String(p.display().to_string()).to_string()
}

impl Cli {
    /// Overrides in precedence order: `--set`, global flags, command flags.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = self.overrides.clone();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("seed", s.to_string());
        }
        if let Some(w) = &self.workdir {
            push("paths.workdir", path_value(w));
        }
        let quoted = |v: Variant| format!("\"{v}\"");
        match &self.command {
            Command::Preprocess(a) => {
                if let Some(p) = &a.recipes {
                    push("paths.recipes", path_value(p));
                }
                if let Some(p) = &a.interactions {
                    push("paths.interactions", path_value(p));
                }
                if let Some(p) = &a.lexicon {
                    push("paths.lexicon", path_value(p));
                }
            }
            Command::Tokenize(a) => {
                if let Some(n) = a.vocab_size {
                    push("tokenizer.vocab_size", n.to_string());
                }
            }
            Command::Train(a) => {
                if let Some(v) = a.variant {
                    push("model.variant", quoted(v));
                }
                if let Some(n) = a.epochs {
                    push("train.epochs", n.to_string());
                }
                if let Some(p) = &a.checkpoint {
                    push("paths.checkpoint", path_value(p));
                }
            }
            Command::Generate(a) => {
                if let Some(v) = a.variant {
                    push("model.variant", quoted(v));
                }
                if let Some(k) = a.k {
                    push("generate.k", k.to_string());
                }
                if let Some(p) = &a.checkpoint {
                    push("paths.checkpoint", path_value(p));
                }
                if let Some(p) = &a.output {
                    push("paths.generations", path_value(p));
                }
            }
            Command::Evaluate(a) => {
                if let Some(v) = a.variant {
                    push("model.variant", quoted(v));
                }
                if let Some(p) = &a.checkpoint {
                    push("paths.checkpoint", path_value(p));
                }
                if let Some(p) = &a.output {
                    push("paths.report", path_value(p));
                }
            }
            Command::Rank(a) => {
                if let Some(v) = a.variant {
                    push("model.variant", quoted(v));
                }
                if let Some(p) = &a.checkpoint {
                    push("paths.checkpoint", path_value(p));
                }
                if let Some(n) = a.decoys {
                    push("evaluate.decoys", n.to_string());
                }
            }
            Command::ShowConfig => {}
        }
        out
    }
}

fn run(cli: &Cli) -> recipegen::Result<()> {
    let config = Config::resolve(cli.config.as_deref(), &cli.overrides())?;
    match &cli.command {
        Command::Preprocess(_) => {
            let stats = pipeline::preprocess(&config)?;
            print!("{}", stats.to_table());
        }
        Command::Tokenize(_) => {
            let bpe = pipeline::tokenize(&config)?;
            println!("bpe vocabulary: {} tokens ({} merges)", bpe.vocab_size(), bpe.merges().len());
        }
        Command::Train(_) => {
            let summary = pipeline::train_model(&config)?;
            if let Some(last) = summary.log.last() {
                println!(
                    "trained {} for {} epoch(s); best epoch {}; last train ppl {:.4}",
                    config.model.variant,
                    summary.log.len(),
                    summary.best_epoch,
                    last.train_ppl
                );
            }
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Generate(_) => {
            for path in pipeline::generate_all(&config)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate(a) => {
            let files = if a.generations.is_empty() {
                pipeline::default_generation_files(&config)
            } else {
                a.generations.clone()
            };
            let report = pipeline::evaluate(&config, &files)?;
            print!("{}", report.to_table());
            println!("report: {}", config.report_path().display());
        }
        Command::Rank(_) => {
            let (records, path) = pipeline::rank(&config)?;
            let ranks: Vec<usize> = records.iter().map(|r| r.rank).collect();
            println!("cases {}  uma {:.4}  mrr {:.4}", ranks.len(), uma(&ranks), mrr(&ranks));
            println!("ranks: {}", path.display());
        }
        Command::ShowConfig => print!("{}", config.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_user_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}
