use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use film_hred::commands::{self, References};
use film_hred::config::RunConfig;
use film_hred::{Error, Result};

/// Multimodal dialogue model with FiLM-conditioned video and audio encoders.
#[derive(Parser)]
#[command(name = "film-hred", version)]
struct Cli {
    /// `key = value` config file, applied after the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Settings preset: 1.a.i, 1.a.ii, 2.a.i, 2.a.ii or synth.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one setting; repeatable. Applied last.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Data root (defaults to $FILM_HRED_DATA, then ./data).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print every setting after layering and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the train split, early-stopping on validation BLEU-4.
    Train,
    /// Train every ablation row with FiLM on and off.
    Ablate {
        /// caption, summary or both.
        #[arg(long, default_value = "both")]
        block: String,
        /// Comma-separated row labels to keep, e.g. "-Caption,-I3D -VGGish".
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rows: Vec<String>,
    },
    /// Write answers for every turn of a split.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid")]
        split: String,
        #[arg(long)]
        beam: Option<usize>,
        /// Answers file; defaults to a new run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an answers file against references.
    Score {
        #[arg(long)]
        candidates: PathBuf,
        /// `segment_id<TAB>reference` file; repeated ids add references.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        references: Option<PathBuf>,
        /// Dataset split whose answers are the references.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Second answers file to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Ask questions about one video interactively.
    Demo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: String,
    },
    /// Write a synthetic dataset with feature files.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_env();
    if let Some(p) = &cli.preset {
        cfg.apply_preset(p)?;
    }
    if let Some(f) = &cli.config {
        cfg.apply_file(f)?;
    }
    if let Some(d) = &cli.data {
        cfg.data_root = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.apply_overrides(&cli.set)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.snapshot());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Usage("no command given; see --help".into()));
    };
    match command {
        Command::Train => {
            let r = commands::cmd_train(&cfg)?;
            for (rank, t) in r.search.iter().enumerate() {
                println!("search {}: lr {:.3e} hidden {} retain {:.3} -> {:.4}", rank + 1, t.trial.lr, t.trial.hidden, t.trial.retain, t.bleu4);
            }
            println!("best validation BLEU-4 {:.4} at epoch {} of {}", r.best_bleu4, r.best_epoch, r.epochs);
            println!("{}", r.run_dir.display());
        }
        Command::Ablate { block, rows } => {
            let r = commands::cmd_ablate(&cfg, &block, &rows)?;
            print!("{}", commands::format_ablation(&r.rows));
            println!("{}", r.run_dir.display());
        }
        Command::Generate { checkpoint, split, beam, out } => {
            if let Some(k) = beam {
                cfg.beam = k;
            }
            let r = commands::cmd_generate(&cfg, &checkpoint, &split, out.as_deref())?;
            println!("{} answers ({:.1}% of tokens in vocabulary)", r.rows, 100.0 * r.coverage);
            println!("{}", r.answers.display());
        }
        Command::Score {
            candidates,
            references,
            dataset,
            baseline,
        } => {
            let refs = match (&references, &dataset) {
                (Some(p), _) => References::Tsv(p),
                (None, Some(p)) => References::Dataset(p),
                (None, None) => return Err(Error::Usage("give --references or --dataset".into())),
            };
            print!("{}", commands::cmd_score(&candidates, refs, baseline.as_deref())?);
        }
        Command::Demo { checkpoint, video } => {
            let stdin = io::stdin();
            commands::cmd_demo(&cfg, &checkpoint, &video, stdin.lock(), io::stdout())?;
        }
        Command::Synth { out } => {
            for (split, n) in commands::cmd_synth(&cfg, &out)? {
                println!("{split}: {n} dialogues");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
