use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flownmt::datasim::{augment, distill, load_corpus, save_corpus, Corpus};
use flownmt::harness::{
    corpora_for, load_model, score, sweep, translate_corpus, train_run, Checkpoint, RunConfig, SweepDim, Trainer,
};
use flownmt::{Error, Result};

#[derive(Parser)]
#[command(name = "flownmt", version, about = "Latent-variable NMT with normalizing-flow posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key=value lines); defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Beam width for decoding.
    #[arg(long)]
    beam: Option<usize>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(beam) = self.beam {
            cfg.eval_beam = beam;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, last.ckpt and best.ckpt under --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode every source of a corpus file.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score hypotheses against references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Train one run per grid point and print a results table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// dropout, latent_dim, flow_count or ortho_columns.
        #[arg(long)]
        dimension: SweepDim,
        /// Comma-separated grid; the standard grid when absent.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Relabel a corpus with a teacher's beam-search outputs.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write original plus distilled pairs.
        #[arg(long)]
        augment: bool,
    },
    /// Write the synthetic train.tsv and dev.tsv a config would train on.
    GenData {
        #[command(flatten)]
        common: Common,
    },
}

fn check_vocab(corpus: &Corpus, vocab: usize) -> Result<()> {
    if let Some(v) = corpus.meta("vocab_size") {
        if v.parse::<usize>().ok() != Some(vocab) {
            return Err(Error::Config(format!("corpus vocab_size {v} does not match model vocab {vocab}")));
        }
    }
    for pair in &corpus.pairs {
        if let Some(&id) = pair.src.iter().find(|&&id| id >= vocab) {
            return Err(Error::OutOfVocab { id, vocab });
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { common, resume } => {
            let cfg = common.run_config()?;
            let report = match resume {
                None => train_run(cfg)?.1,
                Some(path) => {
                    let mut ckpt = Checkpoint::load(path)?;
                    ckpt.config.out_dir = cfg.out_dir.clone();
                    let (train, dev) = corpora_for(&ckpt.config)?;
                    Trainer::resume(ckpt, train, dev)?.run()?
                }
            };
            if let Some(best) = report.best() {
                println!("best dev step {}: {}", best.step, best.csv_row());
            }
            println!("collapse status: {:?}", report.status);
        }
        Command::Translate {
            common,
            checkpoint,
            input,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let corpus = load_corpus(&input)?;
            check_vocab(&corpus, cfg.model.vocab_size)?;
            let beam = common.beam.unwrap_or(cfg.eval_beam);
            let out = translate_corpus(&model, &cfg, &corpus, beam)?;
            save_corpus(&out, common.out()?)?;
            println!("translated {} sentences", out.len());
        }
        Command::Eval { common, hyp, reference } => {
            let hyps = load_corpus(&hyp)?.targets();
            let refs = load_corpus(&reference)?.targets();
            let s = score(&hyps, &refs)?;
            let text = format!(
                "token_accuracy={}\nexact_match={}\noverlap={}\n",
                s.token_accuracy, s.exact_match, s.overlap
            );
            print!("{text}");
            if let Some(out) = &common.out {
                fs::write(out, text)?;
            }
        }
        Command::Sweep { common, dimension, grid } => {
            let cfg = common.run_config()?;
            let grid = if grid.is_empty() { dimension.default_grid() } else { grid };
            let table = sweep(dimension, &grid, &cfg)?;
            print!("{}", table.render());
            if let Some(out) = &common.out {
                fs::create_dir_all(out)?;
                fs::write(out.join(format!("{dimension}.md")), table.render())?;
                fs::write(out.join(format!("{dimension}.csv")), table.to_csv())?;
            }
        }
        Command::Distill {
            common,
            checkpoint,
            input,
            augment: with_original,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let corpus = load_corpus(&input)?;
            check_vocab(&corpus, cfg.model.vocab_size)?;
            let beam = common.beam.unwrap_or(5);
            let longest = corpus.pairs.iter().map(|p| p.src.len()).max().unwrap_or(1);
            let d = distill(&model, &corpus, beam, cfg.decode_limit(longest))?;
            let out = if with_original { augment(&corpus, &d.corpus) } else { d.corpus };
            save_corpus(&out, common.out()?)?;
            println!("wrote {} pairs, skipped {}", out.len(), d.skipped);
        }
        Command::GenData { common } => {
            let cfg = common.run_config()?;
            let dir = common.out()?;
            let (train, dev) = corpora_for(&cfg)?;
            fs::create_dir_all(dir)?;
            save_corpus(&train, dir.join("train.tsv"))?;
            save_corpus(&dev, dir.join("dev.tsv"))?;
            println!("wrote {} train and {} dev pairs", train.len(), dev.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
