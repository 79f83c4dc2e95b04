//! Command-line front end: `train`, `eval`, `throughput`, `dump-config`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::device::{Preset, Rounding};
use crate::error::{Error, Result};
use crate::lstm::{LstmNetwork, LstmShape};
use crate::perf;
use crate::tile::TileMode;
use crate::train::{self, CsvMetrics, TrainerState};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

#[derive(Debug, Parser)]
#[command(name = "rpu-lstm", version, about = "Train character-level LSTMs on simulated resistive cross-point arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write metrics and checkpoints to the output directory.
    Train {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Continue from a checkpoint; its network and training settings are
        /// used, only `--epochs` and `--no-wall-clock` apply on top.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print the mean test loss of a checkpoint, in nats per character.
    Eval {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the device count and peak throughput of the configured network as JSON.
    Throughput {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Cycle time per array operation, seconds.
        #[arg(long, default_value_t = perf::T_MEAS)]
        t_meas: f64,
    },
    /// Print the fully resolved configuration.
    DumpConfig {
        #[command(flatten)]
        opts: ConfigArgs,
    },
}

/// Configuration sources: an optional JSON file, a device preset, and flags,
/// applied in that order.
#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub bptt: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TileMode>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_chars: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub in_bits: Option<u32>,
    #[arg(long)]
    pub out_bits: Option<u32>,
    #[arg(long, value_parser = parse_rounding)]
    pub rounding: Option<Rounding>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Write 0 instead of elapsed seconds to the metrics.
    #[arg(long)]
    pub no_wall_clock: bool,
    /// Evaluate with exact products instead of the noisy analog readout.
    #[arg(long)]
    pub noiseless_eval: bool,
}

fn parse_mode(s: &str) -> std::result::Result<TileMode, String> {
    match s {
        "analog" => Ok(TileMode::Analog),
        "fp" => Ok(TileMode::Fp),
        _ => Err(format!("unknown mode `{s}` (expected analog or fp)")),
    }
}

fn parse_rounding(s: &str) -> std::result::Result<Rounding, String> {
    match s {
        "nearest" => Ok(Rounding::Nearest),
        "stochastic" => Ok(Rounding::Stochastic),
        _ => Err(format!("unknown rounding `{s}` (expected nearest or stochastic)")),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.rpu.apply_preset(p);
        }
        let t = &mut cfg.training;
        set(&mut t.seed, self.seed);
        set(&mut t.epochs, self.epochs);
        set(&mut t.lr, self.lr);
        set(&mut t.dropout_p, self.dropout);
        set(&mut t.bptt, self.bptt);
        set(&mut t.mode, self.mode);
        set(&mut t.eval_every, self.eval_every);
        if self.no_wall_clock {
            t.wall_clock = false;
        }
        if self.noiseless_eval {
            t.noiseless_eval = true;
        }
        set(&mut cfg.model.depth, self.depth);
        set(&mut cfg.model.hidden, self.hidden);
        if self.vocab.is_some() {
            cfg.model.vocab = self.vocab;
        }
        if self.data.is_some() {
            cfg.data.path = self.data.clone();
        }
        if self.test_chars.is_some() {
            cfg.data.test_chars = self.test_chars;
        }
        set(&mut cfg.output.dir, self.out.clone());
        set(&mut cfg.rpu.in_bits, self.in_bits);
        set(&mut cfg.rpu.out_bits, self.out_bits);
        set(&mut cfg.rpu.rounding, self.rounding);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn corpus_for(cfg: &ExperimentConfig) -> Result<Corpus> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::config("data.path", "no corpus given (use --data or data.path)"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    Corpus::from_text(&text, cfg.data.test_chars_for(text.chars().count()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train { opts, resume } => cmd_train(&opts, resume.as_deref(), out),
        Command::Eval { opts, checkpoint } => cmd_eval(&opts, &checkpoint, out),
        Command::Throughput { opts, t_meas } => {
            let cfg = opts.resolve()?;
            let vocab = match cfg.model.vocab {
                Some(v) => v,
                None if cfg.data.path.is_some() => corpus_for(&cfg)?.vocab_size(),
                None => return Err(Error::config("model.vocab", "needed without a corpus (use --vocab)")),
            };
            let shape = LstmShape::char_model(vocab, cfg.model.hidden, cfg.model.depth);
            let report = perf::report(&shape, t_meas)?;
            writeln!(out, "{}", serde_json::to_string(&report)?)?;
            Ok(())
        }
        Command::DumpConfig { opts } => {
            writeln!(out, "{}", opts.resolve()?.to_json_pretty()?)?;
            Ok(())
        }
    }
}

fn cmd_train(opts: &ConfigArgs, resume: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut cfg = opts.resolve()?;
    let corpus = corpus_for(&cfg)?;
    let (mut net, mut state) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            corpus.check_vocab(&ck.vocab)?;
            let mut training = ck.training;
            set(&mut training.epochs, opts.epochs);
            if opts.no_wall_clock {
                training.wall_clock = false;
            }
            cfg.training = training;
            cfg.model.depth = ck.network.shape().depth;
            cfg.model.hidden = ck.network.shape().hidden;
            if let Some(t) = ck.network.tiles().iter().find(|t| t.mode() == TileMode::Analog) {
                cfg.rpu = t.config().clone();
            }
            cfg.validate()?;
            (ck.network, ck.state)
        }
        None => {
            let shape = cfg.model.shape(corpus.vocab_size())?;
            let net = LstmNetwork::new(shape, cfg.training.network_options(), &cfg.rpu, cfg.training.seed)?;
            (net, TrainerState::default())
        }
    };
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_json_pretty()? + "\n")?;
    let mut metrics = CsvMetrics::open(dir.join(METRICS_FILE))?;
    let vocab = corpus.vocab().to_vec();
    writeln!(
        out,
        "training {} ({} mode) on {} characters, vocabulary {}, {} windows per epoch",
        cfg.model.label(),
        cfg.training.mode.name(),
        corpus.train_range().len(),
        corpus.vocab_size(),
        corpus.window_count(corpus.train_range(), cfg.training.bptt)?
    )?;
    let training = cfg.training.clone();
    train::train(&mut net, &corpus, &training, &mut state, &mut metrics, |net, state, s| {
        save_checkpoint(dir.join(epoch_checkpoint_name(s.epoch)), net, &training, state, &vocab)?;
        save_checkpoint(dir.join(LATEST_CHECKPOINT), net, &training, state, &vocab)?;
        writeln!(
            out,
            "epoch {}: train {:.4} nats, test {:.4} nats",
            s.epoch, s.train_loss, s.test_loss
        )?;
        Ok(())
    })?;
    Ok(())
}

fn cmd_eval(opts: &ConfigArgs, checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let mut opts = opts.clone();
    if opts.config.is_none() {
        opts.config = checkpoint
            .parent()
            .map(|d| d.join(CONFIG_FILE))
            .filter(|p| p.is_file());
    }
    let cfg = opts.resolve()?;
    let corpus = corpus_for(&cfg)?;
    corpus.check_vocab(&ck.vocab)?;
    let mut training = ck.training.clone();
    if opts.noiseless_eval {
        training.noiseless_eval = true;
    }
    let mut network = ck.network;
    network.set_noiseless_eval(training.noiseless_eval);
    let loss = train::evaluate(&network, &corpus, &training)?;
    writeln!(out, "{loss:?}")?;
    Ok(())
}
