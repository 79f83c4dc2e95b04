//! Plain SGD over truncated-BPTT windows, evaluation, and metrics output.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lstm::{HeadInit, HiddenState, LstmNetwork, NetworkOptions};
use crate::tile::TileMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout_p: f64,
    pub bptt: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TileMode,
    pub head_init: HeadInit,
    pub noiseless_eval: bool,
    /// Extra evaluation every this many training windows; 0 evaluates at
    /// epoch ends only.
    pub eval_every: usize,
    /// Record elapsed seconds in the metrics; off writes 0 so that repeated
    /// runs produce identical files.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            dropout_p: 0.0,
            bptt: 100,
            epochs: 5,
            seed: 0,
            mode: TileMode::Analog,
            head_init: HeadInit::Zero,
            noiseless_eval: false,
            eval_every: 0,
            wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("training.{k}");
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(key("lr"), format!("must be a non-negative number, got {}", self.lr)));
        }
        if self.mode == TileMode::Analog && self.lr == 0.0 {
            return Err(Error::config(key("lr"), "must be positive in analog mode"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(key("dropout_p"), format!("must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.bptt == 0 {
            return Err(Error::config(key("bptt"), "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config(key("epochs"), "must be positive"));
        }
        Ok(())
    }

    pub fn network_options(&self) -> NetworkOptions {
        NetworkOptions {
            mode: self.mode,
            dropout_p: self.dropout_p,
            head_init: self.head_init,
            noiseless_eval: self.noiseless_eval,
        }
    }
}

/// Progress counters persisted with checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Completed epochs.
    pub epoch: usize,
    pub windows_seen: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub windows_seen: u64,
    pub train_loss_nats: f64,
    pub test_loss_nats: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,windows_seen,train_loss_nats,test_loss_nats,wall_seconds";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:.3}",
            self.epoch, self.windows_seen, self.train_loss_nats, self.test_loss_nats, self.wall_seconds
        )
    }
}

pub trait MetricsSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRow> {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

/// Append-only CSV, flushed after each row.
pub struct CsvMetrics {
    out: BufWriter<File>,
}

impl CsvMetrics {
    /// Opens `path` for appending and writes the header if the file is new
    /// or empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path.as_ref())?;
        let empty = file.metadata()?.len() == 0;
        let mut out = BufWriter::new(file);
        if empty {
            writeln!(out, "{METRICS_HEADER}")?;
            out.flush()?;
        }
        Ok(CsvMetrics { out })
    }
}

impl MetricsSink for CsvMetrics {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub windows: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Mean loss per character over the test range, with dropout off and the
/// hidden state carried across windows. Runs on a copy with its own random
/// streams, so it never disturbs training and always returns the same value
/// for the same weights.
pub fn evaluate(net: &LstmNetwork, corpus: &Corpus, cfg: &TrainConfig) -> Result<f64> {
    let mut eval = net.evaluation_copy();
    let mut hidden = HiddenState::zeros(eval.shape());
    let (mut loss, mut chars) = (0.0, 0usize);
    for (x, y) in corpus.windows(corpus.test_range(), cfg.bptt)? {
        let out = eval.window_pass(x, y, &hidden, false, 0.0)?;
        loss += out.loss_sum;
        chars += x.len();
        hidden = out.hidden;
    }
    if chars == 0 {
        return Err(Error::Corpus(format!(
            "test range of {} characters holds no window of {}",
            corpus.test_range().len(),
            cfg.bptt
        )));
    }
    Ok(loss / chars as f64)
}

/// One pass over every training window, starting from a zero hidden state.
/// Records a metrics row every `cfg.eval_every` windows (if set) and at the
/// end of the epoch.
pub fn train_epoch(
    net: &mut LstmNetwork,
    corpus: &Corpus,
    cfg: &TrainConfig,
    state: &mut TrainerState,
    sink: &mut dyn MetricsSink,
) -> Result<EpochSummary> {
    check_vocab(net, corpus)?;
    let started = Instant::now();
    let base_seconds = state.wall_seconds;
    let clock = |s: &TrainerState| {
        if cfg.wall_clock {
            base_seconds + started.elapsed().as_secs_f64()
        } else {
            s.wall_seconds
        }
    };
    let epoch = state.epoch + 1;
    let mut hidden = HiddenState::zeros(net.shape());
    let (mut loss, mut chars, mut windows) = (0.0, 0usize, 0usize);
    for (x, y) in corpus.windows(corpus.train_range(), cfg.bptt)? {
        let out = net.window_pass(x, y, &hidden, true, cfg.lr).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} in epoch {epoch}, window {}", windows + 1)),
            other => other,
        })?;
        loss += out.loss_sum;
        chars += x.len();
        windows += 1;
        hidden = out.hidden;
        state.windows_seen += 1;
        if cfg.eval_every > 0 && windows % cfg.eval_every == 0 {
            let test = evaluate(net, corpus, cfg)?;
            state.wall_seconds = clock(state);
            sink.record(&MetricsRow {
                epoch,
                windows_seen: state.windows_seen,
                train_loss_nats: loss / chars as f64,
                test_loss_nats: test,
                wall_seconds: state.wall_seconds,
            })?;
        }
    }
    if windows == 0 {
        return Err(Error::Corpus(format!(
            "training range of {} characters holds no window of {}",
            corpus.train_range().len(),
            cfg.bptt
        )));
    }
    let train_loss = loss / chars as f64;
    let test_loss = evaluate(net, corpus, cfg)?;
    state.epoch = epoch;
    state.wall_seconds = clock(state);
    sink.record(&MetricsRow {
        epoch,
        windows_seen: state.windows_seen,
        train_loss_nats: train_loss,
        test_loss_nats: test_loss,
        wall_seconds: state.wall_seconds,
    })?;
    Ok(EpochSummary {
        epoch,
        windows,
        train_loss,
        test_loss,
    })
}

/// Trains until `cfg.epochs` epochs are complete, calling `after_epoch` once
/// per finished epoch (e.g. to write a checkpoint).
pub fn train(
    net: &mut LstmNetwork,
    corpus: &Corpus,
    cfg: &TrainConfig,
    state: &mut TrainerState,
    sink: &mut dyn MetricsSink,
    mut after_epoch: impl FnMut(&LstmNetwork, &TrainerState, &EpochSummary) -> Result<()>,
) -> Result<Vec<EpochSummary>> {
    cfg.validate()?;
    let mut out = Vec::new();
    while state.epoch < cfg.epochs {
        let summary = train_epoch(net, corpus, cfg, state, sink)?;
        after_epoch(net, state, &summary)?;
        out.push(summary);
    }
    Ok(out)
}

fn check_vocab(net: &LstmNetwork, corpus: &Corpus) -> Result<()> {
    let s = net.shape();
    if s.vocab != corpus.vocab_size() || s.input != corpus.vocab_size() {
        return Err(Error::Dimension(format!(
            "network vocabulary {} does not match corpus vocabulary {}",
            s.vocab,
            corpus.vocab_size()
        )));
    }
    Ok(())
}

/// `n` values spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub lr: f64,
    pub test_loss: f64,
}

/// Trains a fresh network (from `build`) for `cfg.epochs` at each learning
/// rate and reports the final test loss. Diverging rates report infinity.
pub fn lr_sweep(
    rates: &[f64],
    corpus: &Corpus,
    cfg: &TrainConfig,
    build: impl Fn(&TrainConfig) -> Result<LstmNetwork>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(rates.len());
    for &lr in rates {
        let run_cfg = TrainConfig { lr, ..cfg.clone() };
        let mut net = build(&run_cfg)?;
        let mut state = TrainerState::default();
        let mut rows = Vec::new();
        let test_loss = match train(&mut net, corpus, &run_cfg, &mut state, &mut rows, |_, _, _| Ok(())) {
            Ok(epochs) => epochs.last().map_or(f64::INFINITY, |e| e.test_loss),
            Err(Error::NonFinite(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        out.push(SweepPoint { lr, test_loss });
    }
    Ok(out)
}

/// The sweep point with the lowest test loss.
pub fn best_rate(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points.iter().min_by(|a, b| a.test_loss.total_cmp(&b.test_loss))
}
