//! Character-level LSTM training on simulated resistive cross-point arrays.
//!
//! Weight matrices live on [`tile::AnalogTile`]s, which model noisy,
//! saturating, quantized analog products and the stochastic pulse update of
//! resistive devices. An `fp` tile mode runs the same network with exact
//! arithmetic as a reference.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod device;
pub mod error;
pub mod lstm;
pub mod matrix;
pub mod par;
pub mod perf;
pub mod rng;
pub mod tile;
pub mod train;

pub use config::ExperimentConfig;
pub use corpus::{load_corpus, Corpus};
pub use device::{Preset, Rounding, RpuConfig};
pub use error::{Error, Result};
pub use lstm::{HeadInit, HiddenState, LstmNetwork, LstmShape, NetworkOptions};
pub use tile::{AnalogTile, TileMode};
pub use train::{evaluate, train_epoch, TrainConfig, TrainerState};
