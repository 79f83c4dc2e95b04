//! Device count and peak throughput of a set of cross-point arrays.
//!
//! Every array performs one multiply and one add per device per cycle, so the
//! peak rate is `2 · devices / t_meas`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lstm::LstmShape;

/// Default analog integration time per array operation, in seconds.
pub const T_MEAS: f64 = 80e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TileInventory {
    pub tiles: Vec<(usize, usize)>,
    pub t_meas: f64,
}

impl TileInventory {
    pub fn new(tiles: Vec<(usize, usize)>, t_meas: f64) -> Result<Self> {
        if tiles.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(Error::Dimension("tile with a zero dimension".into()));
        }
        if !(t_meas.is_finite() && t_meas > 0.0) {
            return Err(Error::OutOfRange(format!("cycle time must be positive, got {t_meas}")));
        }
        Ok(TileInventory { tiles, t_meas })
    }

    pub fn for_network(shape: &LstmShape) -> Result<Self> {
        shape.validate()?;
        Self::new(shape.tile_shapes(), T_MEAS)
    }

    pub fn devices(&self) -> u64 {
        self.tiles.iter().map(|&(r, c)| (r * c) as u64).sum()
    }

    pub fn throughput(&self) -> f64 {
        throughput(self.devices(), self.t_meas)
    }
}

pub fn count_devices(shape: &LstmShape) -> u64 {
    shape.tile_shapes().iter().map(|&(r, c)| (r * c) as u64).sum()
}

/// Operations per second.
pub fn throughput(devices: u64, t_meas: f64) -> f64 {
    2.0 * devices as f64 / t_meas
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub model: String,
    pub vocab: usize,
    pub tiles: Vec<[usize; 2]>,
    pub devices: u64,
    pub t_meas_s: f64,
    pub ops_per_s: f64,
    pub tera_ops_per_s: f64,
}

pub fn report(shape: &LstmShape, t_meas: f64) -> Result<ThroughputReport> {
    shape.validate()?;
    let inv = TileInventory::new(shape.tile_shapes(), t_meas)?;
    let ops = inv.throughput();
    Ok(ThroughputReport {
        model: shape.name(),
        vocab: shape.vocab,
        tiles: inv.tiles.iter().map(|&(r, c)| [r, c]).collect(),
        devices: inv.devices(),
        t_meas_s: t_meas,
        ops_per_s: ops,
        tera_ops_per_s: ops / 1e12,
    })
}
