//! Resistive device parameters and per-crosspoint sampling.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::rng;

/// Input rounding applied by the DAC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Nearest,
    Stochastic,
}

/// Device and peripheral parameters of one cross-point array.
///
/// `Default` is the reference RPU baseline: 10-slot pulse streams, 0.001 mean
/// step with 30% device-to-device and cycle-to-cycle spread, 2% spread of the
/// up/down ratio, bounds of 0.6 with 30% spread, 0.06 output noise, output
/// saturation at 12, 5-bit DAC and 9-bit ADC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpuConfig {
    /// Pulse slots per update (stochastic stream length), at most 64.
    pub bl: u32,
    pub dw_min: f64,
    pub dw_min_dtod: f64,
    pub dw_min_ctoc: f64,
    pub asym_dtod: f64,
    pub w_bound: f64,
    pub w_bound_dtod: f64,
    pub noise_sigma: f64,
    /// Output saturation level; `null` in JSON means unbounded.
    #[serde(with = "unbounded_as_null")]
    pub out_bound: f64,
    /// DAC bits, 0 disables input quantization.
    pub in_bits: u32,
    /// ADC bits, 0 disables output quantization.
    pub out_bits: u32,
    pub rounding: Rounding,
    /// Divides `dw_min`; 4 gives four times as many states per device.
    pub states_multiplier: f64,
}

impl Default for RpuConfig {
    fn default() -> Self {
        RpuConfig {
            bl: 10,
            dw_min: 0.001,
            dw_min_dtod: 0.30,
            dw_min_ctoc: 0.30,
            asym_dtod: 0.02,
            w_bound: 0.6,
            w_bound_dtod: 0.30,
            noise_sigma: 0.06,
            out_bound: 12.0,
            in_bits: 5,
            out_bits: 9,
            rounding: Rounding::Nearest,
            states_multiplier: 1.0,
        }
    }
}

mod unbounded_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub const MAX_BL: u32 = 64;
pub const MAX_BITS: u32 = 16;

impl RpuConfig {
    pub fn baseline() -> Self {
        Self::default()
    }

    /// Perfect devices and peripherals: no variations, noise, saturation or
    /// quantization. Weight bounds stay at `w_bound`.
    pub fn ideal() -> Self {
        RpuConfig {
            dw_min_dtod: 0.0,
            dw_min_ctoc: 0.0,
            asym_dtod: 0.0,
            w_bound_dtod: 0.0,
            noise_sigma: 0.0,
            out_bound: f64::INFINITY,
            in_bits: 0,
            out_bits: 0,
            ..Self::default()
        }
    }

    /// Mean step per coincidence after the states multiplier.
    pub fn dw_min_effective(&self) -> f64 {
        self.dw_min / self.states_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be a positive finite number, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be finite and >= 0, got {v}")))
            }
        };
        if self.bl == 0 || self.bl > MAX_BL {
            return Err(Error::config("rpu.bl", format!("must be in 1..={MAX_BL}, got {}", self.bl)));
        }
        positive("rpu.dw_min", self.dw_min)?;
        non_negative("rpu.dw_min_dtod", self.dw_min_dtod)?;
        non_negative("rpu.dw_min_ctoc", self.dw_min_ctoc)?;
        non_negative("rpu.asym_dtod", self.asym_dtod)?;
        positive("rpu.w_bound", self.w_bound)?;
        non_negative("rpu.w_bound_dtod", self.w_bound_dtod)?;
        non_negative("rpu.noise_sigma", self.noise_sigma)?;
        if self.out_bound.is_nan() || self.out_bound <= 0.0 {
            return Err(Error::config("rpu.out_bound", format!("must be > 0, got {}", self.out_bound)));
        }
        if self.out_bits > 0 && !self.out_bound.is_finite() {
            return Err(Error::config("rpu.out_bound", "must be finite when out_bits > 0"));
        }
        for (key, bits) in [("rpu.in_bits", self.in_bits), ("rpu.out_bits", self.out_bits)] {
            if bits == 1 || bits > MAX_BITS {
                return Err(Error::config(key, format!("must be 0 or in 2..={MAX_BITS}, got {bits}")));
            }
        }
        positive("rpu.states_multiplier", self.states_multiplier)?;
        Ok(())
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.apply_preset(preset);
        self
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Baseline => {}
            Preset::NoVariation => {
                self.dw_min_dtod = 0.0;
                self.dw_min_ctoc = 0.0;
                self.w_bound_dtod = 0.0;
            }
            Preset::States4x => self.states_multiplier = 4.0,
            Preset::NoAsym => self.asym_dtod = 0.0,
            Preset::NoAsymStates4x => {
                self.asym_dtod = 0.0;
                self.states_multiplier = 4.0;
            }
        }
    }
}

/// Device ablations applied on top of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Baseline,
    /// Removes step and bound variations (asymmetry spread is kept).
    NoVariation,
    States4x,
    NoAsym,
    NoAsymStates4x,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Baseline,
        Preset::NoVariation,
        Preset::States4x,
        Preset::NoAsym,
        Preset::NoAsymStates4x,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::NoVariation => "no-variation",
            Preset::States4x => "states4x",
            Preset::NoAsym => "no-asym",
            Preset::NoAsymStates4x => "no-asym-states4x",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::config("preset", format!("unknown preset `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

/// Sampled parameters of every crosspoint in one array.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceArray {
    pub dw_plus: Matrix,
    pub dw_minus: Matrix,
    pub w_max: Matrix,
    pub w_min: Matrix,
}

impl DeviceArray {
    pub fn rows(&self) -> usize {
        self.dw_plus.rows()
    }

    pub fn cols(&self) -> usize {
        self.dw_plus.cols()
    }

    /// Rebuilds an array from stored parameter matrices, checking invariants.
    pub fn from_parts(dw_plus: Matrix, dw_minus: Matrix, w_max: Matrix, w_min: Matrix) -> Result<Self> {
        let shape = dw_plus.shape();
        if [&dw_minus, &w_max, &w_min].iter().any(|m| m.shape() != shape) {
            return Err(Error::Dimension("device parameter matrices differ in shape".into()));
        }
        let steps_ok = dw_plus
            .as_slice()
            .iter()
            .chain(dw_minus.as_slice())
            .all(|&d| d.is_finite() && d > 0.0);
        let bounds_ok = w_max
            .as_slice()
            .iter()
            .zip(w_min.as_slice())
            .all(|(&hi, &lo)| hi.is_finite() && lo.is_finite() && lo < 0.0 && hi > 0.0);
        if !steps_ok || !bounds_ok {
            return Err(Error::OutOfRange("device parameters violate positivity or bound ordering".into()));
        }
        Ok(DeviceArray {
            dw_plus,
            dw_minus,
            w_max,
            w_min,
        })
    }
}

/// Samples per-device steps, asymmetry and bounds.
///
/// Each device draws four standard normals in a fixed order (step, ratio,
/// upper bound, lower bound) from the stream `(seed, row)`, whether or not the
/// corresponding spread is zero. Configurations that differ only in spreads
/// therefore see the same underlying draws.
pub fn sample_device_array(rows: usize, cols: usize, cfg: &RpuConfig, seed: u64) -> Result<DeviceArray> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("device array must be at least 1x1, got {rows}x{cols}")));
    }
    cfg.validate()?;

    let step_mean = cfg.dw_min_effective();
    let step_floor = 0.1 * step_mean;
    let bound_floor = 0.1 * cfg.w_bound;

    let sampled = par::map_indexed(rows, rows * cols * 16, |j| {
        let mut rng = rng::stream(seed, j as u64);
        let mut out = [
            Vec::with_capacity(cols),
            Vec::with_capacity(cols),
            Vec::with_capacity(cols),
            Vec::with_capacity(cols),
        ];
        for _ in 0..cols {
            let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let base = (step_mean * (1.0 + cfg.dw_min_dtod * z[0])).max(step_floor);
            let ratio = (1.0 + cfg.asym_dtod * z[1]).clamp(0.5, 2.0);
            let hi = (cfg.w_bound * (1.0 + cfg.w_bound_dtod * z[2])).max(bound_floor);
            let lo = (cfg.w_bound * (1.0 + cfg.w_bound_dtod * z[3])).max(bound_floor);
            out[0].push(base * ratio);
            out[1].push(base);
            out[2].push(hi);
            out[3].push(-lo);
        }
        out
    });

    let mut flat: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(rows * cols));
    for row in sampled {
        for (dst, src) in flat.iter_mut().zip(row) {
            dst.extend(src);
        }
    }
    let [dw_plus, dw_minus, w_max, w_min] = flat;
    Ok(DeviceArray {
        dw_plus: Matrix::from_vec(rows, cols, dw_plus)?,
        dw_minus: Matrix::from_vec(rows, cols, dw_minus)?,
        w_max: Matrix::from_vec(rows, cols, w_max)?,
        w_min: Matrix::from_vec(rows, cols, w_min)?,
    })
}

/// Number of down-steps needed to traverse each device's weight range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatesSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn states_stats(arr: &DeviceArray) -> StatesSummary {
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let n = arr.dw_minus.len();
    for k in 0..n {
        let states = (arr.w_max.as_slice()[k] - arr.w_min.as_slice()[k]) / arr.dw_minus.as_slice()[k];
        sum += states;
        min = min.min(states);
        max = max.max(states);
    }
    StatesSummary {
        mean: sum / n as f64,
        min,
        max,
    }
}
