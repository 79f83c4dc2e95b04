//! One resistive cross-point array.
//!
//! An [`AnalogTile`] holds the logical weight matrix `W` together with the
//! sampled device parameters. In analog mode every matrix-vector product goes
//! through the DAC, additive output noise, output saturation and the ADC, and
//! weights only change through coincidences of stochastic pulse trains. In fp
//! mode the same matrix is used with exact products and plain SGD steps.

pub mod kernels;
pub mod quantize;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceArray, RpuConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

pub use quantize::quantize_vector;

/// Halvings tried by bound management before giving up.
pub const BOUND_RETRY_LIMIT: u32 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileMode {
    #[default]
    Analog,
    Fp,
}

impl TileMode {
    pub fn name(self) -> &'static str {
        match self {
            TileMode::Analog => "analog",
            TileMode::Fp => "fp",
        }
    }
}

/// Output of a noise/bound managed product.
#[derive(Clone, Debug, PartialEq)]
pub struct ManagedResult {
    pub value: Vec<f64>,
    /// Divisor applied to the input before the array, multiplied back after.
    pub scale_used: f64,
    pub bound_retries: u32,
}

#[derive(Clone, Debug)]
pub struct AnalogTile {
    w: Matrix,
    devices: Option<DeviceArray>,
    cfg: RpuConfig,
    rng: Rng,
    mode: TileMode,
}

impl AnalogTile {
    /// Analog tile; `w` is clipped into each device's bounds.
    pub fn new_analog(mut w: Matrix, devices: DeviceArray, cfg: RpuConfig, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        if w.shape() != (devices.rows(), devices.cols()) {
            return Err(Error::Dimension(format!(
                "weights {:?} vs devices {}x{}",
                w.shape(),
                devices.rows(),
                devices.cols()
            )));
        }
        clip_to_bounds(&mut w, &devices);
        Ok(AnalogTile {
            w,
            devices: Some(devices),
            cfg,
            rng,
            mode: TileMode::Analog,
        })
    }

    pub fn new_fp(w: Matrix) -> Self {
        AnalogTile {
            w,
            devices: None,
            cfg: RpuConfig::ideal(),
            rng: rng::stream(0, 0),
            mode: TileMode::Fp,
        }
    }

    pub fn rows(&self) -> usize {
        self.w.rows()
    }

    pub fn cols(&self) -> usize {
        self.w.cols()
    }

    pub fn mode(&self) -> TileMode {
        self.mode
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn devices(&self) -> Option<&DeviceArray> {
        self.devices.as_ref()
    }

    pub fn config(&self) -> &RpuConfig {
        &self.cfg
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: Rng) {
        self.rng = rng;
    }

    /// Programs new weights. In analog mode values are clipped to the device
    /// bounds.
    pub fn set_weights(&mut self, mut w: Matrix) -> Result<()> {
        if w.shape() != self.w.shape() {
            return Err(Error::Dimension(format!("weights {:?} vs tile {:?}", w.shape(), self.w.shape())));
        }
        if let Some(dev) = &self.devices {
            clip_to_bounds(&mut w, dev);
        }
        self.w = w;
        Ok(())
    }

    fn require(&self, mode: TileMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::Mode { expected: mode.name() })
        }
    }

    fn check_len(&self, v: &[f64], transpose: bool) -> Result<()> {
        let expected = if transpose { self.rows() } else { self.cols() };
        if v.len() != expected {
            return Err(Error::Dimension(format!(
                "input of length {} for a {}x{} tile{}",
                v.len(),
                self.rows(),
                self.cols(),
                if transpose { " (transposed)" } else { "" }
            )));
        }
        Ok(())
    }

    /// Noise-free `W v` (or `Wᵀ v`) regardless of mode.
    pub fn exact_mvm(&self, v: &[f64], transpose: bool) -> Result<Vec<f64>> {
        self.check_len(v, transpose)?;
        if transpose {
            let mut z = vec![0.0; self.cols()];
            kernels::matvec_t(&self.w, v, &mut z);
            Ok(z)
        } else {
            let mut y = vec![0.0; self.rows()];
            kernels::matvec(&self.w, v, &mut y);
            Ok(y)
        }
    }

    /// One pass through the array periphery: DAC, product, output noise,
    /// saturation at `±out_bound`, ADC. `v` must already lie in `[-1, 1]`.
    pub fn analog_mvm(&mut self, v: &[f64], transpose: bool) -> Result<Vec<f64>> {
        self.require(TileMode::Analog)?;
        self.check_len(v, transpose)?;
        let mut q = v.to_vec();
        quantize::quantize_in_place(&mut q, self.cfg.in_bits, self.cfg.rounding, &mut self.rng)?;
        let mut y = self.exact_mvm(&q, transpose)?;
        let sigma = self.cfg.noise_sigma;
        if sigma > 0.0 {
            for yk in y.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *yk += sigma * z;
            }
        }
        let alpha = self.cfg.out_bound;
        for yk in y.iter_mut() {
            *yk = yk.clamp(-alpha, alpha);
        }
        if self.cfg.out_bits > 0 {
            for yk in y.iter_mut() {
                *yk = quantize::adc(*yk, alpha, self.cfg.out_bits);
            }
        }
        Ok(y)
    }

    /// Forward product with noise management (input scaled by its absolute
    /// maximum) and bound management (input scale halved while any output
    /// saturates).
    pub fn managed_forward(&mut self, x: &[f64]) -> Result<ManagedResult> {
        self.managed(x, false)
    }

    /// Transposed counterpart of [`managed_forward`](Self::managed_forward).
    pub fn managed_backward(&mut self, d: &[f64]) -> Result<ManagedResult> {
        self.managed(d, true)
    }

    fn managed(&mut self, x: &[f64], transpose: bool) -> Result<ManagedResult> {
        self.require(TileMode::Analog)?;
        self.check_len(x, transpose)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("managed product input".into()));
        }
        let out_len = if transpose { self.cols() } else { self.rows() };
        let s = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s == 0.0 {
            return Ok(ManagedResult {
                value: vec![0.0; out_len],
                scale_used: 1.0,
                bound_retries: 0,
            });
        }
        let alpha = self.cfg.out_bound;
        let mut reduction = 1.0;
        let mut retries = 0;
        let mut u = vec![0.0; x.len()];
        loop {
            let scale = s * reduction;
            for (uk, xk) in u.iter_mut().zip(x) {
                *uk = xk / scale;
            }
            let y = self.analog_mvm(&u, transpose)?;
            let saturated = y.iter().any(|v| v.abs() >= alpha);
            if saturated && retries < BOUND_RETRY_LIMIT {
                reduction *= 2.0;
                retries += 1;
                continue;
            }
            return Ok(ManagedResult {
                value: y.into_iter().map(|v| v * scale).collect(),
                scale_used: scale,
                bound_retries: retries,
            });
        }
    }

    /// Parallel rank-one update `W += lr · d xᵀ` realized by coincidences of
    /// stochastic pulse trains. Column `i` fires with probability
    /// `min(1, C |x_i|)` in each of `bl` slots, row `j` with
    /// `min(1, C |d_j|)`, where `C = sqrt(lr / (bl · dw_min_effective))`.
    /// Every coincidence moves the device one noisy step up or down, clipped
    /// to its bounds.
    pub fn stochastic_update(&mut self, x: &[f64], d: &[f64], lr: f64) -> Result<()> {
        self.require(TileMode::Analog)?;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::OutOfRange(format!("learning rate must be positive, got {lr}")));
        }
        self.check_len(x, false)?;
        self.check_len(d, true)?;
        if x.iter().chain(d).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("update vectors".into()));
        }
        let gain = (lr / (self.cfg.bl as f64 * self.cfg.dw_min_effective())).sqrt();
        let cols = kernels::pulse_trains(x, gain, self.cfg.bl, &mut self.rng);
        let rows = kernels::pulse_trains(d, gain, self.cfg.bl, &mut self.rng);
        let seed: u64 = self.rng.random();
        let devices = self.devices.as_ref().expect("analog tile carries devices");
        kernels::apply_pulses(&mut self.w, devices, &cols, &rows, self.cfg.dw_min_ctoc, seed);
        debug_assert!(within_bounds(&self.w, devices));
        Ok(())
    }

    pub fn fp_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.require(TileMode::Fp)?;
        self.exact_mvm(x, false)
    }

    pub fn fp_backward(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.require(TileMode::Fp)?;
        self.exact_mvm(d, true)
    }

    /// `W += lr · delta`
    pub fn fp_apply_delta(&mut self, delta: &Matrix, lr: f64) -> Result<()> {
        self.require(TileMode::Fp)?;
        if delta.shape() != self.w.shape() {
            return Err(Error::Dimension(format!("delta {:?} vs tile {:?}", delta.shape(), self.w.shape())));
        }
        if !lr.is_finite() {
            return Err(Error::NonFinite("learning rate".into()));
        }
        for (w, d) in self.w.as_mut_slice().iter_mut().zip(delta.as_slice()) {
            *w += lr * d;
        }
        Ok(())
    }

    /// Mode-dispatched forward product used by the network.
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            TileMode::Analog => Ok(self.managed_forward(x)?.value),
            TileMode::Fp => self.fp_forward(x),
        }
    }

    pub fn backward(&mut self, d: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            TileMode::Analog => Ok(self.managed_backward(d)?.value),
            TileMode::Fp => self.fp_backward(d),
        }
    }
}

fn clip_to_bounds(w: &mut Matrix, dev: &DeviceArray) {
    let (hi, lo) = (dev.w_max.as_slice(), dev.w_min.as_slice());
    for (k, v) in w.as_mut_slice().iter_mut().enumerate() {
        *v = v.clamp(lo[k], hi[k]);
    }
}

fn within_bounds(w: &Matrix, dev: &DeviceArray) -> bool {
    let (hi, lo) = (dev.w_max.as_slice(), dev.w_min.as_slice());
    w.as_slice()
        .iter()
        .enumerate()
        .all(|(k, &v)| lo[k] <= v && v <= hi[k])
}
