//! Array inner loops: forward/transposed matrix-vector products and the
//! coincidence update.
//!
//! Each kernel has a sequential and (with the `parallel` feature) a rayon
//! variant. The variants split work by output row or output column block and
//! keep the per-element accumulation order fixed, so they return bit-identical
//! results. [`matvec`], [`matvec_t`] and [`apply_pulses`] pick one by size.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::device::DeviceArray;
use crate::matrix::Matrix;
#[cfg(feature = "parallel")]
use crate::par;
use crate::rng::{self, Rng};

const COL_BLOCK: usize = 128;

/// Dot product with four interleaved partial sums.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y = W x`
pub fn matvec_seq(w: &Matrix, x: &[f64], y: &mut [f64]) {
    for (j, yj) in y.iter_mut().enumerate() {
        *yj = dot(w.row(j), x);
    }
}

#[cfg(feature = "parallel")]
pub fn matvec_par(w: &Matrix, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut()
        .enumerate()
        .with_min_len(16)
        .for_each(|(j, yj)| *yj = dot(w.row(j), x));
}

pub fn matvec(w: &Matrix, x: &[f64], y: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if par::use_parallel(w.len()) {
        return matvec_par(w, x, y);
    }
    matvec_seq(w, x, y)
}

fn matvec_t_block(w: &Matrix, x: &[f64], c0: usize, out: &mut [f64]) {
    out.fill(0.0);
    let c1 = c0 + out.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let row = &w.row(j)[c0..c1];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * xj;
        }
    }
}

/// `z = Wᵀ x`
pub fn matvec_t_seq(w: &Matrix, x: &[f64], z: &mut [f64]) {
    for (b, chunk) in z.chunks_mut(COL_BLOCK).enumerate() {
        matvec_t_block(w, x, b * COL_BLOCK, chunk);
    }
}

#[cfg(feature = "parallel")]
pub fn matvec_t_par(w: &Matrix, x: &[f64], z: &mut [f64]) {
    z.par_chunks_mut(COL_BLOCK)
        .enumerate()
        .for_each(|(b, chunk)| matvec_t_block(w, x, b * COL_BLOCK, chunk));
}

pub fn matvec_t(w: &Matrix, x: &[f64], z: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if par::use_parallel(w.len()) {
        return matvec_t_par(w, x, z);
    }
    matvec_t_seq(w, x, z)
}

/// Stochastic pulse streams for one side of the array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseTrains {
    /// Bit `k` set when the line fires in slot `k`.
    pub masks: Vec<u64>,
    pub negative: Vec<bool>,
    /// Indices with a non-empty mask, ascending.
    pub active: Vec<usize>,
}

/// Translates `values` into `bl`-slot Bernoulli streams with firing
/// probability `min(1, gain |v|)`. Lines with probability 0 or 1 consume no
/// random numbers.
pub fn pulse_trains(values: &[f64], gain: f64, bl: u32, rng: &mut Rng) -> PulseTrains {
    debug_assert!((1..=64).contains(&bl));
    let full = if bl == 64 { u64::MAX } else { (1u64 << bl) - 1 };
    let mut trains = PulseTrains {
        masks: Vec::with_capacity(values.len()),
        negative: Vec::with_capacity(values.len()),
        active: Vec::new(),
    };
    for (k, &v) in values.iter().enumerate() {
        let p = (gain * v.abs()).min(1.0);
        let mask = if p >= 1.0 {
            full
        } else if p > 0.0 {
            let mut m = 0u64;
            for slot in 0..bl {
                if rng.random::<f64>() < p {
                    m |= 1 << slot;
                }
            }
            m
        } else {
            0
        };
        if mask != 0 {
            trains.active.push(k);
        }
        trains.masks.push(mask);
        trains.negative.push(v < 0.0);
    }
    trains
}

#[allow(clippy::too_many_arguments)]
fn update_row(
    j: usize,
    w_row: &mut [f64],
    devices: &DeviceArray,
    cols: &PulseTrains,
    row_mask: u64,
    row_negative: bool,
    ctoc: f64,
    seed: u64,
) {
    let mut noise = (ctoc > 0.0).then(|| rng::stream(seed, j as u64));
    let base = j * w_row.len();
    let (dw_plus, dw_minus) = (devices.dw_plus.as_slice(), devices.dw_minus.as_slice());
    let (w_max, w_min) = (devices.w_max.as_slice(), devices.w_min.as_slice());
    for &i in &cols.active {
        let hits = (cols.masks[i] & row_mask).count_ones();
        if hits == 0 {
            continue;
        }
        let k = base + i;
        let up = cols.negative[i] == row_negative;
        let (step, sign) = if up { (dw_plus[k], 1.0) } else { (dw_minus[k], -1.0) };
        let mut w = w_row[i];
        for _ in 0..hits {
            let s = match noise.as_mut() {
                Some(r) => {
                    let z: f64 = StandardNormal.sample(r);
                    step * (1.0 + ctoc * z).max(0.0)
                }
                None => step,
            };
            w = (w + sign * s).clamp(w_min[k], w_max[k]);
        }
        w_row[i] = w;
    }
}

/// Applies every column/row coincidence to `w`. Cycle-to-cycle noise for row
/// `j` comes from the stream `(seed, j)`.
pub fn apply_pulses_seq(
    w: &mut Matrix,
    devices: &DeviceArray,
    cols: &PulseTrains,
    rows: &PulseTrains,
    ctoc: f64,
    seed: u64,
) {
    let n = w.cols();
    for &j in &rows.active {
        let row = &mut w.as_mut_slice()[j * n..(j + 1) * n];
        update_row(j, row, devices, cols, rows.masks[j], rows.negative[j], ctoc, seed);
    }
}

#[cfg(feature = "parallel")]
pub fn apply_pulses_par(
    w: &mut Matrix,
    devices: &DeviceArray,
    cols: &PulseTrains,
    rows: &PulseTrains,
    ctoc: f64,
    seed: u64,
) {
    let n = w.cols();
    w.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .filter(|(j, _)| rows.masks[*j] != 0)
        .for_each(|(j, row)| update_row(j, row, devices, cols, rows.masks[j], rows.negative[j], ctoc, seed));
}

pub fn apply_pulses(
    w: &mut Matrix,
    devices: &DeviceArray,
    cols: &PulseTrains,
    rows: &PulseTrains,
    ctoc: f64,
    seed: u64,
) {
    #[cfg(feature = "parallel")]
    if par::use_parallel(4 * cols.active.len() * rows.active.len()) {
        return apply_pulses_par(w, devices, cols, rows, ctoc, seed);
    }
    apply_pulses_seq(w, devices, cols, rows, ctoc, seed)
}
