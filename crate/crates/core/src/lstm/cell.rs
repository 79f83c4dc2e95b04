//! Single LSTM block step on one tile.
//!
//! The tile output `y = W x̃` is split into four `m`-long slices in the fixed
//! order `[f; i; o; g]` (forget, input, output, candidate). This order is part
//! of the checkpoint format.

use crate::error::{Error, Result};
use crate::tile::AnalogTile;

use super::ops::sigmoid;

/// `[x; h; 1]`
pub fn concat_input(x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() && h_prev.is_empty() {
        return Err(Error::Dimension("LSTM input and hidden vectors are both empty".into()));
    }
    let mut out = Vec::with_capacity(x.len() + h_prev.len() + 1);
    out.extend_from_slice(x);
    out.extend_from_slice(h_prev);
    out.push(1.0);
    Ok(out)
}

/// Activations of one block at one time step, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCache {
    /// Concatenated input after dropout.
    pub x_tilde: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl BlockCache {
    pub fn hidden(&self) -> usize {
        self.c.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads {
    /// Loss gradient with respect to the tile output, `[df; di; do; dg]`.
    pub delta: Vec<f64>,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

pub fn lstm_step_forward(
    tile: &mut AnalogTile,
    x_tilde: Vec<f64>,
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, BlockCache)> {
    let y = tile.forward(&x_tilde)?;
    lstm_gates(&y, x_tilde, c_prev)
}

/// Nonlinear part of the step, applied to the tile output `y`.
pub(crate) fn lstm_gates(y: &[f64], x_tilde: Vec<f64>, c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, BlockCache)> {
    let m = c_prev.len();
    if y.len() != 4 * m {
        return Err(Error::Dimension(format!("tile output {} for hidden size {m}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM pre-activations".into()));
    }
    let f: Vec<f64> = y[..m].iter().map(|&v| sigmoid(v)).collect();
    let i: Vec<f64> = y[m..2 * m].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = y[2 * m..3 * m].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = y[3 * m..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..m).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..m).map(|k| o[k] * tanh_c[k]).collect();
    let cache = BlockCache {
        x_tilde,
        f,
        i,
        o,
        g,
        c_prev: c_prev.to_vec(),
        c: c.clone(),
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Gradient through the gates. Returns `delta` (tile-output gradient) and the
/// cell-state gradient passed to the previous time step.
pub(crate) fn lstm_gate_grads(cache: &BlockCache, dh: &[f64], dc_in: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = cache.hidden();
    if dh.len() != m || dc_in.len() != m {
        return Err(Error::Dimension(format!(
            "gradients of length {}/{} for hidden size {m}",
            dh.len(),
            dc_in.len()
        )));
    }
    let mut delta = vec![0.0; 4 * m];
    let mut dc_prev = vec![0.0; m];
    for k in 0..m {
        let (f, i, o, g) = (cache.f[k], cache.i[k], cache.o[k], cache.g[k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc * o * (1.0 - o);
        let dc = dc_in[k] + dh[k] * o * (1.0 - tc * tc);
        delta[k] = dc * cache.c_prev[k] * f * (1.0 - f);
        delta[m + k] = dc * g * i * (1.0 - i);
        delta[2 * m + k] = d_o;
        delta[3 * m + k] = dc * i * (1.0 - g * g);
        dc_prev[k] = dc * f;
    }
    Ok((delta, dc_prev))
}

/// Splits `z = Wᵀ delta` into the input gradient, the recurrent gradient, and
/// the (discarded) bias component.
pub(crate) fn split_backward(z: Vec<f64>, n_in: usize, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != n_in + m + 1 {
        return Err(Error::Dimension(format!("backward output {} for {n_in}+{m}+1", z.len())));
    }
    let dh_prev = z[n_in..n_in + m].to_vec();
    let mut dx = z;
    dx.truncate(n_in);
    Ok((dx, dh_prev))
}

pub fn lstm_step_backward(tile: &mut AnalogTile, cache: &BlockCache, dh: &[f64], dc_in: &[f64]) -> Result<BlockGrads> {
    let m = cache.hidden();
    let n_in = cache
        .x_tilde
        .len()
        .checked_sub(m + 1)
        .ok_or_else(|| Error::Dimension("cache input shorter than hidden + bias".into()))?;
    let (delta, dc_prev) = lstm_gate_grads(cache, dh, dc_in)?;
    let z = tile.backward(&delta)?;
    let (dx, dh_prev) = split_backward(z, n_in, m)?;
    Ok(BlockGrads {
        delta,
        dx,
        dh_prev,
        dc_prev,
    })
}
