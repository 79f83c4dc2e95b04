//! Stacked LSTM language model mapped onto tiles.
//!
//! Block `l` owns one tile of shape `4m × (n_l + m + 1)` where `n_0` is the
//! input size and `n_l = m` above it; the softmax head owns a
//! `vocab × (m + 1)` tile. Dropout applies to each block's input and to the
//! head input, never to the recurrent `h` path.

pub mod cell;
pub mod ops;

use serde::{Deserialize, Serialize};

use crate::device::{sample_device_array, RpuConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::rng::{self, derive_seed, tag, Rng};
use crate::tile::{AnalogTile, TileMode};

pub use cell::{concat_input, lstm_step_backward, lstm_step_forward, BlockCache, BlockGrads};
pub use ops::{sample_dropout_mask, softmax_xent, SoftmaxXent};

use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input: usize,
    pub hidden: usize,
    pub depth: usize,
    pub vocab: usize,
}

impl LstmShape {
    /// One-hot character input, so input size equals the vocabulary.
    pub fn char_model(vocab: usize, hidden: usize, depth: usize) -> Self {
        LstmShape {
            input: vocab,
            hidden,
            depth,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 || self.vocab == 0 || self.input == 0 {
            return Err(Error::Dimension(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    pub fn block_input(&self, block: usize) -> usize {
        if block == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    pub fn block_shape(&self, block: usize) -> (usize, usize) {
        (4 * self.hidden, self.block_input(block) + self.hidden + 1)
    }

    pub fn head_shape(&self) -> (usize, usize) {
        (self.vocab, self.hidden + 1)
    }

    /// Blocks bottom to top, then the head.
    pub fn tile_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| self.block_shape(l))
            .chain(std::iter::once(self.head_shape()))
            .collect()
    }

    pub fn name(&self) -> String {
        format!("LSTM{}-{}", self.depth, self.hidden)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// All-zero head: the untrained model predicts the uniform distribution.
    #[default]
    Zero,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub mode: TileMode,
    pub dropout_p: f64,
    pub head_init: HeadInit,
    /// Evaluate with exact products instead of the noisy analog readout.
    pub noiseless_eval: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            mode: TileMode::Analog,
            dropout_p: 0.0,
            head_init: HeadInit::Zero,
            noiseless_eval: false,
        }
    }
}

/// Recurrent state carried between windows.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(shape: &LstmShape) -> Self {
        HiddenState {
            h: vec![vec![0.0; shape.hidden]; shape.depth],
            c: vec![vec![0.0; shape.hidden]; shape.depth],
        }
    }
}

/// Peripheral statistics gathered over a pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PassStats {
    pub max_forward_scale: f64,
    pub bound_retries: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutcome {
    pub loss_sum: f64,
    pub hidden: HiddenState,
    pub stats: PassStats,
}

struct StepRecord {
    blocks: Vec<BlockCache>,
    input_masks: Vec<Option<Vec<f64>>>,
    head_mask: Option<Vec<f64>>,
    head_input: Vec<f64>,
    delta_out: Vec<f64>,
}

/// Input/error vector pairs of one tile, in the order they were produced.
type UpdatePairs = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug)]
pub struct LstmNetwork {
    shape: LstmShape,
    opts: NetworkOptions,
    seed: u64,
    tiles: Vec<AnalogTile>,
    dropout_rng: Rng,
}

impl LstmNetwork {
    /// Builds a network whose weights, devices and random streams all derive
    /// from `seed`. Weights start uniform in `±1/sqrt(fan_in)` (head per
    /// `opts.head_init`); analog tiles clip them into device bounds.
    pub fn new(shape: LstmShape, opts: NetworkOptions, rpu: &RpuConfig, seed: u64) -> Result<Self> {
        shape.validate()?;
        if !(0.0..1.0).contains(&opts.dropout_p) {
            return Err(Error::config("training.dropout_p", format!("must be in [0, 1), got {}", opts.dropout_p)));
        }
        let shapes = shape.tile_shapes();
        let mut tiles = Vec::with_capacity(shapes.len());
        for (k, &(rows, cols)) in shapes.iter().enumerate() {
            let is_head = k == shape.depth;
            let w = if is_head && opts.head_init == HeadInit::Zero {
                Matrix::zeros(rows, cols)
            } else {
                let bound = 1.0 / (cols as f64).sqrt();
                let mut r = rng::stream(derive_seed(seed, tag::INIT), k as u64);
                let data = (0..rows * cols).map(|_| r.random_range(-bound..=bound)).collect();
                Matrix::from_vec(rows, cols, data)?
            };
            let tile = match opts.mode {
                TileMode::Fp => AnalogTile::new_fp(w),
                TileMode::Analog => {
                    let dev_seed = derive_seed(derive_seed(seed, tag::DEVICES), k as u64);
                    let devices = sample_device_array(rows, cols, rpu, dev_seed)?;
                    let tile_rng = rng::stream(derive_seed(seed, tag::TILE), k as u64);
                    AnalogTile::new_analog(w, devices, rpu.clone(), tile_rng)?
                }
            };
            tiles.push(tile);
        }
        Ok(LstmNetwork {
            shape,
            opts,
            seed,
            tiles,
            dropout_rng: rng::stream(derive_seed(seed, tag::DROPOUT), 0),
        })
    }

    /// Reassembles a network from stored tiles (checkpoint restore).
    pub fn from_parts(
        shape: LstmShape,
        opts: NetworkOptions,
        seed: u64,
        tiles: Vec<AnalogTile>,
        dropout_rng: Rng,
    ) -> Result<Self> {
        shape.validate()?;
        let shapes = shape.tile_shapes();
        if tiles.len() != shapes.len() {
            return Err(Error::Dimension(format!("{} tiles for {} expected", tiles.len(), shapes.len())));
        }
        for (k, (t, &s)) in tiles.iter().zip(&shapes).enumerate() {
            if (t.rows(), t.cols()) != s || t.mode() != opts.mode {
                return Err(Error::Dimension(format!(
                    "tile {k} is {}x{} ({}), expected {}x{} ({})",
                    t.rows(),
                    t.cols(),
                    t.mode().name(),
                    s.0,
                    s.1,
                    opts.mode.name()
                )));
            }
        }
        Ok(LstmNetwork {
            shape,
            opts,
            seed,
            tiles,
            dropout_rng,
        })
    }

    pub fn shape(&self) -> &LstmShape {
        &self.shape
    }

    pub fn options(&self) -> &NetworkOptions {
        &self.opts
    }

    pub fn set_noiseless_eval(&mut self, on: bool) {
        self.opts.noiseless_eval = on;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> TileMode {
        self.opts.mode
    }

    /// Blocks bottom to top, then the head.
    pub fn tiles(&self) -> &[AnalogTile] {
        &self.tiles
    }

    pub fn tiles_mut(&mut self) -> &mut [AnalogTile] {
        &mut self.tiles
    }

    pub fn head(&self) -> &AnalogTile {
        &self.tiles[self.shape.depth]
    }

    pub fn dropout_rng(&self) -> &Rng {
        &self.dropout_rng
    }

    /// Copy with fresh evaluation streams, so that reading out the network
    /// does not disturb the training streams and always sees the same noise.
    pub fn evaluation_copy(&self) -> Self {
        let mut copy = self.clone();
        let eval_seed = derive_seed(self.seed, tag::EVAL);
        for (k, t) in copy.tiles.iter_mut().enumerate() {
            t.set_rng(rng::stream(eval_seed, k as u64));
        }
        copy
    }

    fn product(&mut self, k: usize, x: &[f64], transpose: bool, exact: bool, stats: &mut PassStats) -> Result<Vec<f64>> {
        let tile = &mut self.tiles[k];
        if exact || tile.mode() == TileMode::Fp {
            return tile.exact_mvm(x, transpose);
        }
        let r = if transpose {
            tile.managed_backward(x)?
        } else {
            tile.managed_forward(x)?
        };
        if !transpose {
            stats.max_forward_scale = stats.max_forward_scale.max(r.scale_used);
        }
        stats.bound_retries += r.bound_retries as u64;
        Ok(r.value)
    }

    fn mask(&mut self, len: usize, train: bool) -> Result<Option<Vec<f64>>> {
        if train && self.opts.dropout_p > 0.0 {
            Ok(Some(sample_dropout_mask(len, self.opts.dropout_p, &mut self.dropout_rng)?))
        } else {
            Ok(None)
        }
    }

    fn forward_step(
        &mut self,
        token: usize,
        target: usize,
        hidden: &mut HiddenState,
        train: bool,
        stats: &mut PassStats,
    ) -> Result<(f64, StepRecord)> {
        let exact = !train && self.opts.noiseless_eval;
        let depth = self.shape.depth;
        let mut input = vec![0.0; self.shape.input];
        input[token] = 1.0;
        let mut blocks = Vec::with_capacity(depth);
        let mut input_masks = Vec::with_capacity(depth);
        for l in 0..depth {
            let mask = self.mask(input.len(), train)?;
            if let Some(m) = &mask {
                for (v, s) in input.iter_mut().zip(m) {
                    *v *= s;
                }
            }
            let x_tilde = concat_input(&input, &hidden.h[l])?;
            let y = self.product(l, &x_tilde, false, exact, stats)?;
            let (h, c, cache) = cell::lstm_gates(&y, x_tilde, &hidden.c[l])?;
            hidden.h[l] = h.clone();
            hidden.c[l] = c;
            blocks.push(cache);
            input_masks.push(mask);
            input = h;
        }
        let head_mask = self.mask(input.len(), train)?;
        if let Some(m) = &head_mask {
            for (v, s) in input.iter_mut().zip(m) {
                *v *= s;
            }
        }
        input.push(1.0);
        let logits = self.product(depth, &input, false, exact, stats)?;
        let out = softmax_xent(&logits, target)?;
        Ok((
            out.loss,
            StepRecord {
                blocks,
                input_masks,
                head_mask,
                head_input: input,
                delta_out: out.delta,
            },
        ))
    }

    fn check_window(&self, inputs: &[usize], targets: &[usize], hidden: &HiddenState) -> Result<()> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "window of {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(bad) = inputs.iter().chain(targets).find(|&&t| t >= self.shape.vocab) {
            return Err(Error::OutOfRange(format!("token {bad} outside vocabulary of {}", self.shape.vocab)));
        }
        let m = self.shape.hidden;
        if hidden.h.len() != self.shape.depth
            || hidden.c.len() != self.shape.depth
            || hidden.h.iter().chain(&hidden.c).any(|v| v.len() != m)
        {
            return Err(Error::Dimension("hidden state does not match network shape".into()));
        }
        Ok(())
    }

    /// Unrolled backward pass from the last step to the first. Returns, per
    /// tile, the `(x̃, δ̃)` pairs in reverse time order, where `δ̃` is the loss
    /// gradient with respect to the tile output.
    fn backward(&mut self, records: &[StepRecord], stats: &mut PassStats) -> Result<Vec<UpdatePairs>> {
        let depth = self.shape.depth;
        let m = self.shape.hidden;
        let mut pairs: Vec<UpdatePairs> = vec![Vec::with_capacity(records.len()); depth + 1];
        let mut dh_next = vec![vec![0.0; m]; depth];
        let mut dc_next = vec![vec![0.0; m]; depth];
        for rec in records.iter().rev() {
            let z = self.product(depth, &rec.delta_out, true, false, stats)?;
            let mut dh_above: Vec<f64> = z[..m].to_vec();
            if let Some(mask) = &rec.head_mask {
                for (v, s) in dh_above.iter_mut().zip(mask) {
                    *v *= s;
                }
            }
            pairs[depth].push((rec.head_input.clone(), rec.delta_out.clone()));
            for l in (0..depth).rev() {
                let cache = &rec.blocks[l];
                let dh: Vec<f64> = dh_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                let (delta, dc_prev) = cell::lstm_gate_grads(cache, &dh, &dc_next[l])?;
                let z = self.product(l, &delta, true, false, stats)?;
                let (mut dx, dh_prev) = cell::split_backward(z, self.shape.block_input(l), m)?;
                if let Some(mask) = &rec.input_masks[l] {
                    for (v, s) in dx.iter_mut().zip(mask) {
                        *v *= s;
                    }
                }
                pairs[l].push((cache.x_tilde.clone(), delta));
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                dh_above = dx;
            }
        }
        Ok(pairs)
    }

    fn run_forward(
        &mut self,
        inputs: &[usize],
        targets: &[usize],
        hidden: &HiddenState,
        train: bool,
        keep: bool,
        stats: &mut PassStats,
    ) -> Result<(f64, HiddenState, Vec<StepRecord>)> {
        self.check_window(inputs, targets, hidden)?;
        let mut state = hidden.clone();
        let mut loss_sum = 0.0;
        let mut records = Vec::with_capacity(if keep { inputs.len() } else { 0 });
        for (&x, &y) in inputs.iter().zip(targets) {
            let (loss, rec) = self.forward_step(x, y, &mut state, train, stats)?;
            loss_sum += loss;
            if keep {
                records.push(rec);
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite("window loss".into()));
        }
        Ok((loss_sum, state, records))
    }

    /// Runs one truncated-BPTT window. With `train`, gradients flow back from
    /// the last step to the first and the weights change: analog tiles take
    /// one stochastic update per step (reverse time order), fp tiles take one
    /// step along the summed gradient. Without `train` the network is only
    /// read.
    pub fn window_pass(
        &mut self,
        inputs: &[usize],
        targets: &[usize],
        hidden: &HiddenState,
        train: bool,
        lr: f64,
    ) -> Result<WindowOutcome> {
        let mut stats = PassStats::default();
        let (loss_sum, hidden_out, records) = self.run_forward(inputs, targets, hidden, train, train, &mut stats)?;
        if train {
            let pairs = self.backward(&records, &mut stats)?;
            self.apply_updates(pairs, lr)?;
        }
        Ok(WindowOutcome {
            loss_sum,
            hidden: hidden_out,
            stats,
        })
    }

    fn apply_updates(&mut self, pairs: Vec<UpdatePairs>, lr: f64) -> Result<()> {
        let work: usize = self.tiles.iter().map(|t| t.rows() * t.cols()).sum::<usize>() * pairs[0].len();
        let parallel = par::use_parallel(work);
        let results = par::map_mut(&mut self.tiles, parallel, |k, tile| -> Result<()> {
            match tile.mode() {
                TileMode::Analog => {
                    for (x, delta) in &pairs[k] {
                        let descent: Vec<f64> = delta.iter().map(|v| -v).collect();
                        tile.stochastic_update(x, &descent, lr)?;
                    }
                    Ok(())
                }
                TileMode::Fp => {
                    let mut total = Matrix::zeros(tile.rows(), tile.cols());
                    for (x, delta) in &pairs[k] {
                        total.add_outer(delta, x, -1.0);
                    }
                    tile.fp_apply_delta(&total, lr)
                }
            }
        });
        results.into_iter().collect()
    }

    /// Loss and exact gradient `dL/dW` of every tile over one window, without
    /// changing the weights. Dropout masks are drawn as in training.
    pub fn window_gradients(
        &mut self,
        inputs: &[usize],
        targets: &[usize],
        hidden: &HiddenState,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut stats = PassStats::default();
        let (loss_sum, _, records) = self.run_forward(inputs, targets, hidden, true, true, &mut stats)?;
        let pairs = self.backward(&records, &mut stats)?;
        let grads = self
            .tiles
            .iter()
            .zip(&pairs)
            .map(|(t, p)| {
                let mut g = Matrix::zeros(t.rows(), t.cols());
                for (x, delta) in p {
                    g.add_outer(delta, x, 1.0);
                }
                g
            })
            .collect();
        Ok((loss_sum, grads))
    }
}
