//! Reference implementations written independently of the library, used as
//! oracles by the integration tests.
#![allow(dead_code)]

use rpu_lstm::matrix::Matrix;
use rpu_lstm::{HeadInit, HiddenState, LstmNetwork, LstmShape, NetworkOptions, RpuConfig, TileMode};

fn logistic(v: f64) -> f64 {
    0.5 * (1.0 + (0.5 * v).tanh())
}

fn mul(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

/// Summed cross entropy of a stacked LSTM over `inputs`, evaluated with plain
/// loops. Gate rows are ordered forget, input, output, candidate.
pub fn reference_loss(
    weights: &[Matrix],
    shape: &LstmShape,
    inputs: &[usize],
    targets: &[usize],
    h0: &[Vec<f64>],
    c0: &[Vec<f64>],
) -> f64 {
    let m = shape.hidden;
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut total = 0.0;
    for (&tok, &tgt) in inputs.iter().zip(targets) {
        let mut below: Vec<f64> = (0..shape.input).map(|k| if k == tok { 1.0 } else { 0.0 }).collect();
        for l in 0..shape.depth {
            let mut xt = below.clone();
            xt.extend_from_slice(&h[l]);
            xt.push(1.0);
            let y = mul(&weights[l], &xt);
            for k in 0..m {
                let f = logistic(y[k]);
                let i = logistic(y[m + k]);
                let o = logistic(y[2 * m + k]);
                let g = y[3 * m + k].tanh();
                c[l][k] = f * c[l][k] + i * g;
                h[l][k] = o * c[l][k].tanh();
            }
            below = h[l].clone();
        }
        below.push(1.0);
        let z = mul(&weights[shape.depth], &below);
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - z[tgt];
    }
    total
}

/// Central differences of [`reference_loss`] with respect to every weight.
pub fn finite_difference_gradients(
    weights: &[Matrix],
    shape: &LstmShape,
    inputs: &[usize],
    targets: &[usize],
    h0: &[Vec<f64>],
    c0: &[Vec<f64>],
    eps: f64,
) -> Vec<Matrix> {
    let mut w = weights.to_vec();
    let mut out = Vec::new();
    for t in 0..w.len() {
        let (rows, cols) = w[t].shape();
        let mut g = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let orig = w[t].get(r, c);
                w[t].set(r, c, orig + eps);
                let up = reference_loss(&w, shape, inputs, targets, h0, c0);
                w[t].set(r, c, orig - eps);
                let down = reference_loss(&w, shape, inputs, targets, h0, c0);
                w[t].set(r, c, orig);
                g.set(r, c, (up - down) / (2.0 * eps));
            }
        }
        out.push(g);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all entries.
pub fn relative_error(a: &[Matrix], b: &[Matrix]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    diff.sqrt() / na.max(nb).sqrt()
}

/// Splitmix-style generator so the oracles do not share the library's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

pub struct GradientCase {
    pub relative_error: f64,
    pub loss_gap: f64,
}

/// Compares the network's backpropagated gradient with central differences
/// of the reference forward pass, on a random window and random initial state.
pub fn gradient_case(vocab: usize, hidden: usize, depth: usize, bptt: usize, seed: u64) -> GradientCase {
    let shape = LstmShape::char_model(vocab, hidden, depth);
    let opts = NetworkOptions {
        mode: TileMode::Fp,
        head_init: HeadInit::Uniform,
        ..NetworkOptions::default()
    };
    let mut net = LstmNetwork::new(shape, opts, &RpuConfig::baseline(), seed).unwrap();
    let mut lcg = Lcg(seed ^ 0xA5A5);
    // scale up the weights so the gates leave their linear region
    for t in net.tiles_mut() {
        let data: Vec<f64> = t.weights().as_slice().iter().map(|v| 3.0 * v).collect();
        let (r, c) = t.weights().shape();
        t.set_weights(Matrix::from_vec(r, c, data).unwrap()).unwrap();
    }
    let inputs: Vec<usize> = (0..bptt).map(|_| lcg.below(vocab)).collect();
    let targets: Vec<usize> = (0..bptt).map(|_| lcg.below(vocab)).collect();
    let mut hidden0 = HiddenState::zeros(&shape);
    for v in hidden0.h.iter_mut().chain(hidden0.c.iter_mut()).flatten() {
        *v = lcg.next_f64() - 0.5;
    }
    let weights: Vec<Matrix> = net.tiles().iter().map(|t| t.weights().clone()).collect();
    let (loss, grads) = net.window_gradients(&inputs, &targets, &hidden0).unwrap();
    let reference = reference_loss(&weights, &shape, &inputs, &targets, &hidden0.h, &hidden0.c);
    let fd = finite_difference_gradients(&weights, &shape, &inputs, &targets, &hidden0.h, &hidden0.c, 1e-5);
    GradientCase {
        relative_error: relative_error(&grads, &fd),
        loss_gap: (loss - reference).abs(),
    }
}
