//! Explicit ReLU constructions that memorize binary-coded data.
//!
//! * [`build_fitter`] (`G₁`): interpolates `W²ℓ` samples `(z_i, y_i)` with
//!   width `4W + 4` and depth `ℓ + 2`.
//! * [`build_bit_extractor`] (`G₂`): reads bit `j` of an `ℓ`-bit number,
//!   width 8 and depth `2ℓ`.
//! * [`build_indexed_memorizer`] (`G₃ = G₂(G₁(·), j)`): width `4W + 6`,
//!   depth `3ℓ + 1`.
//! * [`build_theorem_generator`]: a generator `R^k -> R^n` whose anchors map
//!   exactly onto `ℓ`-bit truncations of given targets; depth `3ℓ + 2`,
//!   width `(4⌈√(sn/ℓ)⌉ + 6) n`.
//!
//! Every construction is exported as an ordinary [`GeneratorNetwork`]
//! (hidden ReLU layers, identity output) and evaluated through it, so the
//! networks are ReLU-expressible by construction. Depth counts hidden
//! layers and width is the widest hidden layer. Where a construction needs
//! fewer units than the formula allows, it is padded with inert neurons and
//! identity layers so that the exported dimensions equal the formulas.
//!
//! # Bit reading
//!
//! With `h = 2^-ℓ`, bit `t` of `x` is read from the remainder
//! `r_t = x - Σ_{s<t} 2^-s b_s` through two ReLU layers
//!
//! ```text
//! s_t = relu(K (r_t - 2^-t + 3h/4)),   K = 4/h
//! w_t = relu(1 - s_t),                 b_t = 1 - w_t
//! ```
//!
//! Exact `ℓ`-bit remainders give `K(...) <= -1` or `>= 3`, so `b_t` is exactly
//! 0 or 1 for any input within `h/4` of an `ℓ`-bit value. The remainder is
//! not rescaled between steps, so such an input error is not amplified.

use std::cmp::Ordering;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{Activation, GeneratorError, GeneratorNetwork, Layer};
use crate::linalg::matvec_ordered;
use crate::rng::{stream_rng, Stream};

/// Largest bit depth for which `ℓ`-bit values are exact in `f64`.
pub const MAX_ELL: usize = 52;

#[derive(Debug, Error)]
pub enum MemorizerError {
    #[error("bit depth ℓ = {0} is outside [1, 52]")]
    EllOutOfRange(usize),
    #[error("width parameter W must be at least 1")]
    ZeroWidth,
    #[error("anchors {0} and {1} coincide")]
    DuplicateAnchor(usize, usize),
    #[error("{count} samples exceed the capacity W²ℓ = {capacity}")]
    Capacity { count: usize, capacity: usize },
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("no samples given")]
    Empty,
    #[error("τ must lie in (0, 1), got {0}")]
    TauOutOfRange(f64),
    #[error("target {index} has a coordinate outside [0, 1] or the wrong length")]
    TargetOutOfCube { index: usize },
    #[error("construction needs width {needed}, above the budget {budget}")]
    WidthBudget { needed: usize, budget: usize },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Fitter,
    Extractor,
    Indexed,
    Generator,
}

/// An anchor with its `ℓ` bits `b_1 .. b_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSample {
    pub z: Array1<f64>,
    pub bits: Vec<u8>,
}

impl BitSample {
    pub fn new(z: Array1<f64>, bits: Vec<u8>) -> Self {
        Self { z, bits }
    }

    /// `Σ_j 2^-j b_j`, exact for `ℓ <= 52`.
    pub fn y_value(&self) -> f64 {
        bits_to_value(&self.bits)
    }
}

pub fn bits_to_value(bits: &[u8]) -> f64 {
    bits.iter().enumerate().map(|(j, &b)| f64::from(b) * 0.5f64.powi(j as i32 + 1)).sum()
}

/// First `ell` binary digits of `y ∈ [0, 1)`.
pub fn value_to_bits(y: f64, ell: usize) -> Vec<u8> {
    let mut r = y;
    (1..=ell)
        .map(|t| {
            let p = 0.5f64.powi(t as i32);
            if r >= p {
                r -= p;
                1
            } else {
                0
            }
        })
        .collect()
}

/// `T_ℓ(o) = min(floor(o 2^ℓ) / 2^ℓ, 1 - 2^-ℓ)`, coordinatewise.
pub fn truncate_bits(o: &Array1<f64>, ell: usize) -> Array1<f64> {
    let scale = 2f64.powi(ell as i32);
    o.mapv(|v| ((v * scale).floor() / scale).min(1.0 - 1.0 / scale))
}

/// A constructed network with the dimensions its construction promises.
#[derive(Debug, Clone)]
pub struct MemorizerNet {
    network: GeneratorNetwork,
    construction: Construction,
    declared_width: usize,
    declared_depth: usize,
    ell: usize,
    w: usize,
}

impl MemorizerNet {
    pub fn network(&self) -> &GeneratorNetwork {
        &self.network
    }

    pub fn into_network(self) -> GeneratorNetwork {
        self.network
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn declared_width(&self) -> usize {
        self.declared_width
    }

    pub fn declared_depth(&self) -> usize {
        self.declared_depth
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// The width parameter `W` (0 for the bit extractor).
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn eval(&self, input: &[f64]) -> Result<Array1<f64>, MemorizerError> {
        Ok(self.network.forward(Array1::from(input.to_vec()).view())?)
    }

    /// `G₂(x, j)` or `G₃(z, j)`, or `G₁(z)` when `j` is `None`.
    pub fn eval_scalar(&self, z: &[f64], j: Option<usize>) -> Result<f64, MemorizerError> {
        let mut input = z.to_vec();
        if let Some(j) = j {
            input.push(j as f64);
        }
        Ok(self.eval(&input)?[0])
    }
}

/// `(width, depth)` counted from the layer shapes of an exported network:
/// depth is the number of hidden layers, width the largest hidden layer.
pub fn count_dimensions(net: &GeneratorNetwork) -> (usize, usize) {
    let dims = net.layer_dims();
    let hidden = &dims[1..dims.len() - 1];
    (hidden.iter().copied().max().unwrap_or(0), hidden.len())
}

// ---------------------------------------------------------------------------
// symbolic layered networks

#[derive(Debug, Clone)]
struct Neuron {
    /// `(index into the previous layer, weight)`
    terms: Vec<(usize, f64)>,
    bias: f64,
}

impl Neuron {
    fn new(terms: Vec<(usize, f64)>, bias: f64) -> Self {
        Self { terms, bias }
    }

    fn carry(index: usize) -> Self {
        Self::new(vec![(index, 1.0)], 0.0)
    }

    fn zero() -> Self {
        Self::new(Vec::new(), 0.0)
    }
}

#[derive(Debug, Clone)]
struct Stack {
    input_dim: usize,
    hidden: Vec<Vec<Neuron>>,
    output: Vec<Neuron>,
}

impl Stack {
    fn width(&self) -> usize {
        self.hidden.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Moves the outputs into a new hidden layer (`relu(out)`) followed by
    /// the identity; exact whenever the outputs are nonnegative.
    fn push_relu_layer(&mut self, keep: &[usize]) {
        let mut layer = std::mem::take(&mut self.output);
        let n_out = layer.len();
        for &k in keep {
            layer.push(Neuron::carry(k));
        }
        self.hidden.push(layer);
        self.output = (0..n_out).map(Neuron::carry).collect();
    }

    /// Appends inert neurons to the widest layer until it holds `target`.
    fn pad_width(&mut self, target: usize) {
        let current = self.width();
        if current >= target {
            return;
        }
        let idx = (0..self.hidden.len()).max_by_key(|&i| (self.hidden[i].len(), std::cmp::Reverse(i))).unwrap();
        self.hidden[idx].extend((current..target).map(|_| Neuron::zero()));
    }

    fn to_network(&self) -> Result<GeneratorNetwork, GeneratorError> {
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for layer in self.hidden.iter().chain(std::iter::once(&self.output)) {
            let mut w = Array2::<f64>::zeros((layer.len(), prev));
            let mut b = Array1::<f64>::zeros(layer.len());
            for (i, neuron) in layer.iter().enumerate() {
                for &(j, v) in &neuron.terms {
                    w[[i, j]] += v;
                }
                b[i] = neuron.bias;
            }
            layers.push(Layer::new(w, b));
            prev = layer.len();
        }
        GeneratorNetwork::new(layers, Activation::Identity)
    }

    /// Places stacks of equal depth side by side on a shared input.
    fn hconcat(blocks: Vec<Stack>) -> Stack {
        let input_dim = blocks[0].input_dim;
        let depth = blocks[0].depth();
        let mut hidden: Vec<Vec<Neuron>> = vec![Vec::new(); depth];
        let mut output = Vec::new();
        let mut offsets = vec![0usize; depth];
        for block in blocks {
            debug_assert_eq!(block.depth(), depth);
            for (l, layer) in block.hidden.into_iter().enumerate() {
                let shift = if l == 0 { 0 } else { offsets[l - 1] };
                for mut n in layer {
                    for t in &mut n.terms {
                        t.0 += shift;
                    }
                    hidden[l].push(n);
                }
            }
            let shift = offsets[depth - 1];
            for mut n in block.output {
                for t in &mut n.terms {
                    t.0 += shift;
                }
                output.push(n);
            }
            for (l, off) in offsets.iter_mut().enumerate() {
                *off = hidden[l].len();
            }
        }
        Stack { input_dim, hidden, output }
    }
}

// ---------------------------------------------------------------------------
// fitter

#[derive(Debug, Clone, Copy)]
enum Piece {
    Off,
    Affine { slope: f64, intercept: f64 },
}

impl Piece {
    fn at(self, t: f64) -> f64 {
        match self {
            Piece::Off => -1.0,
            Piece::Affine { slope, intercept } => slope * t + intercept,
        }
    }

    fn slope(self) -> f64 {
        match self {
            Piece::Off => 0.0,
            Piece::Affine { slope, .. } => slope,
        }
    }
}

/// One chunk of consecutive sorted samples: breakpoints for the first stage
/// and, per second-stage neuron, its coefficients on those breakpoints and
/// its output weight.
struct ChunkPlan {
    taus: Vec<f64>,
    second: Vec<(Vec<f64>, f64)>,
}

/// Coefficients `C` with `-1 + Σ_j C_j relu(t - τ_j)` equal to `pieces[q]`
/// on tooth `q`, equal to -1 left of `τ_0` and right of the last knot.
/// Knots come in pairs: one pair in front of each tooth and one trailing pair.
fn cpwl_coefficients(taus: &[f64], pieces: &[Piece]) -> Vec<f64> {
    let q = pieces.len();
    debug_assert_eq!(taus.len(), 2 * q + 2);
    let mut values = vec![0.0; taus.len()];
    values[0] = -1.0;
    values[2 * q + 1] = -1.0;
    for (i, p) in pieces.iter().enumerate() {
        values[2 * i + 1] = p.at(taus[2 * i + 1]);
        values[2 * i + 2] = p.at(taus[2 * i + 2]);
    }
    // slope of the segment starting at knot j
    let mut seg = vec![0.0; taus.len()];
    for j in 0..taus.len() - 1 {
        seg[j] = if j % 2 == 1 {
            pieces[j / 2].slope()
        } else {
            (values[j + 1] - values[j]) / (taus[j + 1] - taus[j])
        };
    }
    seg[taus.len() - 1] = 0.0;
    (0..taus.len()).map(|j| seg[j] - if j == 0 { 0.0 } else { seg[j - 1] }).collect()
}

fn plan_chunk(points: &[(f64, f64)], w: usize, left: f64, right: f64) -> ChunkPlan {
    let teeth: Vec<&[(f64, f64)]> = points.chunks(w).collect();
    let third = |a: f64, b: f64| (a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0);
    let mut taus = Vec::with_capacity(2 * teeth.len() + 2);
    let mut prev = left;
    for tooth in &teeth {
        let (a, b) = third(prev, tooth[0].0);
        taus.extend([a, b]);
        prev = tooth[tooth.len() - 1].0;
    }
    let (a, b) = third(prev, right);
    taus.extend([a, b]);

    let interior = w.saturating_sub(2);
    let mut base_plus = Vec::new();
    let mut base_minus = Vec::new();
    let mut pos = vec![Vec::new(); interior];
    let mut neg = vec![Vec::new(); interior];
    for tooth in &teeth {
        let (p1, y1) = tooth[0];
        let (slope, intercept) = if tooth.len() == 1 {
            (0.0, y1)
        } else {
            let (p2, y2) = tooth[1];
            let s = (y2 - y1) / (p2 - p1);
            (s, y1 - s * p1)
        };
        let lowest = tooth.iter().map(|&(p, _)| slope * p + intercept).fold(0.0, f64::min);
        let lift = 1.0 - lowest;
        base_plus.push(Piece::Affine { slope, intercept: intercept + lift });
        base_minus.push(Piece::Affine { slope: 0.0, intercept: lift });
        for i in 0..interior {
            let (mut p, mut n) = (Piece::Off, Piece::Off);
            if i + 2 < tooth.len() {
                let (pa, ya) = tooth[i];
                let (pb, yb) = tooth[i + 1];
                let (pc, yc) = tooth[i + 2];
                let d = (yc - yb) / (pc - pb) - (yb - ya) / (pb - pa);
                if d > 0.0 {
                    p = Piece::Affine { slope: d, intercept: -d * pb };
                } else if d < 0.0 {
                    n = Piece::Affine { slope: -d, intercept: d * pb };
                }
            }
            pos[i].push(p);
            neg[i].push(n);
        }
    }
    let mut second = vec![
        (cpwl_coefficients(&taus, &base_plus), 1.0),
        (cpwl_coefficients(&taus, &base_minus), -1.0),
    ];
    for i in 0..interior {
        second.push((cpwl_coefficients(&taus, &pos[i]), 1.0));
        second.push((cpwl_coefficients(&taus, &neg[i]), -1.0));
    }
    ChunkPlan { taus, second }
}

/// Layers of the fitter core. `t_form`/`t_bias` define the scalar
/// `t = Σ w_c z_c + β` computed from the input; `points` are the values of
/// `t` at the samples. Inputs listed in `carry` are passed through every
/// layer, last. The single output `y` has zero bias.
fn fitter_stack(
    input_dim: usize,
    t_form: &[(usize, f64)],
    t_bias: f64,
    points: &[f64],
    values: &[f64],
    w: usize,
    carry: &[usize],
) -> Stack {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| (points[i], values[i])).collect();
    let chunks: Vec<&[(f64, f64)]> = sorted.chunks(w * w).collect();
    let c = chunks.len();
    let lo = sorted[0].0;
    let hi = sorted[sorted.len() - 1].0;
    let plans: Vec<ChunkPlan> = chunks
        .iter()
        .enumerate()
        .map(|(ci, ch)| {
            let left = if ci == 0 { lo - 1.0 } else { chunks[ci - 1].last().unwrap().0 };
            let right = if ci + 1 == c { hi + 1.0 } else { chunks[ci + 1][0].0 };
            plan_chunk(ch, w, left, right)
        })
        .collect();

    struct Slots {
        second: Option<usize>,
        first: Option<usize>,
        t: Option<usize>,
        acc: Option<usize>,
        carry: usize,
    }

    let mut hidden: Vec<Vec<Neuron>> = Vec::new();
    let mut prev: Option<Slots> = None;
    for l in 1..=c + 1 {
        let mut layer = Vec::new();
        let mut slots = Slots { second: None, first: None, t: None, acc: None, carry: 0 };
        if l >= 2 {
            let p = prev.as_ref().unwrap();
            let first = p.first.unwrap();
            slots.second = Some(layer.len());
            for (coef, _) in &plans[l - 2].second {
                let terms = coef.iter().enumerate().map(|(j, &cj)| (first + j, cj)).collect();
                layer.push(Neuron::new(terms, -1.0));
            }
        }
        if l <= c {
            slots.first = Some(layer.len());
            for &tau in &plans[l - 1].taus {
                let n = match &prev {
                    None => Neuron::new(t_form.to_vec(), t_bias - tau),
                    Some(p) => Neuron::new(vec![(p.t.unwrap(), 1.0)], -tau),
                };
                layer.push(n);
            }
        }
        if l < c {
            slots.t = Some(layer.len());
            layer.push(match &prev {
                None => Neuron::new(t_form.to_vec(), t_bias),
                Some(p) => Neuron::carry(p.t.unwrap()),
            });
        }
        if l >= 3 {
            let p = prev.as_ref().unwrap();
            let mut terms = contribution_terms(&plans[l - 3], p.second.unwrap());
            if let Some(a) = p.acc {
                terms.push((a, 1.0));
            }
            slots.acc = Some(layer.len());
            layer.push(Neuron::new(terms, 0.0));
        }
        slots.carry = layer.len();
        for (i, &src) in carry.iter().enumerate() {
            let idx = match &prev {
                None => src,
                Some(p) => p.carry + i,
            };
            layer.push(Neuron::carry(idx));
        }
        hidden.push(layer);
        prev = Some(slots);
    }
    let p = prev.unwrap();
    let mut terms = contribution_terms(&plans[c - 1], p.second.unwrap());
    if let Some(a) = p.acc {
        terms.push((a, 1.0));
    }
    terms.sort_by_key(|t| t.0);
    Stack { input_dim, hidden, output: vec![Neuron::new(terms, 0.0)] }
}

fn contribution_terms(plan: &ChunkPlan, start: usize) -> Vec<(usize, f64)> {
    plan.second.iter().enumerate().map(|(i, &(_, out))| (start + i, out)).collect()
}

/// Picks the projection direction whose sorted projections have the
/// largest minimum gap relative to their range.
fn separating_direction(anchors: &[Array1<f64>]) -> Vec<f64> {
    let k = anchors[0].len();
    let mut candidates: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut rng = stream_rng(0x6d65_6d6f, Stream::Net, &[k as u64]);
    for _ in 0..64 {
        let g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        candidates.push(g.into_iter().map(|v| v / norm).collect());
    }
    let score = |u: &Vec<f64>| {
        let mut p: Vec<f64> = anchors.iter().map(|z| z.iter().zip(u).map(|(a, b)| a * b).sum()).collect();
        p.sort_by(f64::total_cmp);
        let range = p[p.len() - 1] - p[0];
        if p.len() < 2 {
            return 1.0;
        }
        if range <= 0.0 {
            return 0.0;
        }
        p.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / range
    };
    candidates
        .into_iter()
        .map(|u| (score(&u), u))
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal))
        .unwrap()
        .1
}

fn check_ell(ell: usize) -> Result<(), MemorizerError> {
    if ell == 0 || ell > MAX_ELL {
        return Err(MemorizerError::EllOutOfRange(ell));
    }
    Ok(())
}

fn check_value(index: usize, y: f64, ell: usize) -> Result<(), MemorizerError> {
    let scaled = y * 2f64.powi(ell as i32);
    if !(0.0..1.0).contains(&y) || scaled.fract() != 0.0 {
        return Err(MemorizerError::InvalidSample { index, reason: format!("{y} is not an {ell}-bit value in [0, 1)") });
    }
    Ok(())
}

fn check_anchors(anchors: &[Array1<f64>], w: usize, ell: usize) -> Result<(), MemorizerError> {
    if anchors.is_empty() {
        return Err(MemorizerError::Empty);
    }
    if w == 0 {
        return Err(MemorizerError::ZeroWidth);
    }
    let capacity = w * w * ell;
    if anchors.len() > capacity {
        return Err(MemorizerError::Capacity { count: anchors.len(), capacity });
    }
    let k = anchors[0].len();
    for (i, z) in anchors.iter().enumerate() {
        if z.len() != k || z.iter().any(|v| !v.is_finite()) {
            return Err(MemorizerError::InvalidSample { index: i, reason: "anchor has the wrong length or a non-finite entry".into() });
        }
    }
    let mut idx: Vec<usize> = (0..anchors.len()).collect();
    idx.sort_by(|&a, &b| {
        anchors[a].iter().zip(anchors[b].iter()).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
    });
    for pair in idx.windows(2) {
        if anchors[pair[0]] == anchors[pair[1]] {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            return Err(MemorizerError::DuplicateAnchor(a, b));
        }
    }
    Ok(())
}

/// Input map `t = α <u, z> + β` sending the anchors into `[1, 2]`, and the
/// values of `t` at the anchors as the network computes them.
fn latent_scalar(anchors: &[Array1<f64>]) -> (Vec<(usize, f64)>, f64, Vec<f64>) {
    let u = separating_direction(anchors);
    let proj: Vec<f64> = anchors.iter().map(|z| z.iter().zip(&u).map(|(a, b)| a * b).sum()).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let alpha = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
    let form: Vec<(usize, f64)> = u.iter().enumerate().map(|(i, &v)| (i, alpha * v)).collect();
    let beta = 1.0 - alpha * lo;
    let weights: Vec<f64> = form.iter().map(|t| t.1).collect();
    let w = Array2::from_shape_vec((1, weights.len()), weights).unwrap();
    let ts = anchors.iter().map(|z| matvec_ordered(w.view(), z.view())[0] + beta).collect();
    (form, beta, ts)
}

fn finish(
    stack: Stack,
    construction: Construction,
    declared_width: usize,
    declared_depth: usize,
    ell: usize,
    w: usize,
) -> Result<MemorizerNet, MemorizerError> {
    debug_assert_eq!(stack.width(), declared_width);
    debug_assert_eq!(stack.depth(), declared_depth);
    Ok(MemorizerNet { network: stack.to_network()?, construction, declared_width, declared_depth, ell, w })
}

/// `G₁`: a network with `G₁(z_i) = y_i` for up to `W²ℓ` samples, each `y_i`
/// an `ℓ`-bit value in `[0, 1)`.
///
/// The anchors are projected onto a separating direction and rescaled to
/// `t ∈ [1, 2]`. Sorted samples are split into chunks of `W²` points and
/// each chunk into `W` teeth of `W` points. For every chunk, one layer of
/// breakpoint units `relu(t - τ)` (two per gap around the teeth) feeds a
/// second layer of units `relu(g(t))` whose pre-activations are affine on
/// each tooth and -1 outside the chunk; their signed sum interpolates the
/// chunk. Chunks are pipelined, one layer apart.
pub fn build_fitter(samples: &[(Array1<f64>, f64)], w: usize, ell: usize) -> Result<MemorizerNet, MemorizerError> {
    check_ell(ell)?;
    let anchors: Vec<Array1<f64>> = samples.iter().map(|s| s.0.clone()).collect();
    check_anchors(&anchors, w, ell)?;
    for (i, s) in samples.iter().enumerate() {
        check_value(i, s.1, ell)?;
    }
    let (form, beta, ts) = latent_scalar(&anchors);
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut stack = fitter_stack(anchors[0].len(), &form, beta, &ts, &values, w, &[]);
    while stack.depth() < ell + 2 {
        stack.push_relu_layer(&[]);
    }
    stack.pad_width(4 * w + 4);
    finish(stack, Construction::Fitter, 4 * w + 4, ell + 2, ell, w)
}

/// Extraction layers reading bit `j` of `x = Σ_c x_src[c] h_c` (zero bias)
/// with `j` at index `j_idx` of the previous layer, which must come after
/// every index in `x_src`.
fn extractor_layers(ell: usize, x_src: &[(usize, f64)]) -> impl Fn(usize) -> (Vec<Vec<Neuron>>, Neuron) + '_ {
    move |j_idx: usize| {
        let h = 0.5f64.powi(ell as i32);
        let k = 4.0 / h;
        let mut hidden: Vec<Vec<Neuron>> = Vec::new();
        // indices in the previous second-half layer
        let (mut w_i, mut g_i, mut r_i, mut j_i, mut d1, mut d2, mut acc) = (0, 0, 0, 0, 0, 0, None::<usize>);
        for t in 1..=ell {
            let pt = 0.5f64.powi(t as i32);
            let c = pt - 0.75 * h;
            let m = 2f64.powi((ell + 3 - t) as i32) + 4.0;
            let (r_terms, r_bias): (Vec<(usize, f64)>, f64) = if t == 1 {
                (x_src.to_vec(), 0.0)
            } else {
                let prev = 2.0 * pt;
                (vec![(w_i, prev), (r_i, 1.0)], -prev)
            };
            let u_terms: Vec<(usize, f64)> = r_terms.iter().map(|&(i, v)| (i, k * v)).collect();
            let u_bias = k * r_bias - k * c;
            let (gate_terms, gate_bias): (Vec<(usize, f64)>, f64) = if t == 1 {
                let mut g = u_terms.clone();
                g.push((j_idx, -m));
                (g, u_bias + m)
            } else {
                let mut g = u_terms.clone();
                g.push((d1, -m));
                g.push((d2, -m));
                (g, u_bias)
            };
            let j_src = if t == 1 { j_idx } else { j_i };
            let mut first = vec![
                Neuron::new(u_terms, u_bias),
                Neuron::new(gate_terms, gate_bias),
                Neuron::new(r_terms, r_bias),
                Neuron::carry(j_src),
            ];
            let mut acc_first = None;
            if t >= 2 {
                let mut terms = vec![(g_i, -1.0)];
                if let Some(a) = acc {
                    terms.push((a, 1.0));
                }
                acc_first = Some(first.len());
                first.push(Neuron::new(terms, 1.0));
            }
            hidden.push(first);

            let mut second = vec![
                Neuron::new(vec![(0, -1.0)], 1.0),
                Neuron::new(vec![(1, -1.0)], 1.0),
                Neuron::carry(2),
                Neuron::carry(3),
            ];
            if t < ell {
                let next = (t + 1) as f64;
                second.push(Neuron::new(vec![(3, 1.0)], -next));
                second.push(Neuron::new(vec![(3, -1.0)], next));
            }
            acc = acc_first.map(|a| {
                second.push(Neuron::carry(a));
                second.len() - 1
            });
            hidden.push(second);
            w_i = 0;
            g_i = 1;
            r_i = 2;
            j_i = 3;
            d1 = 4;
            d2 = 5;
        }
        let mut terms = vec![(g_i, -1.0)];
        if let Some(a) = acc {
            terms.push((a, 1.0));
        }
        (hidden, Neuron::new(terms, 1.0))
    }
}

/// `G₂(x, j) = b_j` for `x = Σ_{t<=ℓ} 2^-t b_t` and `j ∈ {1, .., ℓ}`;
/// width 8, depth `2ℓ`.
pub fn build_bit_extractor(ell: usize) -> Result<MemorizerNet, MemorizerError> {
    check_ell(ell)?;
    let (hidden, out) = extractor_layers(ell, &[(0, 1.0)])(1);
    let mut stack = Stack { input_dim: 2, hidden, output: vec![out] };
    stack.pad_width(8);
    finish(stack, Construction::Extractor, 8, 2 * ell, ell, 0)
}

/// `G₃(z_i, j) = b_{i,j}` for up to `W²ℓ` anchors with `ℓ` bits each;
/// width `4W + 6`, depth `3ℓ + 1`. Input layout is `(z, j)`.
pub fn build_indexed_memorizer(samples: &[BitSample], w: usize, ell: usize) -> Result<MemorizerNet, MemorizerError> {
    check_ell(ell)?;
    let anchors: Vec<Array1<f64>> = samples.iter().map(|s| s.z.clone()).collect();
    check_anchors(&anchors, w, ell)?;
    for (i, s) in samples.iter().enumerate() {
        if s.bits.len() != ell || s.bits.iter().any(|&b| b > 1) {
            return Err(MemorizerError::InvalidSample { index: i, reason: format!("expected {ell} binary digits") });
        }
    }
    let k = anchors[0].len();
    let (form, beta, ts) = latent_scalar(&anchors);
    let values: Vec<f64> = samples.iter().map(BitSample::y_value).collect();
    let mut stack = fitter_stack(k + 1, &form, beta, &ts, &values, w, &[k]);
    while stack.depth() < ell + 1 {
        let j = stack.hidden.last().unwrap().len() - 1;
        stack.push_relu_layer(&[j]);
    }
    let last = stack.hidden.last().unwrap().len();
    let y = stack.output.pop().unwrap();
    let (hidden, out) = extractor_layers(ell, &y.terms)(last - 1);
    stack.hidden.extend(hidden);
    stack.output = vec![out];
    stack.pad_width(4 * w + 6);
    finish(stack, Construction::Indexed, 4 * w + 6, 3 * ell + 1, ell, w)
}

/// Layers that read all `ℓ` bits of `y = Σ x_src` and output the exact
/// `ℓ`-bit value they encode.
fn requantizer_layers(ell: usize, x_src: &[(usize, f64)]) -> (Vec<Vec<Neuron>>, Neuron) {
    let h = 0.5f64.powi(ell as i32);
    let k = 4.0 / h;
    let mut hidden = Vec::new();
    for t in 1..=ell {
        let pt = 0.5f64.powi(t as i32);
        let c = pt - 0.75 * h;
        let (r_terms, r_bias): (Vec<(usize, f64)>, f64) =
            if t == 1 { (x_src.to_vec(), 0.0) } else { (vec![(0, 2.0 * pt), (1, 1.0)], -2.0 * pt) };
        let u_terms = r_terms.iter().map(|&(i, v)| (i, k * v)).collect();
        let mut first = vec![Neuron::new(u_terms, k * r_bias - k * c), Neuron::new(r_terms, r_bias)];
        if t >= 2 {
            // acc += 2^-(t-1) b_{t-1}
            let mut terms = vec![(0, -2.0 * pt)];
            if t >= 3 {
                terms.push((2, 1.0));
            }
            first.push(Neuron::new(terms, 2.0 * pt));
        }
        hidden.push(first);
        let mut second = vec![Neuron::new(vec![(0, -1.0)], 1.0), Neuron::carry(1)];
        if t >= 2 {
            second.push(Neuron::carry(2));
        }
        hidden.push(second);
    }
    let mut terms = vec![(0, -h)];
    if ell >= 2 {
        terms.push((2, 1.0));
    }
    (hidden, Neuron::new(terms, h))
}

/// The generator, its anchors and the certificate of exact reproduction.
#[derive(Debug, Clone)]
pub struct TheoremGenerator {
    pub net: MemorizerNet,
    /// `ζ_i = e₁ / i` in `R^k`
    pub anchors: Vec<Array1<f64>>,
    /// `T_ℓ(o_i)`
    pub truncated: Vec<Array1<f64>>,
    pub ell: usize,
    pub w: usize,
    /// `max_i ||G(ζ_i) - T_ℓ(o_i)||_∞`, zero when the construction is exact
    pub max_truncation_residual: f64,
    /// `max_i ||G(ζ_i) - o_i||_2`
    pub max_l2_gap: f64,
}

/// `ℓ = ⌈log₂(2n/τ)⌉ + 1`.
pub fn theorem_ell(n: usize, tau: f64) -> usize {
    (2.0 * n as f64 / tau).log2().ceil() as usize + 1
}

/// Smallest `W` with `W²ℓ >= count`, i.e. `⌈√(count/ℓ)⌉`.
pub fn width_parameter(count: usize, ell: usize) -> usize {
    let mut w = ((count as f64 / ell as f64).sqrt().ceil() as usize).max(1);
    while w > 1 && (w - 1) * (w - 1) * ell >= count {
        w -= 1;
    }
    while w * w * ell < count {
        w += 1;
    }
    w
}

/// Builds `G: R^k -> R^n` with `G(e₁/i) = T_ℓ(o_i)` exactly.
///
/// Coordinate `r` of the output is a block that evaluates one shared fitter
/// `G₁` at the scaled input `a_r x₁`, `a_r = 1/(1 + (r-1)/(2sn))`, and then
/// re-reads all `ℓ` bits of the result, which is `Σ_j 2^-j G₂(G₁(a_r x₁), j)`
/// computed with one extraction chain. The fitter memorizes the `sn` points
/// `a_r / i -> T_ℓ(o_i)_r`, which are distinct because
/// `i (1 + (r-1)/(2sn))` has integer part `i`. Unused latent coordinates
/// are ignored.
pub fn build_theorem_generator(
    targets: &[Array1<f64>],
    tau: f64,
    k: usize,
    max_width: Option<usize>,
) -> Result<TheoremGenerator, MemorizerError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MemorizerError::TauOutOfRange(tau));
    }
    if targets.is_empty() {
        return Err(MemorizerError::Empty);
    }
    if k == 0 {
        return Err(MemorizerError::InvalidSample { index: 0, reason: "latent dimension must be at least 1".into() });
    }
    let n = targets[0].len();
    for (i, o) in targets.iter().enumerate() {
        if o.len() != n || n == 0 || o.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MemorizerError::TargetOutOfCube { index: i });
        }
    }
    let ell = theorem_ell(n, tau);
    check_ell(ell)?;
    let s = targets.len();
    let w = width_parameter(s * n, ell);
    let declared_width = (4 * w + 6) * n;
    if let Some(budget) = max_width {
        if declared_width > budget {
            return Err(MemorizerError::WidthBudget { needed: declared_width, budget });
        }
    }
    let truncated: Vec<Array1<f64>> = targets.iter().map(|o| truncate_bits(o, ell)).collect();
    let rho = 1.0 / (2.0 * (s * n) as f64);
    let a: Vec<f64> = (0..n).map(|r| 1.0 / (1.0 + r as f64 * rho)).collect();
    let inv: Vec<f64> = (1..=s).map(|i| 1.0 / i as f64).collect();
    let lo = a[n - 1] * inv[s - 1];
    let hi = a[0];
    let alpha = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
    let beta = 1.0 - alpha * lo;
    let mut points = Vec::with_capacity(s * n);
    let mut values = Vec::with_capacity(s * n);
    for (r, &ar) in a.iter().enumerate() {
        let scale = alpha * ar;
        for (i, &x1) in inv.iter().enumerate() {
            points.push(scale * x1 + beta);
            values.push(truncated[i][r]);
        }
    }
    let core = fitter_stack(1, &[(0, alpha)], beta, &points, &values, w, &[]);

    let mut blocks = Vec::with_capacity(n);
    for &ar in &a {
        let mut block = core.clone();
        block.input_dim = k;
        for neuron in &mut block.hidden[0] {
            for term in &mut neuron.terms {
                term.1 *= ar;
            }
        }
        while block.depth() < ell + 1 {
            block.push_relu_layer(&[]);
        }
        let y = block.output.pop().unwrap();
        let (hidden, out) = requantizer_layers(ell, &y.terms);
        block.hidden.extend(hidden);
        block.output = vec![out];
        block.push_relu_layer(&[]);
        blocks.push(block);
    }
    let mut stack = Stack::hconcat(blocks);
    stack.pad_width(declared_width);
    let net = finish(stack, Construction::Generator, declared_width, 3 * ell + 2, ell, w)?;

    let anchors: Vec<Array1<f64>> = inv
        .iter()
        .map(|&x1| {
            let mut z = Array1::zeros(k);
            z[0] = x1;
            z
        })
        .collect();
    let mut max_truncation_residual = 0.0f64;
    let mut max_l2_gap = 0.0f64;
    for (i, z) in anchors.iter().enumerate() {
        let g = net.network().forward(z.view())?;
        let res = (&g - &truncated[i]).iter().map(|v| v.abs()).fold(0.0, f64::max);
        max_truncation_residual = max_truncation_residual.max(res);
        let d = &g - &targets[i];
        max_l2_gap = max_l2_gap.max(d.dot(&d).sqrt());
    }
    Ok(TheoremGenerator { net, anchors, truncated, ell, w, max_truncation_residual, max_l2_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_bits(rng: &mut impl Rng, ell: usize) -> Vec<u8> {
        (0..ell).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn bits_round_trip() {
        let bits = vec![1, 0, 1, 1];
        assert_eq!(bits_to_value(&bits), 0.6875);
        assert_eq!(value_to_bits(0.6875, 4), bits);
        assert_eq!(truncate_bits(&array![1.0, 0.3, 0.0], 3), array![0.875, 0.25, 0.0]);
    }

    #[test]
    fn single_sample_fit() {
        let g = build_fitter(&[(array![0.5], 0.75)], 1, 2).unwrap();
        assert!((g.eval_scalar(&[0.5], None).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(count_dimensions(g.network()), (8, 4));
    }

    #[test]
    fn fitter_dimensions_follow_formula() {
        let mut rng = stream_rng(3, Stream::Cell, &[]);
        let samples: Vec<(Array1<f64>, f64)> = (0..12)
            .map(|_| (array![rng.random::<f64>(), rng.random::<f64>()], bits_to_value(&random_bits(&mut rng, 3))))
            .collect();
        let g = build_fitter(&samples, 2, 3).unwrap();
        assert_eq!((g.declared_width(), g.declared_depth()), (12, 5));
        assert_eq!(count_dimensions(g.network()), (12, 5));
        for (z, y) in &samples {
            assert!((g.eval_scalar(z.as_slice().unwrap(), None).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fitter_errors() {
        assert!(matches!(
            build_fitter(&[(array![1.0], 0.5), (array![1.0], 0.25)], 1, 2),
            Err(MemorizerError::DuplicateAnchor(0, 1))
        ));
        let many: Vec<_> = (0..5).map(|i| (array![i as f64], 0.5)).collect();
        assert!(matches!(build_fitter(&many, 1, 4), Err(MemorizerError::Capacity { count: 5, capacity: 4 })));
        assert!(build_fitter(&[(array![1.0], 0.3)], 1, 2).is_err());
        assert!(matches!(build_fitter(&[(array![1.0], 0.5)], 1, 0), Err(MemorizerError::EllOutOfRange(0))));
    }

    #[test]
    fn extractor_reads_bits() {
        let g = build_bit_extractor(4).unwrap();
        assert_eq!(g.eval_scalar(&[0.6875], Some(2)).unwrap(), 0.0);
        assert_eq!(g.eval_scalar(&[0.6875], Some(4)).unwrap(), 1.0);
        assert_eq!(count_dimensions(g.network()), (8, 8));
        assert!(build_bit_extractor(0).is_err());
        assert!(build_bit_extractor(53).is_err());
    }

    #[test]
    fn extractor_exhaustive_six_bits() {
        let g = build_bit_extractor(6).unwrap();
        for code in 0u32..64 {
            let bits: Vec<u8> = (0..6).map(|t| ((code >> (5 - t)) & 1) as u8).collect();
            let x = bits_to_value(&bits);
            for j in 1..=6 {
                assert_eq!(g.eval_scalar(&[x], Some(j)).unwrap(), f64::from(bits[j - 1]), "x={x}, j={j}");
            }
        }
    }

    #[test]
    fn extractor_at_full_precision() {
        let mut rng = stream_rng(11, Stream::Cell, &[]);
        for ell in [20, 40, 52] {
            let g = build_bit_extractor(ell).unwrap();
            for _ in 0..20 {
                let bits = random_bits(&mut rng, ell);
                let x = bits_to_value(&bits);
                for j in [1, 2, ell / 2, ell - 1, ell] {
                    assert_eq!(g.eval_scalar(&[x], Some(j)).unwrap(), f64::from(bits[j - 1]), "ℓ={ell}, j={j}");
                }
            }
        }
    }

    #[test]
    fn extractor_tolerates_small_input_error() {
        let g = build_bit_extractor(5).unwrap();
        let bits = vec![1, 0, 1, 1, 0];
        let x = bits_to_value(&bits);
        let e = 0.2 * 0.5f64.powi(5) / 4.0;
        for shifted in [x - e, x + e] {
            for j in 1..=5 {
                assert_eq!(g.eval_scalar(&[shifted], Some(j)).unwrap(), f64::from(bits[j - 1]));
            }
        }
    }

    #[test]
    fn indexed_memorizer_recall() {
        let mut rng = stream_rng(5, Stream::Cell, &[]);
        let samples: Vec<BitSample> = (0..16)
            .map(|_| BitSample::new(array![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()], random_bits(&mut rng, 4)))
            .collect();
        let g = build_indexed_memorizer(&samples, 2, 4).unwrap();
        assert_eq!(count_dimensions(g.network()), (14, 13));
        for s in &samples {
            for j in 1..=4 {
                assert_eq!(g.eval_scalar(s.z.as_slice().unwrap(), Some(j)).unwrap(), f64::from(s.bits[j - 1]));
            }
        }
    }

    #[test]
    fn one_anchor_all_zero_bits() {
        let g = build_indexed_memorizer(&[BitSample::new(array![0.3], vec![0, 0, 0])], 1, 3).unwrap();
        for j in 1..=3 {
            assert_eq!(g.eval_scalar(&[0.3], Some(j)).unwrap(), 0.0);
        }
    }

    #[test]
    fn theorem_ell_values() {
        assert_eq!(theorem_ell(4, 0.5), 5);
        assert_eq!(theorem_ell(8, 0.25), 7);
        assert_eq!(width_parameter(40, 7), 3);
        assert_eq!(width_parameter(12, 3), 2);
    }

    #[test]
    fn theorem_generator_reproduces_truncations() {
        let targets = vec![array![0.1, 0.9, 0.5, 0.33], array![1.0, 0.0, 0.25, 0.7], array![0.6, 0.61, 0.62, 0.63]];
        let g = build_theorem_generator(&targets, 0.25, 2, None).unwrap();
        assert_eq!(g.max_truncation_residual, 0.0);
        assert!(g.max_l2_gap <= 0.25);
        let (w, d) = count_dimensions(g.net.network());
        assert_eq!(w, (4 * g.w + 6) * 4);
        assert_eq!(d, 3 * g.ell + 2);
    }

    #[test]
    fn theorem_generator_errors() {
        let t = vec![array![0.5, 0.5]];
        assert!(matches!(build_theorem_generator(&t, 0.0, 1, None), Err(MemorizerError::TauOutOfRange(_))));
        assert!(matches!(build_theorem_generator(&[array![1.5]], 0.5, 1, None), Err(MemorizerError::TargetOutOfCube { .. })));
        assert!(matches!(build_theorem_generator(&t, 0.5, 1, Some(5)), Err(MemorizerError::WidthBudget { .. })));
    }
}
