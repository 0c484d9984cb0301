//! Fully connected ReLU generators `G: R^k -> R^n`.
//!
//! A network is a stack of affine layers; every hidden layer is followed by
//! a ReLU and the last layer by the configured [`Activation`]. An optional
//! [`OutputNorm`] is applied after the final activation.
//!
//! Networks are immutable once built and can be shared between threads.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::linalg::{matvec_ordered, matvec_t_ordered, spectral_norm};
use crate::rng::{stream_rng, Stream};

pub const GEN_MAGIC: &str = "OBGCS-GEN v1";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("malformed generator file: {0}")]
    Malformed(String),
    #[error("latent point violates its radius bound: norm {norm} > {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ContainerError> for GeneratorError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Io(io) => GeneratorError::Io(io),
            other => GeneratorError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative given the pre-activation, with `relu'(0) = 0`.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
        }
    }

    fn lipschitz_factor(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Post-processing of the network output.
///
/// `UnitSphere` maps `h -> h / ||h||_2` so that the range lies on the unit
/// sphere; `L1Ball` maps `h -> h / max(1, ||h||_1)` so that it lies in the
/// unit l1 ball. At most one can be active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputNorm {
    #[default]
    None,
    UnitSphere,
    L1Ball,
}

impl OutputNorm {
    pub fn tag(self) -> &'static str {
        match self {
            OutputNorm::None => "none",
            OutputNorm::UnitSphere => "unit_sphere",
            OutputNorm::L1Ball => "l1_ball",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "none" => Some(OutputNorm::None),
            "unit_sphere" => Some(OutputNorm::UnitSphere),
            "l1_ball" => Some(OutputNorm::L1Ball),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_out x d_in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        Self { weights, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, h: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = matvec_ordered(self.weights.view(), h);
        out += &self.bias;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNetwork {
    layers: Vec<Layer>,
    final_activation: Activation,
    output_norm: OutputNorm,
    lipschitz_bound: f64,
}

/// Intermediate values from one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pre: Vec<Array1<f64>>,
    /// final activation output before any output normalization
    raw: Array1<f64>,
    output: Array1<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }
}

impl GeneratorNetwork {
    pub fn new(layers: Vec<Layer>, final_activation: Activation) -> Result<Self, GeneratorError> {
        if layers.is_empty() {
            return Err(GeneratorError::Dimension("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(GeneratorError::Dimension(format!(
                    "layer {}: bias has length {} but weights have {} rows",
                    i + 1,
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(GeneratorError::Dimension(format!("layer {} has a zero dimension", i + 1)));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(GeneratorError::Dimension(format!(
                    "layer {} expects input {} but previous layer produces {}",
                    i + 1,
                    layer.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(GeneratorError::NonFinite(format!("layer {}", i + 1)));
            }
        }
        let lipschitz_bound = lipschitz_upper_bound(&layers, final_activation);
        Ok(Self { layers, final_activation, output_norm: OutputNorm::None, lipschitz_bound })
    }

    pub fn with_output_norm(mut self, norm: OutputNorm) -> Self {
        self.output_norm = norm;
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    pub fn output_norm(&self) -> OutputNorm {
        self.output_norm
    }

    /// `[k, d_1, ..., n]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Number of hidden (ReLU) layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Widest hidden layer (0 for a single affine layer).
    pub fn width(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(Layer::out_dim).max().unwrap_or(0)
    }

    /// Cached upper bound on the Lipschitz constant of the layer stack:
    /// the product of the layer spectral norms times the final activation's
    /// factor. Output normalization is not accounted for.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    fn check_latent(&self, z: ArrayView1<'_, f64>) -> Result<(), GeneratorError> {
        if z.len() != self.latent_dim() {
            return Err(GeneratorError::Shape { expected: self.latent_dim(), got: z.len() });
        }
        Ok(())
    }

    pub fn forward(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>, GeneratorError> {
        self.check_latent(z)?;
        let last = self.layers.len() - 1;
        let mut h = z.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.affine(h.view());
            let act = if i == last { self.final_activation } else { Activation::Relu };
            a.mapv_inplace(|v| act.apply(v));
            h = a;
        }
        Ok(normalize_output(self.output_norm, h))
    }

    /// Forward pass that records the pre-activations needed by [`Self::vjp`].
    pub fn forward_tape(&self, z: ArrayView1<'_, f64>) -> Result<Tape, GeneratorError> {
        self.check_latent(z)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = z.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.affine(h.view());
            let act = if i == last { self.final_activation } else { Activation::Relu };
            h = a.mapv(|v| act.apply(v));
            pre.push(a);
        }
        let raw = h.clone();
        let output = normalize_output(self.output_norm, h);
        Ok(Tape { pre, raw, output })
    }

    /// `J(z)ᵀ cotangent` for the Jacobian recorded in `tape`.
    pub fn vjp(&self, tape: &Tape, cotangent: ArrayView1<'_, f64>) -> Result<Array1<f64>, GeneratorError> {
        if cotangent.len() != self.output_dim() {
            return Err(GeneratorError::Shape { expected: self.output_dim(), got: cotangent.len() });
        }
        let mut g = output_norm_vjp(self.output_norm, &tape.raw, cotangent);
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            let act = if i == last { self.final_activation } else { Activation::Relu };
            for (gi, &p) in g.iter_mut().zip(tape.pre[i].iter()) {
                *gi *= act.derivative(p);
            }
            g = matvec_t_ordered(self.layers[i].weights.view(), g.view());
        }
        Ok(g)
    }

    /// Vector-Jacobian product of `G` at `z`.
    pub fn latent_vjp(
        &self,
        z: ArrayView1<'_, f64>,
        cotangent: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>, GeneratorError> {
        let tape = self.forward_tape(z)?;
        self.vjp(&tape, cotangent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GeneratorError> {
        fs::write(path, self.to_container().to_bytes())?;
        Ok(())
    }

    /// Writes the structured-text (JSON) form.
    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<(), GeneratorError> {
        let text = serde_json::to_string_pretty(&self.to_text_form())
            .map_err(|e| GeneratorError::Malformed(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads either form; the text form is recognized by a leading `{`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeneratorError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GeneratorError> {
        let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
        if first == Some(&b'{') {
            let text: TextForm = serde_json::from_slice(bytes).map_err(|e| GeneratorError::Malformed(e.to_string()))?;
            return Self::from_text_form(text);
        }
        Self::from_container(&Container::from_bytes(bytes, GEN_MAGIC)?)
    }

    pub fn to_container(&self) -> Container {
        let dims = self.layer_dims();
        let dims_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        let mut c = Container::new(GEN_MAGIC)
            .field("layers", dims_str.join(" "))
            .field("activation", self.final_activation.tag())
            .field("output_norm", self.output_norm.tag());
        for (i, layer) in self.layers.iter().enumerate() {
            c = c
                .array(&format!("W{}", i + 1), layer.weights.iter().copied().collect())
                .array(&format!("b{}", i + 1), layer.bias.to_vec());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, GeneratorError> {
        let dims: Vec<usize> = c
            .get("layers")?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| GeneratorError::Malformed("unparsable `layers` field".into()))?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(GeneratorError::Malformed(format!("invalid layer dims {dims:?}")));
        }
        let act = Activation::from_tag(c.get("activation")?)
            .ok_or_else(|| GeneratorError::Malformed("unknown activation tag".into()))?;
        let norm = match c.get("output_norm") {
            Ok(tag) => OutputNorm::from_tag(tag)
                .ok_or_else(|| GeneratorError::Malformed("unknown output_norm tag".into()))?,
            Err(_) => OutputNorm::None,
        };
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (d_in, d_out) = (dims[i], dims[i + 1]);
            let w = c.get_array(&format!("W{}", i + 1))?;
            let b = c.get_array(&format!("b{}", i + 1))?;
            if w.len() != d_in * d_out {
                return Err(GeneratorError::Dimension(format!(
                    "W{} holds {} values, layer is {d_out}x{d_in}",
                    i + 1,
                    w.len()
                )));
            }
            if b.len() != d_out {
                return Err(GeneratorError::Dimension(format!(
                    "b{} holds {} values, layer has {d_out} outputs",
                    i + 1,
                    b.len()
                )));
            }
            let weights = Array2::from_shape_vec((d_out, d_in), w.to_vec()).expect("length checked");
            layers.push(Layer::new(weights, Array1::from(b.to_vec())));
        }
        Ok(Self::new(layers, act)?.with_output_norm(norm))
    }

    fn to_text_form(&self) -> TextForm {
        TextForm {
            format: GEN_MAGIC.to_string(),
            layer_dims: self.layer_dims(),
            activation: self.final_activation,
            output_norm: self.output_norm,
            layers: self
                .layers
                .iter()
                .map(|l| TextLayer {
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    fn from_text_form(t: TextForm) -> Result<Self, GeneratorError> {
        if t.format != GEN_MAGIC {
            return Err(GeneratorError::Malformed(format!("unexpected format tag `{}`", t.format)));
        }
        if t.layer_dims.len() != t.layers.len() + 1 {
            return Err(GeneratorError::Dimension(format!(
                "{} layer dims declared for {} layers",
                t.layer_dims.len(),
                t.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(t.layers.len());
        for (i, l) in t.layers.into_iter().enumerate() {
            let (d_in, d_out) = (t.layer_dims[i], t.layer_dims[i + 1]);
            if l.weights.len() != d_out || l.weights.iter().any(|r| r.len() != d_in) || l.bias.len() != d_out {
                return Err(GeneratorError::Dimension(format!("layer {} does not match {d_out}x{d_in}", i + 1)));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            layers.push(Layer::new(
                Array2::from_shape_vec((d_out, d_in), flat).expect("length checked"),
                Array1::from(l.bias),
            ));
        }
        Ok(Self::new(layers, t.activation)?.with_output_norm(t.output_norm))
    }
}

#[derive(Serialize, Deserialize)]
struct TextForm {
    format: String,
    layer_dims: Vec<usize>,
    activation: Activation,
    #[serde(default)]
    output_norm: OutputNorm,
    layers: Vec<TextLayer>,
}

#[derive(Serialize, Deserialize)]
struct TextLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn normalize_output(norm: OutputNorm, h: Array1<f64>) -> Array1<f64> {
    match norm {
        OutputNorm::None => h,
        OutputNorm::UnitSphere => {
            let s = h.dot(&h).sqrt();
            if s > 0.0 {
                h / s
            } else {
                h
            }
        }
        OutputNorm::L1Ball => {
            let s = h.iter().map(|v| v.abs()).sum::<f64>();
            if s > 1.0 {
                h / s
            } else {
                h
            }
        }
    }
}

fn output_norm_vjp(norm: OutputNorm, raw: &Array1<f64>, c: ArrayView1<'_, f64>) -> Array1<f64> {
    match norm {
        OutputNorm::None => c.to_owned(),
        OutputNorm::UnitSphere => {
            let s = raw.dot(raw).sqrt();
            if s == 0.0 {
                return c.to_owned();
            }
            // d(h/|h|) = (I - x xᵀ)/|h|
            let x = raw / s;
            let proj = x.dot(&c);
            (&c - &(&x * proj)) / s
        }
        OutputNorm::L1Ball => {
            let s = raw.iter().map(|v| v.abs()).sum::<f64>();
            if s <= 1.0 {
                return c.to_owned();
            }
            let hc = raw.dot(&c);
            Array1::from_shape_fn(raw.len(), |i| {
                let sgn = if raw[i] > 0.0 {
                    1.0
                } else if raw[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                c[i] / s - sgn * hc / (s * s)
            })
        }
    }
}

/// Product of layer spectral norms (power iteration, at least 30 iterations,
/// tolerance 1e-8) times the final activation's Lipschitz factor.
pub fn lipschitz_upper_bound(layers: &[Layer], final_activation: Activation) -> f64 {
    let prod: f64 = layers
        .iter()
        .map(|l| spectral_norm(l.weights.view(), 30, 2000, 1e-8))
        .product();
    prod * final_activation.lipschitz_factor()
}

/// A latent vector, optionally tied to the ball `B_2^k(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint {
    z: Array1<f64>,
    radius_bound: Option<f64>,
}

impl LatentPoint {
    pub fn new(z: Array1<f64>) -> Self {
        Self { z, radius_bound: None }
    }

    pub fn in_ball(z: Array1<f64>, radius: f64) -> Result<Self, GeneratorError> {
        let norm = z.dot(&z).sqrt();
        if !(radius >= 0.0) || norm > radius {
            return Err(GeneratorError::OutsideBall { norm, radius });
        }
        Ok(Self { z, radius_bound: Some(radius) })
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.z.view()
    }

    pub fn radius_bound(&self) -> Option<f64> {
        self.radius_bound
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.z
    }
}

/// Parameters of a randomly initialized generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Weights are N(0, (scale/sqrt(fan_in))^2).
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Biases are N(0, bias_scale^2); zero keeps G positively homogeneous.
    #[serde(default)]
    pub bias_scale: f64,
    #[serde(default = "default_activation")]
    pub final_activation: Activation,
    #[serde(default)]
    pub output_norm: OutputNorm,
}

fn default_scale() -> f64 {
    1.0
}

fn default_activation() -> Activation {
    Activation::Identity
}

impl SynthSpec {
    pub fn new(k: usize, n: usize, hidden_dims: Vec<usize>, seed: u64) -> Self {
        Self {
            k,
            n,
            hidden_dims,
            seed,
            scale: 1.0,
            bias_scale: 0.0,
            final_activation: Activation::Identity,
            output_norm: OutputNorm::None,
        }
    }
}

pub fn synth_generator(spec: &SynthSpec) -> Result<GeneratorNetwork, GeneratorError> {
    if spec.k == 0 || spec.n == 0 || spec.hidden_dims.contains(&0) {
        return Err(GeneratorError::Dimension(format!(
            "invalid generator dims k={}, hidden={:?}, n={}",
            spec.k, spec.hidden_dims, spec.n
        )));
    }
    if !(spec.scale > 0.0) || !spec.scale.is_finite() || !(spec.bias_scale >= 0.0) {
        return Err(GeneratorError::Dimension("scale must be positive and bias_scale nonnegative".into()));
    }
    let mut dims = vec![spec.k];
    dims.extend_from_slice(&spec.hidden_dims);
    dims.push(spec.n);
    let mut rng = stream_rng(spec.seed, Stream::Weights, &[]);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let std = spec.scale / (d_in as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((d_out, d_in), || {
                let g: f64 = StandardNormal.sample(&mut rng);
                std * g
            });
            let bias = Array1::from_shape_simple_fn(d_out, || {
                let g: f64 = StandardNormal.sample(&mut rng);
                spec.bias_scale * g
            });
            Layer::new(weights, bias)
        })
        .collect();
    Ok(GeneratorNetwork::new(layers, spec.final_activation)?.with_output_norm(spec.output_norm))
}
