//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Two network shapes are provided. [`Mlp`] is a plain chain of dense
//! layers. [`BranchedNet`] is a shared trunk followed by `K` independent
//! heads, each ending in a single scalar; head `c` computes `w_c(x) + b_c`,
//! the `c`-th affine piece of a max-affine functional.
//!
//! All forward passes are pure. Gradients are written into a
//! [`GradientBuffer`] whose layer order matches [`Network::layers`].

mod gradcheck;
mod optim;
mod serial;

pub use gradcheck::{extrapolated_difference, finite_difference, grad_check, max_relative_error};
pub use optim::{Optimizer, OptimizerKind};
pub use serial::{LayerRecord, MlpRecord, NetRecord};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Default slope of [`Activation::LeakyRelu`] when none is given.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
        }
    }

    /// Multiplies `delta` by the activation derivative, recovered from the
    /// activation output. The subgradient at a relu kink is 0.
    fn backprop(self, out: &[f64], delta: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (d, &a) in delta.iter_mut().zip(out) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &a) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - a * a;
                }
            }
            Activation::LeakyRelu(s) => {
                for (d, &a) in delta.iter_mut().zip(out) {
                    if a <= 0.0 {
                        *d *= s;
                    }
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => f.write_str("identity"),
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" | "lrelu" => Ok(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Invalid(format!("unknown activation `{s}`")))?;
                if !(slope.is_finite() && slope >= 0.0) {
                    return Err(Error::Invalid(format!("leaky_relu slope must be >= 0, got {slope}")));
                }
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}

/// A fully connected layer `a = act(W x + b)` with `W` stored `[out × in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return shape_err(format!("layer dims must be positive, got {in_dim}->{out_dim}"));
        }
        if weights.len() != in_dim * out_dim {
            return shape_err(format!(
                "layer {in_dim}->{out_dim} needs {} weights, got {}",
                in_dim * out_dim,
                weights.len()
            ));
        }
        if bias.len() != out_dim {
            return shape_err(format!("layer {in_dim}->{out_dim} needs {out_dim} biases, got {}", bias.len()));
        }
        if let Activation::LeakyRelu(s) = activation {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Invalid(format!("leaky_relu slope must be >= 0, got {s}")));
            }
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(in_dim, out_dim, activation, vec![0.0; in_dim * out_dim], vec![0.0; out_dim])
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-s..=s)).collect();
        Self::new(in_dim, out_dim, activation, weights, vec![0.0; out_dim])
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Applies the layer to `n` stacked rows.
    fn forward_rows(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            out.extend_from_slice(&self.bias);
        }
        gemm_nt(n, self.in_dim, self.out_dim, x, &self.weights, 1.0, &mut out);
        if self.activation != Activation::Identity {
            for v in &mut out {
                *v = self.activation.apply(*v);
            }
        }
        out
    }
}

/// Parameter gradients for one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Gradients mirroring every parameter tensor of a network, in [`Network::layers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    layers: Vec<LayerGrad>,
}

impl GradientBuffer {
    pub fn zeros_for<N: Network + ?Sized>(net: &N) -> Self {
        Self {
            layers: net.layers().into_iter().map(LayerGrad::zeros_like).collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerGrad] {
        &mut self.layers
    }

    /// All gradient values, layer by layer, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_congruent(&self, other: &GradientBuffer) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len()
            })
    }

    /// `self += other`, element by element.
    pub fn add_assign(&mut self, other: &GradientBuffer) -> Result<()> {
        if !self.is_congruent(other) {
            return shape_err("gradient buffers are not congruent");
        }
        for (v, o) in self.values_mut().zip(other.values()) {
            *v += o;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.values_mut() {
            *v *= k;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }
}

/// Anything with an ordered list of dense layers whose parameters can be trained.
pub trait Network {
    fn layers(&self) -> Vec<&DenseLayer>;
    fn layers_mut(&mut self) -> Vec<&mut DenseLayer>;
    /// Human-readable name for each layer, aligned with [`Network::layers`].
    fn layer_names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Activations recorded during a forward pass over `n` stacked rows.
/// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pub n: usize,
    pub acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds at least the input")
    }
}

/// A chain of dense layers. An empty chain is the identity on `in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    in_dim: usize,
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(in_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if in_dim == 0 {
            return shape_err("input width must be positive");
        }
        let mut width = in_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != width {
                return shape_err(format!("layer {i} expects width {}, previous width is {width}", l.in_dim));
            }
            width = l.out_dim;
        }
        Ok(Self { in_dim, layers })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    /// Glorot-initialized chain through `widths` (input first). Hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() {
            return shape_err("need at least an input width");
        }
        let mut layers = Vec::with_capacity(widths.len().saturating_sub(1));
        for (i, w) in widths.windows(2).enumerate() {
            let act = if i + 2 == widths.len() { output } else { hidden };
            layers.push(DenseLayer::glorot(w[0], w[1], act, rng)?);
        }
        Self::new(widths[0], layers)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    pub fn dense_layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Maps a vector `[in]` to `[out]`, or a matrix `[n × in]` to `[n × out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input(x, self.in_dim, "network")?;
        let out = self.forward_rows(x.data(), n);
        Ok(reshape_like(x, out, self.out_dim()))
    }

    pub(crate) fn forward_rows(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.forward_rows(&cur, n);
        }
        cur
    }

    pub(crate) fn tape(&self, x: Vec<f64>, n: usize) -> Tape {
        debug_assert_eq!(x.len(), n * self.in_dim);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for l in &self.layers {
            let next = l.forward_rows(acts.last().unwrap(), n);
            acts.push(next);
        }
        Tape { n, acts }
    }

    /// Accumulates parameter gradients into `grads` (this chain's layers only)
    /// given `d_out = ∂loss/∂output` of shape `[n × out]`. Returns `∂loss/∂input`
    /// when `want_input` is set.
    pub(crate) fn backward_rows(
        &self,
        tape: &Tape,
        d_out: Vec<f64>,
        grads: &mut [LayerGrad],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        debug_assert_eq!(grads.len(), self.layers.len());
        let n = tape.n;
        let mut delta = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&tape.acts[i + 1], &mut delta);
            let x = &tape.acts[i];
            let g = &mut grads[i];
            gemm_tn(layer.out_dim, n, layer.in_dim, &delta, x, 1.0, &mut g.weights);
            for row in delta.chunks_exact(layer.out_dim) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if i > 0 || want_input {
                let mut dx = vec![0.0; n * layer.in_dim];
                gemm_nn(n, layer.out_dim, layer.in_dim, &delta, &layer.weights, 0.0, &mut dx);
                delta = dx;
            }
        }
        want_input.then_some(delta)
    }

    /// Gradient of `Σ d_out · output` with respect to parameters and input.
    pub fn backward(&self, x: &Tensor, d_out: &Tensor) -> Result<(GradientBuffer, Tensor)> {
        let n = check_input(x, self.in_dim, "network")?;
        if d_out.len() != n * self.out_dim() {
            return shape_err(format!(
                "output gradient has {} values, expected {}",
                d_out.len(),
                n * self.out_dim()
            ));
        }
        let tape = self.tape(x.data().to_vec(), n);
        let mut grads = GradientBuffer::zeros_for(self);
        let dx = self
            .backward_rows(&tape, d_out.data().to_vec(), &mut grads.layers, true)
            .expect("input gradient requested");
        Ok((grads, Tensor::from_raw(x.shape().to_vec(), dx)))
    }
}

impl Network for Mlp {
    fn layers(&self) -> Vec<&DenseLayer> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.layers.iter_mut().collect()
    }

    fn layer_names(&self) -> Vec<String> {
        (0..self.layers.len()).map(|i| format!("layer{i}")).collect()
    }
}

/// Shared trunk followed by `K ≥ 1` scalar heads.
///
/// When `normalize` is set, every trunk output row is scaled to unit L2 norm
/// before it is used as the embedding (and as the heads' input).
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedNet {
    trunk: Mlp,
    heads: Vec<Mlp>,
    normalize: bool,
}

/// Trunk forward record plus the (possibly normalized) embedding rows.
#[derive(Debug, Clone)]
pub(crate) struct EmbedTape {
    pub trunk: Tape,
    embed: Option<Vec<f64>>,
    norms: Vec<f64>,
}

impl EmbedTape {
    pub fn n(&self) -> usize {
        self.trunk.n
    }

    pub fn output(&self) -> &[f64] {
        self.embed.as_deref().unwrap_or_else(|| self.trunk.output())
    }
}

/// Forward record of a [`BranchedNet`] over `n` stacked input rows.
#[derive(Debug, Clone)]
pub(crate) struct BranchedTape {
    pub embed: EmbedTape,
    pub heads: Vec<Tape>,
}

// Rows with a norm below this are mapped to zero.
const MIN_NORM: f64 = 1e-12;

fn normalize_rows(rows: &mut [f64], width: usize) -> Vec<f64> {
    rows.chunks_exact_mut(width)
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in r.iter_mut() {
                *v = if norm < MIN_NORM { 0.0 } else { *v / norm };
            }
            norm
        })
        .collect()
}

impl BranchedTape {
    /// Head outputs as an `[n × K]` matrix.
    pub fn head_matrix(&self) -> Vec<f64> {
        let n = self.embed.n();
        let k = self.heads.len();
        let mut out = vec![0.0; n * k];
        for (c, h) in self.heads.iter().enumerate() {
            for (i, v) in h.output().iter().enumerate() {
                out[i * k + c] = *v;
            }
        }
        out
    }
}

impl BranchedNet {
    pub fn new(trunk: Mlp, heads: Vec<Mlp>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Invalid("a branched net needs at least one head".into()));
        }
        let embed = trunk.out_dim();
        for (c, h) in heads.iter().enumerate() {
            if h.in_dim() != embed {
                return shape_err(format!("head {c} expects width {}, trunk emits {embed}", h.in_dim()));
            }
            if h.layers.is_empty() || h.out_dim() != 1 {
                return shape_err(format!("head {c} must end in a single scalar output"));
            }
        }
        Ok(Self {
            trunk,
            heads,
            normalize: false,
        })
    }

    /// Enables or disables unit-L2 scaling of the embedding.
    pub fn with_normalized_embedding(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn normalizes_embedding(&self) -> bool {
        self.normalize
    }

    /// Glorot-initialized net: trunk through `trunk_widths` (input first), `k`
    /// heads through `head_hidden` to one linear output.
    pub fn glorot<R: Rng + ?Sized>(
        trunk_widths: &[usize],
        trunk_hidden: Activation,
        trunk_output: Activation,
        head_hidden: &[usize],
        head_activation: Activation,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let trunk = Mlp::glorot(trunk_widths, trunk_hidden, trunk_output, rng)?;
        let mut widths = Vec::with_capacity(head_hidden.len() + 2);
        widths.push(trunk.out_dim());
        widths.extend_from_slice(head_hidden);
        widths.push(1);
        let heads = (0..k)
            .map(|_| Mlp::glorot(&widths, head_activation, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(trunk, heads)
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn heads(&self) -> &[Mlp] {
        &self.heads
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.trunk.out_dim()
    }

    /// Embedding `f_W(x)`: `[in] → [embed]` or `[n × in] → [n × embed]`.
    pub fn forward_embed(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input(x, self.input_dim(), "branched net")?;
        let out = self.embed_rows(x.data(), n);
        Ok(reshape_like(x, out, self.embed_dim()))
    }

    /// The `K` head outputs `w_c(x) + b_c` for a single input point.
    pub fn forward_heads(&self, x: &Tensor) -> Result<Vec<f64>> {
        let n = check_input(x, self.input_dim(), "branched net")?;
        if n != 1 {
            return shape_err(format!("forward_heads takes one point, got {n} rows"));
        }
        Ok(self.head_rows(x.data(), 1))
    }

    /// Head outputs for `n` stacked points as an `[n × K]` matrix.
    pub fn forward_heads_batch(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input(x, self.input_dim(), "branched net")?;
        Ok(Tensor::from_raw(vec![n, self.num_heads()], self.head_rows(x.data(), n)))
    }

    pub(crate) fn embed_rows(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut e = self.trunk.forward_rows(x, n);
        if self.normalize {
            normalize_rows(&mut e, self.embed_dim());
        }
        e
    }

    pub(crate) fn head_rows(&self, x: &[f64], n: usize) -> Vec<f64> {
        let e = self.embed_rows(x, n);
        let k = self.heads.len();
        let mut out = vec![0.0; n * k];
        for (c, h) in self.heads.iter().enumerate() {
            for (i, v) in h.forward_rows(&e, n).into_iter().enumerate() {
                out[i * k + c] = v;
            }
        }
        out
    }

    pub(crate) fn tape(&self, x: Vec<f64>, n: usize) -> BranchedTape {
        let embed = self.trunk_tape(x, n);
        let heads = self
            .heads
            .iter()
            .map(|h| h.tape(embed.output().to_vec(), n))
            .collect();
        BranchedTape { embed, heads }
    }

    pub(crate) fn trunk_tape(&self, x: Vec<f64>, n: usize) -> EmbedTape {
        let trunk = self.trunk.tape(x, n);
        if !self.normalize {
            return EmbedTape {
                trunk,
                embed: None,
                norms: Vec::new(),
            };
        }
        let mut e = trunk.output().to_vec();
        let norms = normalize_rows(&mut e, self.embed_dim());
        EmbedTape {
            trunk,
            embed: Some(e),
            norms,
        }
    }

    /// Accumulates gradients given `∂loss/∂embedding` (`[n × embed]`); heads get nothing.
    pub(crate) fn backward_embed_rows(
        &self,
        tape: &EmbedTape,
        mut d_embed: Vec<f64>,
        grads: &mut GradientBuffer,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        if self.normalize {
            // ∂ê/∂e = (I − ê êᵀ) / ‖e‖
            let w = self.embed_dim();
            let e_hat = tape.output();
            for ((d, u), norm) in d_embed.chunks_exact_mut(w).zip(e_hat.chunks_exact(w)).zip(&tape.norms) {
                if *norm < MIN_NORM {
                    d.fill(0.0);
                    continue;
                }
                let proj: f64 = d.iter().zip(u).map(|(a, b)| a * b).sum();
                for (dv, uv) in d.iter_mut().zip(u) {
                    *dv = (*dv - uv * proj) / norm;
                }
            }
        }
        let nt = self.trunk.layers.len();
        self.trunk
            .backward_rows(&tape.trunk, d_embed, &mut grads.layers[..nt], want_input)
    }

    /// Accumulates gradients given `∂loss/∂head outputs` (`[n × K]`).
    /// Heads whose column is entirely zero are skipped.
    pub(crate) fn backward_head_rows(
        &self,
        tape: &BranchedTape,
        d_heads: &[f64],
        grads: &mut GradientBuffer,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let n = tape.embed.n();
        let k = self.heads.len();
        debug_assert_eq!(d_heads.len(), n * k);
        let e = self.embed_dim();
        let nt = self.trunk.layers.len();
        let mut d_embed = vec![0.0; n * e];
        let mut offset = nt;
        for (c, head) in self.heads.iter().enumerate() {
            let nl = head.layers.len();
            let col: Vec<f64> = (0..n).map(|i| d_heads[i * k + c]).collect();
            if col.iter().any(|&v| v != 0.0) {
                let de = head
                    .backward_rows(&tape.heads[c], col, &mut grads.layers[offset..offset + nl], true)
                    .expect("input gradient requested");
                for (acc, v) in d_embed.iter_mut().zip(de) {
                    *acc += v;
                }
            }
            offset += nl;
        }
        self.backward_embed_rows(&tape.embed, d_embed, grads, want_input)
    }

    /// Gradients for one input point given `∂loss/∂(head c)` for every head.
    pub fn backward(&self, x: &Tensor, output_grads: &[f64]) -> Result<GradientBuffer> {
        let mut grads = GradientBuffer::zeros_for(self);
        self.backward_into(&mut grads, x, output_grads)?;
        Ok(grads)
    }

    /// Like [`BranchedNet::backward`] but adds into an existing buffer, so repeated
    /// calls over a batch sum per-example gradients in call order.
    pub fn backward_into(&self, grads: &mut GradientBuffer, x: &Tensor, output_grads: &[f64]) -> Result<()> {
        let n = check_input(x, self.input_dim(), "branched net")?;
        if n != 1 {
            return shape_err(format!("backward takes one point, got {n} rows"));
        }
        if output_grads.len() != self.num_heads() {
            return shape_err(format!(
                "{} output gradients for {} heads",
                output_grads.len(),
                self.num_heads()
            ));
        }
        if !grads.is_congruent(&GradientBuffer::zeros_for(self)) {
            return shape_err("gradient buffer does not match network");
        }
        let tape = self.tape(x.data().to_vec(), 1);
        self.backward_head_rows(&tape, output_grads, grads, false);
        Ok(())
    }
}

impl Network for BranchedNet {
    fn layers(&self) -> Vec<&DenseLayer> {
        self.trunk
            .layers
            .iter()
            .chain(self.heads.iter().flat_map(|h| h.layers.iter()))
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.trunk
            .layers
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| h.layers.iter_mut()))
            .collect()
    }

    fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.trunk.layers.len())
            .map(|i| format!("trunk.{i}"))
            .collect();
        for (c, h) in self.heads.iter().enumerate() {
            names.extend((0..h.layers.len()).map(|i| format!("head{c}.{i}")));
        }
        names
    }
}

/// Validates that `x` is `[in]` or `[n × in]` and returns `n`.
fn check_input(x: &Tensor, in_dim: usize, what: &str) -> Result<usize> {
    if x.shape().len() > 2 || x.cols() != in_dim || x.is_empty() {
        return shape_err(format!("{what} expects width {in_dim}, got shape {:?}", x.shape()));
    }
    Ok(x.rows())
}

fn reshape_like(x: &Tensor, out: Vec<f64>, width: usize) -> Tensor {
    if x.shape().len() == 1 {
        Tensor::from_raw(vec![width], out)
    } else {
        Tensor::from_raw(vec![x.rows(), width], out)
    }
}
