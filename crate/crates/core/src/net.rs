//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Everything is plain `f64` on row-major [`Matrix`] storage: the networks
//! here are a few thousand parameters, and a hand-rolled backward pass keeps
//! the whole training stack dependency-free and bit-reproducible. `forward`
//! records a [`Tape`] (layer inputs and pre-activations) that `backward`
//! consumes to produce parameter gradients and, when needed, gradients with
//! respect to the network input — the latter is what lets a policy network
//! be trained through a frozen critic.
//!
//! Checkpoints: [`Mlp::save`] writes the magic bytes `MEETNET1`, a
//! little-endian `u32` layer count `L`, `L + 1` little-endian `u32` layer
//! widths, then for each layer its row-major `f64` weights followed by its
//! `f64` biases. Activations are not stored; [`Mlp::load`] takes them from
//! the caller and checks the count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MEETNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. The relu kink at zero takes the
    /// left subgradient, i.e. zero.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// Concatenates two matrices with equal row counts along the column axis.
pub fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "hstack row counts differ: {} vs {}",
            a.rows(),
            b.rows()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let dst = out.row_mut(r);
        dst[..a.cols()].copy_from_slice(a.row(r));
        dst[a.cols()..].copy_from_slice(b.row(r));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `out_dim x in_dim`, one row per output unit.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `x W^T + b` for a batch of row vectors.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (o, slot) in or.iter_mut().enumerate() {
                let mut acc = self.bias[o];
                for (w, xv) in self.weight.row(o).iter().zip(xr) {
                    acc += w * xv;
                }
                *slot = acc;
            }
        }
        out
    }
}

struct TapeStep {
    input: Matrix,
    pre: Matrix,
}

/// Intermediate values recorded by [`Mlp::forward`], consumed by the
/// backward passes. A tape is only meaningful for the network and input
/// batch it was produced from.
pub struct Tape {
    steps: Vec<TapeStep>,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients (or parameter deltas — same shape either way).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGradients {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { layers }
    }

    pub fn scale(&mut self, c: f64) {
        for lg in &mut self.layers {
            for v in lg.weight.data_mut() {
                *v *= c;
            }
            for v in &mut lg.bias {
                *v *= c;
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, other: &Gradients, c: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weight.rows() != b.weight.rows()
                || a.weight.cols() != b.weight.cols()
                || a.bias.len() != b.bias.len()
            {
                return Err(Error::ShapeMismatch("gradient layer shapes differ".into()));
            }
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += c * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += c * y;
            }
        }
        Ok(())
    }
}

/// A multi-layer perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    seed: u64,
}

impl Mlp {
    /// Builds a network with the given layer widths, one activation per
    /// layer. Weights and biases are drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`; the same `(dims, seed)` pair
    /// always yields bitwise-identical parameters.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least an input and an output width".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} layers need {} activations, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(activations.len());
        for (idx, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[idx], dims[idx + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in weight.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Layer { weight, bias, activation: act });
        }
        Ok(Self { layers, seed })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    /// Seed the parameters were drawn from; zero for loaded checkpoints.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access, used by tests that pin exact weights.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        if input.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(())
    }

    /// Forward pass that records a tape for a later backward pass.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(input)?;
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let pre = layer.affine(&x);
            let mut out = pre.clone();
            out.map_in_place(|z| layer.activation.apply(z));
            steps.push(TapeStep { input: x, pre });
            x = out;
        }
        Ok((x, Tape { steps, batch: input.rows() }))
    }

    /// Forward pass without bookkeeping.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let mut pre = layer.affine(&x);
            pre.map_in_place(|z| layer.activation.apply(z));
            x = pre;
        }
        Ok(x)
    }

    fn check_tape(&self, tape: &Tape, out_grad: &Matrix) -> Result<()> {
        if tape.steps.len() != self.layers.len() {
            return Err(Error::InvalidTape(format!(
                "tape has {} steps, network has {} layers",
                tape.steps.len(),
                self.layers.len()
            )));
        }
        for (layer, step) in self.layers.iter().zip(&tape.steps) {
            if step.input.cols() != layer.in_dim()
                || step.pre.cols() != layer.out_dim()
                || step.input.rows() != tape.batch
                || step.pre.rows() != tape.batch
            {
                return Err(Error::InvalidTape(
                    "tape shapes do not match this network".into(),
                ));
            }
        }
        if out_grad.rows() != tape.batch || out_grad.cols() != self.out_dim() {
            return Err(Error::InvalidTape(format!(
                "output gradient is {}x{}, expected {}x{}",
                out_grad.rows(),
                out_grad.cols(),
                tape.batch,
                self.out_dim()
            )));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        out_grad: &Matrix,
        mut grads: Option<&mut Gradients>,
    ) -> Result<Matrix> {
        self.check_tape(tape, out_grad)?;
        let mut upstream = out_grad.clone();
        for (idx, (layer, step)) in self.layers.iter().zip(&tape.steps).enumerate().rev() {
            // dL/dz = dL/dy * act'(z), computed in place on the upstream copy.
            let mut dz = upstream;
            for r in 0..dz.rows() {
                let pre = step.pre.row(r);
                for (g, &z) in dz.row_mut(r).iter_mut().zip(pre) {
                    *g *= layer.activation.derivative(z);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                let lg = &mut g.layers[idx];
                for r in 0..dz.rows() {
                    let xr = step.input.row(r);
                    for (o, &gz) in dz.row(r).iter().enumerate() {
                        lg.bias[o] += gz;
                        for (w, &xv) in lg.weight.row_mut(o).iter_mut().zip(xr) {
                            *w += gz * xv;
                        }
                    }
                }
            }
            let mut dx = Matrix::zeros(dz.rows(), layer.in_dim());
            for r in 0..dz.rows() {
                let dxr = dx.row_mut(r);
                for (o, &gz) in dz.row(r).iter().enumerate() {
                    for (d, &w) in dxr.iter_mut().zip(layer.weight.row(o)) {
                        *d += gz * w;
                    }
                }
            }
            upstream = dx;
        }
        Ok(upstream)
    }

    /// Reverse pass: given `dL/d(output)` for the batch the tape was
    /// recorded on, returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, tape: &Tape, out_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_impl(tape, out_grad, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Reverse pass that only propagates to the input, skipping parameter
    /// gradients. Used when differentiating through a frozen network.
    pub fn backward_input_only(&self, tape: &Tape, out_grad: &Matrix) -> Result<Matrix> {
        self.backward_impl(tape, out_grad, None)
    }

    /// Adds `eta * delta` to every parameter. `delta` carries whatever sign
    /// the caller wants applied: pass a negated gradient (or a positive
    /// learning-rate ascent direction) as appropriate.
    pub fn apply_update(&mut self, delta: &Gradients, eta: f64) -> Result<()> {
        if delta.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("update layer count differs".into()));
        }
        let mut finite = true;
        for (layer, lg) in self.layers.iter_mut().zip(&delta.layers) {
            if layer.weight.rows() != lg.weight.rows()
                || layer.weight.cols() != lg.weight.cols()
                || layer.bias.len() != lg.bias.len()
            {
                return Err(Error::ShapeMismatch("update layer shapes differ".into()));
            }
            for (w, &d) in layer.weight.data_mut().iter_mut().zip(lg.weight.data()) {
                *w += eta * d;
                finite &= w.is_finite();
            }
            for (b, &d) in layer.bias.iter_mut().zip(&lg.bias) {
                *b += eta * d;
                finite &= b.is_finite();
            }
        }
        if !finite {
            return Err(Error::NonFinite("network parameters after update".into()));
        }
        Ok(())
    }

    /// Soft update toward `online`: `self = tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must be in (0, 1], got {tau}")));
        }
        if self.dims() != online.dims()
            || self
                .layers
                .iter()
                .zip(&online.layers)
                .any(|(a, b)| a.activation != b.activation)
        {
            return Err(Error::ShapeMismatch("polyak targets need identical architectures".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, &ov) in t.weight.data_mut().iter_mut().zip(o.weight.data()) {
                *tv += tau * (ov - *tv);
            }
            for (tv, &ov) in t.bias.iter_mut().zip(&o.bias) {
                *tv += tau * (ov - *tv);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = self.dims();
        let mut buf = Vec::with_capacity(16 + 8 * self.param_count());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for d in &dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weight.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.bias {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Restores a network saved by [`Mlp::save`]. Activations are not part
    /// of the file; the caller passes one per stored layer.
    pub fn load(path: &Path, activations: &[Activation]) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut buf = bytes.as_slice();
        let magic = take(&mut buf, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let layer_count = read_u32(&mut buf)? as usize;
        if layer_count == 0 {
            return Err(Error::Checkpoint("zero layers".into()));
        }
        if activations.len() != layer_count {
            return Err(Error::Checkpoint(format!(
                "file has {} layers, caller supplied {} activations",
                layer_count,
                activations.len()
            )));
        }
        let mut dims = Vec::with_capacity(layer_count + 1);
        for _ in 0..=layer_count {
            let d = read_u32(&mut buf)? as usize;
            if d == 0 {
                return Err(Error::Checkpoint("zero layer width".into()));
            }
            dims.push(d);
        }
        let mut layers = Vec::with_capacity(layer_count);
        for (idx, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[idx], dims[idx + 1]);
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in weight.data_mut() {
                *v = read_f64(&mut buf)?;
            }
            let mut bias = vec![0.0; fan_out];
            for v in &mut bias {
                *v = read_f64(&mut buf)?;
            }
            layers.push(Layer { weight, bias, activation: act });
        }
        if !buf.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len())));
        }
        Ok(Self { layers, seed: 0 })
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn read_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("slice length checked")))
}

fn read_f64(buf: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(buf, 8)?.try_into().expect("slice length checked")))
}

/// Plain SGD with heavy-ball momentum over a network's parameters.
///
/// `step` folds the caller's delta into a velocity (`v = momentum * v +
/// delta`) and applies `lr * v`. With momentum zero this is exactly
/// `apply_update(delta, lr)`. Sign conventions are the caller's, as with
/// [`Mlp::apply_update`].
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    velocity: Gradients,
    momentum: f64,
}

impl SgdMomentum {
    pub fn new(net: &Mlp, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self { velocity: Gradients::zeros_like(net), momentum })
    }

    pub fn step(&mut self, net: &mut Mlp, delta: &Gradients, lr: f64) -> Result<()> {
        self.velocity.scale(self.momentum);
        self.velocity.axpy(delta, 1.0)?;
        net.apply_update(&self.velocity, lr)
    }
}
