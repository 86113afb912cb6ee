//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Every learned object in the crate (policy, critics, value function and the
//! dynamics ensemble) is a [`DenseNet`] or a [`GaussianHead`] wrapped around
//! one. Batches are row-major `ndarray` matrices: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MPDN";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` by the activation derivative, expressed through the
    /// activated output `y`.
    fn chain(self, delta: &mut Array2<f64>, y: &Array2<f64>) {
        match self {
            Activation::Tanh => Zip::from(delta).and(y).for_each(|d, &y| *d *= 1.0 - y * y),
            Activation::Relu => Zip::from(delta).and(y).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Anything that exposes its parameters as a list of flat blocks.
///
/// Gradients and optimizer state mirror the same block structure.
pub trait Parameterized {
    fn param_blocks(&self) -> Vec<&[f64]>;
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_blocks().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for block in self.param_blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn block_shapes(&self) -> Vec<usize> {
        self.param_blocks().iter().map(|b| b.len()).collect()
    }
}

/// Per-parameter derivatives, block-congruent with their owner.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<P: Parameterized + ?Sized>(owner: &P) -> Self {
        Gradients {
            blocks: owner.param_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.blocks.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        self.check_congruent(&other.blocks.iter().map(|b| b.len()).collect::<Vec<_>>())?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    fn check_congruent(&self, shapes: &[usize]) -> Result<()> {
        let mine: Vec<usize> = self.blocks.iter().map(|b| b.len()).collect();
        if mine != shapes {
            return Err(Error::contract(format!(
                "gradient blocks {mine:?} do not match parameter blocks {shapes:?}"
            )));
        }
        Ok(())
    }
}

/// Intermediate activations recorded by a batched forward pass.
///
/// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network with `hidden` activations on every layer but the last,
    /// which uses `output`. Weights and biases are drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..=bound));
                let activation = if i + 1 == n { output } else { hidden };
                Layer {
                    weights,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::contract(format!("layer {i}: bias length != weight rows")));
            }
            if i > 0 && layers[i - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::contract(format!("layer {i}: input width mismatch")));
            }
        }
        let mut net = DenseNet { layers };
        // Keeps every parameter block contiguous.
        for l in &mut net.layers {
            if !l.weights.is_standard_layout() {
                l.weights = l.weights.as_standard_layout().to_owned();
            }
        }
        if !net.flat_params().iter().all(|p| p.is_finite()) {
            return Err(Error::contract("non-finite parameter"));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.nrows()).unwrap_or(0)
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layer_sizes() == other.layer_sizes()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.activation == b.activation)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.forward_batch(x)?.iter().copied().collect())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = Self::affine(layer, &a);
        }
        Ok(a)
    }

    pub fn forward_tape(&self, x: Array2<f64>) -> Result<Tape> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for layer in &self.layers {
            let next = Self::affine(layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Tape { activations })
    }

    /// Reverse pass over a recorded batch. `output_grad` holds dL/d(output)
    /// per row; parameter gradients are summed over the batch. Also returns
    /// dL/d(input) per row.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = tape.output();
        if output_grad.dim() != out.dim() || tape.activations.len() != self.layers.len() + 1 {
            return Err(Error::contract(format!(
                "output gradient shape {:?} does not match output {:?}",
                output_grad.dim(),
                out.dim()
            )));
        }
        let mut blocks = vec![Vec::new(); 2 * self.layers.len()];
        let mut delta = output_grad.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.chain(&mut delta, &tape.activations[l + 1]);
            let dw = delta.t().dot(&tape.activations[l]);
            let db = delta.sum_axis(Axis(0));
            // Logical (row-major) order: `dot` may return column-major storage.
            blocks[2 * l] = dw.iter().copied().collect();
            blocks[2 * l + 1] = db.to_vec();
            delta = delta.dot(&layer.weights);
        }
        Ok((Gradients { blocks }, delta))
    }

    /// Single-sample reverse pass.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::contract(e.to_string()))?;
        let tape = self.forward_tape(x)?;
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.backward_tape(&tape, g)?.0)
    }

    fn affine(layer: &Layer, a: &Array2<f64>) -> Array2<f64> {
        let mut z = a.dot(&layer.weights.t());
        z += &layer.bias;
        layer.activation.apply(&mut z);
        z
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::contract(format!(
                "input width {width} != network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Flat little-endian checkpoint: magic, version, layer sizes, activation
    /// tags, then every layer's row-major weights followed by its bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(16 + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend(self.layers.iter().map(|l| l.activation.tag()));
        for p in self.flat_params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = cur.u32()? as usize;
        if n == 0 {
            return Err(Error::Checkpoint("zero layers".into()));
        }
        let sizes = (0..=n).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let acts = cur
            .take(n)?
            .iter()
            .map(|&t| Activation::from_tag(t).ok_or_else(|| Error::Checkpoint(format!("bad activation tag {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = cur.f64s(sizes[i] * sizes[i + 1])?;
            let b = cur.f64s(sizes[i + 1])?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((sizes[i + 1], sizes[i]), w)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
                bias: Array1::from(b),
                activation: acts[i],
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        DenseNet::from_layers(layers)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Parameterized for DenseNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }
}

/// Adam moment buffers for one parameter owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: Parameterized + ?Sized>(owner: &P) -> Self {
        Self::with_betas(owner, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameterized + ?Sized>(owner: &P, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = owner.param_blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One optimizer step: Adam when moment buffers are supplied, plain gradient
/// descent otherwise.
pub fn sgd_step<P: Parameterized + ?Sized>(
    params: &mut P,
    grads: &Gradients,
    lr: f64,
    adam: Option<&mut Adam>,
) -> Result<()> {
    grads.check_congruent(&params.block_shapes())?;
    if !grads.is_finite() {
        return Err(Error::divergence("optimizer", "non-finite gradient entry"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
    }
    match adam {
        None => {
            for (block, g) in params.param_blocks_mut().into_iter().zip(&grads.blocks) {
                block.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Some(state) => {
            if state.first.iter().map(|b| b.len()).collect::<Vec<_>>() != params.block_shapes() {
                return Err(Error::contract("adam state does not match parameters"));
            }
            state.steps += 1;
            let t = state.steps as i32;
            let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for (((block, g), m), v) in params
                .param_blocks_mut()
                .into_iter()
                .zip(&grads.blocks)
                .zip(&mut state.first)
                .zip(&mut state.second)
            {
                for i in 0..block.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    block[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// `target ← tau·source + (1 − tau)·target`, parameter-wise.
pub fn polyak_update<P: Parameterized + ?Sized>(target: &mut P, source: &P, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::contract(format!("tau must lie in (0, 1], got {tau}")));
    }
    if target.block_shapes() != source.block_shapes() {
        return Err(Error::contract("polyak update between incongruent architectures"));
    }
    for (t, s) in target.param_blocks_mut().into_iter().zip(source.param_blocks()) {
        t.iter_mut().zip(s).for_each(|(t, s)| *t = tau * s + (1.0 - tau) * *t);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogStd {
    /// The network emits `[mean, log_std]` per row.
    StateDependent,
    /// One learned log-std per output dimension, shared across inputs.
    Parameter(Array1<f64>),
}

/// Diagonal Gaussian whose mean (and optionally log-std) come from a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub net: DenseNet,
    pub dim: usize,
    pub log_std: LogStd,
    pub log_std_bounds: (f64, f64),
}

/// Batched head evaluation, kept around for the reverse pass.
#[derive(Clone, Debug)]
pub struct GaussianOutput {
    pub tape: Tape,
    pub mean: Array2<f64>,
    /// Already clamped into the head's bounds.
    pub log_std: Array2<f64>,
    /// 1.0 where the raw log-std was inside the bounds, 0.0 where clamped.
    unclamped: Array2<f64>,
}

impl GaussianOutput {
    pub fn std(&self) -> Array2<f64> {
        self.log_std.mapv(f64::exp)
    }
}

pub const DEFAULT_LOG_STD_BOUNDS: (f64, f64) = (-20.0, 2.0);

impl GaussianHead {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        dim: usize,
        hidden_activation: Activation,
        state_dependent: bool,
        log_std_bounds: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if log_std_bounds.0 >= log_std_bounds.1 {
            return Err(Error::contract("log_std_bounds must satisfy min < max"));
        }
        let out = if state_dependent { 2 * dim } else { dim };
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        let net = DenseNet::new(&sizes, hidden_activation, Activation::Identity, rng)?;
        let log_std = if state_dependent {
            LogStd::StateDependent
        } else {
            LogStd::Parameter(Array1::from_elem(dim, 0.0_f64.clamp(log_std_bounds.0, log_std_bounds.1)))
        };
        Ok(GaussianHead {
            net,
            dim,
            log_std,
            log_std_bounds,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn forward(&self, x: Array2<f64>) -> Result<GaussianOutput> {
        let tape = self.net.forward_tape(x)?;
        let out = tape.output();
        let rows = out.nrows();
        let (lo, hi) = self.log_std_bounds;
        let mean = out.slice(ndarray::s![.., 0..self.dim]).to_owned();
        let raw = match &self.log_std {
            LogStd::StateDependent => out.slice(ndarray::s![.., self.dim..2 * self.dim]).to_owned(),
            LogStd::Parameter(p) => p.broadcast((rows, self.dim)).unwrap().to_owned(),
        };
        let unclamped = raw.mapv(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
        let log_std = raw.mapv(|v| v.clamp(lo, hi));
        Ok(GaussianOutput {
            tape,
            mean,
            log_std,
            unclamped,
        })
    }

    /// Reverse pass from gradients w.r.t. the emitted mean and (clamped)
    /// log-std. Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        out: &GaussianOutput,
        d_mean: ArrayView2<f64>,
        d_log_std: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if d_mean.dim() != out.mean.dim() || d_log_std.dim() != out.log_std.dim() {
            return Err(Error::contract("gaussian head gradient shape mismatch"));
        }
        let d_raw = &d_log_std * &out.unclamped;
        let rows = out.mean.nrows();
        let mut d_net = Array2::zeros((rows, self.net.output_dim()));
        d_net.slice_mut(ndarray::s![.., 0..self.dim]).assign(&d_mean);
        let mut extra = None;
        match &self.log_std {
            LogStd::StateDependent => {
                d_net.slice_mut(ndarray::s![.., self.dim..2 * self.dim]).assign(&d_raw);
            }
            LogStd::Parameter(_) => extra = Some(d_raw.sum_axis(Axis(0)).to_vec()),
        }
        let (mut grads, d_input) = self.net.backward_tape(&out.tape, d_net.view())?;
        if let Some(e) = extra {
            grads.blocks.push(e);
        }
        Ok((grads, d_input))
    }

    /// Reparameterized draw `mean + std·ε` for a single input.
    pub fn sample<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::contract(e.to_string()))?;
        let out = self.forward(x)?;
        let mean = out.mean.row(0).to_vec();
        let std: Vec<f64> = out.log_std.row(0).iter().map(|l| l.exp()).collect();
        let sample = mean
            .iter()
            .zip(&std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Ok((sample, mean, std))
    }
}

impl Parameterized for GaussianHead {
    fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = self.net.param_blocks();
        if let LogStd::Parameter(p) = &self.log_std {
            blocks.push(p.as_slice().expect("contiguous"));
        }
        blocks
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = self.net.param_blocks_mut();
        if let LogStd::Parameter(p) = &mut self.log_std {
            blocks.push(p.as_slice_mut().expect("contiguous"));
        }
        blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, ShapeBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: Array2<f64>, b: Array1<f64>) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            weights: w,
            bias: b,
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_net_passes_input_through() {
        let eye = Array2::eye(2);
        let net = DenseNet::from_layers(vec![
            Layer {
                weights: eye.clone(),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
            Layer {
                weights: eye,
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn single_affine_layer() {
        let net = linear(array![[2.0]], array![1.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn two_layer_tanh_on_zero_input_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = DenseNet::new(&[3, 4, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let got = net.forward(&[0.0; 3]).unwrap();
        let l = net.layers();
        let h: Vec<f64> = l[0].bias.iter().map(|b| b.tanh()).collect();
        for o in 0..2 {
            let mut z = l[1].bias[o];
            for (j, hj) in h.iter().enumerate() {
                z += l[1].weights[[o, j]] * hj;
            }
            assert!((got[o] - z.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let net = linear(array![[2.0]], array![1.0]);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Contract(_))));
        assert!(matches!(net.backward(&[1.0], &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(DenseNet::new(&[3], Activation::Tanh, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let net = linear(array![[0.5]], array![0.0]);
        let g = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.blocks[0], vec![3.0]);
        assert_eq!(g.blocks[1], vec![1.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let g = net.backward(&[0.3, -1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_ignore_input_memory_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let c = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.7);
        let mut f = Array2::zeros((5, 3).f());
        f.assign(&c);
        let g_out = Array2::from_shape_fn((5, 2), |(i, j)| 0.1 * (i + 2 * j) as f64 - 0.2);
        let (gc, dc) = net.backward_tape(&net.forward_tape(c).unwrap(), g_out.view()).unwrap();
        let (gf, df) = net.backward_tape(&net.forward_tape(f).unwrap(), g_out.view()).unwrap();
        assert_eq!(gc, gf);
        assert_eq!(dc, df);
    }

    #[test]
    fn plain_descent_step() {
        let mut net = linear(array![[1.0]], array![0.0]);
        let g = Gradients {
            blocks: vec![vec![2.0], vec![0.0]],
        };
        sgd_step(&mut net, &g, 0.1, None).unwrap();
        assert!((net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.flat_params();
        let g = Gradients::zeros_like(&net);
        let mut adam = Adam::new(&net);
        sgd_step(&mut net, &g, 0.1, Some(&mut adam)).unwrap();
        sgd_step(&mut net, &g, 0.1, None).unwrap();
        assert_eq!(before, net.flat_params());
    }

    #[test]
    fn adam_matches_hand_rolled_recurrence() {
        let mut net = linear(array![[1.0]], array![0.0]);
        let mut adam = Adam::new(&net);
        let (g, lr) = (0.7, 0.01);
        let grads = Gradients {
            blocks: vec![vec![g], vec![0.0]],
        };
        for _ in 0..3 {
            sgd_step(&mut net, &grads, lr, Some(&mut adam)).unwrap();
        }
        // Oracle: the textbook recurrence written out step by step.
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((net.layers()[0].weights[[0, 0]] - w).abs() < 1e-15);
        // Constant gradient: each bias-corrected step has magnitude ≈ lr.
        assert!((w - (1.0 - 3.0 * lr)).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut net = linear(array![[1.0]], array![0.0]);
        let g = Gradients {
            blocks: vec![vec![f64::NAN], vec![0.0]],
        };
        assert!(matches!(sgd_step(&mut net, &g, 0.1, None), Err(Error::Divergence { .. })));
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let source = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut target = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        polyak_update(&mut target, &source, 1.0).unwrap();
        assert_eq!(target, source);

        let mut t = linear(array![[0.0]], array![0.0]);
        let s = linear(array![[1.0]], array![1.0]);
        polyak_update(&mut t, &s, 0.005).unwrap();
        assert_eq!(t.flat_params(), vec![0.005, 0.005]);
    }

    #[test]
    fn polyak_gap_decays_geometrically() {
        let mut t = linear(array![[0.0]], array![0.0]);
        let s = linear(array![[1.0]], array![1.0]);
        let tau = 0.1;
        for k in 1..=50 {
            polyak_update(&mut t, &s, tau).unwrap();
            let gap = 1.0 - t.flat_params()[0];
            assert!((gap - (1.0 - tau).powi(k)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn polyak_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut b = DenseNet::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(polyak_update(&mut b, &a, 0.5).is_err());
        let mut c = a.clone();
        assert!(polyak_update(&mut c, &a, 0.0).is_err());
    }

    #[test]
    fn binary_checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(&[4, 8, 8, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let bytes = net.to_bytes();
        let back = DenseNet::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, net);
        assert!(DenseNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn json_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = DenseNet::new(&[2, 5, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn same_seed_same_network() {
        let a = DenseNet::new(&[3, 16, 2], Activation::Tanh, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = DenseNet::new(&[3, 16, 2], Activation::Tanh, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.forward(&[0.1, 0.2, 0.3]).unwrap(), b.forward(&[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn gaussian_head_clamps_log_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut head = GaussianHead::new(2, &[8], 2, Activation::Tanh, true, (-1.0, 0.5), &mut rng).unwrap();
        // Blow up the output layer so raw log-stds leave the bounds.
        for p in head.net.param_blocks_mut().into_iter().skip(2) {
            p.iter_mut().for_each(|v| *v *= 100.0);
        }
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i as f64 - 25.0) * (j as f64 + 1.0));
        let out = head.forward(x).unwrap();
        for s in out.std() {
            assert!(s >= (-1.0f64).exp() && s <= 0.5f64.exp());
        }
    }

    #[test]
    fn parameter_log_std_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let head = GaussianHead::new(2, &[4], 1, Activation::Tanh, false, DEFAULT_LOG_STD_BOUNDS, &mut rng).unwrap();
        let x = array![[0.3, -0.2], [1.0, 0.5]];
        // loss = sum(mean) + 2·sum(log_std)
        let loss = |h: &GaussianHead| {
            let o = h.forward(x.clone()).unwrap();
            o.mean.sum() + 2.0 * o.log_std.sum()
        };
        let out = head.forward(x.clone()).unwrap();
        let ones = Array2::ones((2, 1));
        let (g, _) = head.backward(&out, ones.view(), (&ones * 2.0).view()).unwrap();
        let flat = g.flat();
        let params = head.flat_params();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += 1e-6;
            let mut hp = head.clone();
            hp.set_flat_params(&p).unwrap();
            p[i] -= 2e-6;
            let mut hm = head.clone();
            hm.set_flat_params(&p).unwrap();
            let fd = (loss(&hp) - loss(&hm)) / 2e-6;
            assert!((fd - flat[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", flat[i]);
        }
    }
}
