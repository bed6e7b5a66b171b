//! Dense feed-forward networks with hand-derived backpropagation.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Batched
//! inputs are flat row-major buffers of shape `(batch, in_dim)`.
//!
//! There is no autodiff: a [`ForwardTrace`] keeps every layer's
//! post-activation output, which is all the supported activations need to
//! recover their derivative.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {block}")]
    NonFinite { block: String },
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::InvalidShape("layer dims must be > 0".into()));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(NnError::InvalidShape(format!(
                "{out_dim}x{in_dim} layer given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weight,
            bias,
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::InvalidShape("layer dims must be > 0".into()));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::new(in_dim, out_dim, activation, weight, bias)
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

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward_rows(&self, input: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(batch * self.out_dim);
        for row in input.chunks_exact(self.in_dim).take(batch) {
            for (w_row, b) in self.weight.chunks_exact(self.in_dim).zip(&self.bias) {
                out.push(self.activation.apply(b + dot(w_row, row)));
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
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
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradient of a scalar with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients shaped like an [`Mlp`], plus the gradient with
/// respect to the (batched) input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &Mlp) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: Vec::new(),
        }
    }

    /// Parameter blocks in the same order as [`Mlp::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= factor);
        }
        self.input.iter_mut().for_each(|g| *g *= factor);
    }

    /// Adds `other`'s parameter gradients into `self`. Input gradients are untouched.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(1.0, src, dst);
        }
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final network output, `(batch, output_dim)` row-major.
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

/// Multi-layer perceptron: a chain of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::InvalidShape("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::DimensionMismatch {
                    layer: k + 1,
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        let mlp = Self { layers };
        mlp.check_finite()?;
        Ok(mlp)
    }

    /// Builds a freshly initialized network. `sizes` lists every width from
    /// input to output; hidden layers use `hidden`, the last uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::InvalidShape(
                "need at least input and output sizes".into(),
            ));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { hidden };
                Dense::init(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter blocks ordered `[w0, b0, w1, b1, ...]`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Human-readable name of block `index` in [`Mlp::blocks`] order.
    pub fn block_name(index: usize) -> String {
        let kind = if index % 2 == 0 { "weight" } else { "bias" };
        format!("layer {} {}", index / 2, kind)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, block) in self.blocks().into_iter().enumerate() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite {
                    block: Self::block_name(i),
                });
            }
        }
        Ok(())
    }

    /// Shape signature used to check that two networks are interchangeable.
    pub fn shape_signature(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim, l.out_dim, l.activation))
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardTrace> {
        if input.len() != batch * self.input_dim() {
            return Err(NnError::DimensionMismatch {
                layer: 0,
                expected: batch * self.input_dim(),
                got: input.len(),
            });
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            let src = if k == 0 { input } else { &outputs[k - 1] };
            layer.forward_rows(src, batch, &mut out);
            outputs.push(out);
        }
        Ok(ForwardTrace {
            batch,
            input: input.to_vec(),
            outputs,
        })
    }

    /// Gradients of `<upstream_grad, output>` for a single input.
    pub fn backward(&self, input: &[f64], upstream_grad: &[f64]) -> Result<GradientBundle> {
        let trace = self.forward_batch(input, 1)?;
        self.backward_batch(&trace, upstream_grad)
    }

    /// Gradients of `sum_n <upstream[n], output[n]>`: parameter gradients are
    /// summed over the batch, the input gradient is per row.
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        upstream_grad: &[f64],
    ) -> Result<GradientBundle> {
        let batch = trace.batch;
        if upstream_grad.len() != batch * self.output_dim() {
            return Err(NnError::DimensionMismatch {
                layer: self.layers.len() - 1,
                expected: batch * self.output_dim(),
                got: upstream_grad.len(),
            });
        }
        let mut grads = GradientBundle::zeros_like(self);
        let mut delta = upstream_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let out = &trace.outputs[k];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let src = if k == 0 {
                &trace.input
            } else {
                &trace.outputs[k - 1]
            };
            let g = &mut grads.layers[k];
            let mut next = vec![0.0; batch * layer.in_dim];
            for n in 0..batch {
                let x = &src[n * layer.in_dim..(n + 1) * layer.in_dim];
                let dx = &mut next[n * layer.in_dim..(n + 1) * layer.in_dim];
                let dz = &delta[n * layer.out_dim..(n + 1) * layer.out_dim];
                for (o, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let w_row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    axpy(d, x, &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim]);
                    axpy(d, w_row, dx);
                }
            }
            delta = next;
        }
        grads.input = delta;
        Ok(grads)
    }
}

/// Central-difference estimate of `df/dparams` for every parameter.
pub fn finite_diff_grad<F>(mut f: F, params: &Mlp, step: f64) -> GradientBundle
where
    F: FnMut(&Mlp) -> f64,
{
    let mut probe = params.clone();
    let mut grads = GradientBundle::zeros_like(params);
    let n_blocks = params.blocks().len();
    for b in 0..n_blocks {
        let len = params.blocks()[b].len();
        for i in 0..len {
            let orig = params.blocks()[b][i];
            probe.blocks_mut()[b][i] = orig + step;
            let plus = f(&probe);
            probe.blocks_mut()[b][i] = orig - step;
            let minus = f(&probe);
            probe.blocks_mut()[b][i] = orig;
            grads.blocks_mut()[b][i] = (plus - minus) / (2.0 * step);
        }
    }
    grads
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        Self::for_block_lens(&lens, config)
    }

    pub fn for_block_lens(lens: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &GradientBundle) -> Result<()> {
        let g = grads.blocks();
        self.step_blocks(params.blocks_mut(), &g, Mlp::block_name)
    }

    /// One bias-corrected Adam descent step over matching blocks. Nothing is
    /// modified if any gradient is non-finite or any shape disagrees.
    pub fn step_blocks(
        &mut self,
        mut params: Vec<&mut [f64]>,
        grads: &[&[f64]],
        block_name: impl Fn(usize) -> String,
    ) -> Result<()> {
        if self.config.lr <= 0.0 {
            return Err(NnError::InvalidShape("Adam learning rate must be > 0".into()));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::InvalidShape(format!(
                "Adam state has {} blocks, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(NnError::DimensionMismatch {
                    layer: i / 2,
                    expected: self.m[i].len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite {
                    block: block_name(i),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pj, &gj)) in p.iter_mut().zip(grads[i]).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
