//! Dense multilayer perceptron with reverse-mode gradients.
//!
//! Each layer computes `affine → LayerNorm? → activation → dropout?`; the last
//! layer skips the activation. A forward pass records a [`Tape`] holding every
//! intermediate needed to replay the exact gradient, including the dropout
//! masks, so `backward` never re-samples anything.

use serde::{Deserialize, Serialize};

use super::layer_norm::{normalize_row, normalize_row_backward, DEFAULT_EPS};
use super::matrix::{affine_into, matmul_transa_acc, matmul_transb_into, Matrix};
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
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
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

/// One affine layer plus its optional normalization and dropout.
/// `weight` is stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub norm: Option<LayerNormParams>,
    pub dropout_rate: f64,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Regularization applied to every hidden layer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HiddenRegularization {
    pub layer_norm: bool,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Dense>,
    activation: Activation,
    norm_eps: f64,
    /// Bumped on every in-place update so stale tapes can be detected.
    version: u64,
}

impl MlpParams {
    /// Builds a network with layer widths `sizes` (input first, output last).
    /// Weights and biases start uniform in `±1/sqrt(fan_in)`; the output layer
    /// is additionally scaled by `output_scale`.
    pub fn new(
        sizes: &[usize],
        activation: Activation,
        reg: HiddenRegularization,
        output_scale: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let last = l + 1 == n_layers;
                let bound = (1.0 / fan_in as f64).sqrt() * if last { output_scale } else { 1.0 };
                let weight = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Dense {
                    weight: Matrix::from_vec(fan_in, fan_out, weight).expect("sized above"),
                    bias,
                    norm: (!last && reg.layer_norm).then(|| LayerNormParams {
                        gain: vec![1.0; fan_out],
                        shift: vec![0.0; fan_out],
                    }),
                    dropout_rate: if last { 0.0 } else { reg.dropout_rate },
                }
            })
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape("layer bias", layer.outputs(), layer.bias.len()));
            }
            if l > 0 && layers[l - 1].outputs() != layer.inputs() {
                return Err(Error::shape(
                    "layer chaining",
                    layers[l - 1].outputs(),
                    layer.inputs(),
                ));
            }
            if !(0.0..1.0).contains(&layer.dropout_rate) {
                return Err(Error::Config(format!(
                    "layer {l} dropout rate {} outside [0, 1)",
                    layer.dropout_rate
                )));
            }
            if let Some(norm) = &layer.norm {
                if norm.gain.len() != layer.outputs() || norm.shift.len() != layer.outputs() {
                    return Err(Error::shape(
                        "layer norm affine",
                        layer.outputs(),
                        norm.gain.len().max(norm.shift.len()),
                    ));
                }
            }
        }
        Ok(Self {
            layers,
            activation,
            norm_eps: DEFAULT_EPS,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn uses_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout_rate > 0.0)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    /// Parameter tensors in canonical order: per layer weight, bias, then
    /// gain and shift when normalized.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for layer in &self.layers {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
            if let Some(n) = &layer.norm {
                out.push(n.gain.as_slice());
                out.push(n.shift.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
            if let Some(n) = &mut layer.norm {
                out.push(n.gain.as_mut_slice());
                out.push(n.shift.as_mut_slice());
            }
        }
        out
    }

    /// Owning layer of each tensor in [`tensors`](Self::tensors) order.
    pub(crate) fn tensor_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| std::iter::repeat_n(l, if layer.norm.is_some() { 4 } else { 2 }))
            .collect()
    }

    /// Gradient container shaped like these parameters, zero filled.
    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| DenseGrads {
                    weight: Matrix::zeros(l.inputs(), l.outputs()),
                    bias: vec![0.0; l.outputs()],
                    gain: l.norm.as_ref().map_or_else(Vec::new, |_| vec![0.0; l.outputs()]),
                    shift: l.norm.as_ref().map_or_else(Vec::new, |_| vec![0.0; l.outputs()]),
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.norm.is_some() == b.norm.is_some()
            })
    }

    /// Forward pass over a batch (one row per sample).
    pub fn forward(&self, input: &Matrix, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tape> {
        let mut tape = Tape::default();
        self.forward_with(input, mode, rng, &mut tape)?;
        Ok(tape)
    }

    /// Single-sample forward pass.
    pub fn forward_vec(
        &self,
        input: &[f64],
        mode: Mode,
        rng: Option<&mut RngStream>,
    ) -> Result<(Vec<f64>, Tape)> {
        let tape = self.forward(&Matrix::row_vector(input), mode, rng)?;
        Ok((tape.output().row(0).to_vec(), tape))
    }

    /// Evaluation-mode output without keeping the tape around.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input, Mode::Eval, None)?.output)
    }

    /// Forward pass reusing the buffers of an existing tape.
    pub fn forward_with(
        &self,
        input: &Matrix,
        mode: Mode,
        mut rng: Option<&mut RngStream>,
        tape: &mut Tape,
    ) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("mlp forward input", self.input_dim(), input.cols()));
        }
        if input.rows() == 0 {
            return Err(Error::Empty("mlp forward batch"));
        }
        let train_dropout = mode == Mode::Train && self.uses_dropout();
        if train_dropout && rng.is_none() {
            return Err(Error::Config(
                "train-mode forward with dropout requires a random stream".into(),
            ));
        }

        let n_layers = self.layers.len();
        tape.layers.resize_with(n_layers, LayerTape::default);
        tape.version = self.version;
        tape.dims.clear();
        tape.dims.extend(self.layers.iter().map(|l| l.weight.shape()));
        tape.layers[0].input.copy_from(input);

        for l in 0..n_layers {
            let layer = &self.layers[l];
            let last = l + 1 == n_layers;
            let (done, rest) = tape.layers.split_at_mut(l + 1);
            let lt = &mut done[l];
            let batch = lt.input.rows();
            let width = layer.outputs();

            affine_into(&lt.input, &layer.weight, &layer.bias, &mut lt.activated);

            if let Some(norm) = &layer.norm {
                lt.xhat.resize(batch, width);
                lt.inv_std.resize(batch, 0.0);
                for b in 0..batch {
                    lt.inv_std[b] =
                        normalize_row(lt.activated.row(b), self.norm_eps, lt.xhat.row_mut(b));
                    let row = lt.activated.row_mut(b);
                    for (j, (o, &h)) in row.iter_mut().zip(lt.xhat.row(b)).enumerate() {
                        *o = norm.gain[j] * h + norm.shift[j];
                    }
                }
            }

            if !last {
                let act = self.activation;
                for v in lt.activated.as_mut_slice() {
                    *v = act.apply(*v);
                }
            }

            lt.mask.clear();
            if train_dropout && layer.dropout_rate > 0.0 {
                let rate = layer.dropout_rate;
                let keep_scale = 1.0 / (1.0 - rate);
                let r = rng.as_deref_mut().expect("checked above");
                lt.mask.extend(
                    (0..batch * width).map(|_| if r.uniform() < rate { 0.0 } else { keep_scale }),
                );
            }

            let out = if last { &mut tape.output } else { &mut rest[0].input };
            out.copy_from(&lt.activated);
            if !lt.mask.is_empty() {
                for (o, &m) in out.as_mut_slice().iter_mut().zip(&lt.mask) {
                    *o *= m;
                }
            }
            if !out.is_finite() {
                return Err(Error::NonFinite(format!("mlp forward output of layer {l}")));
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients of `sum(upstream ∘ output)`.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
        let mut params = self.zero_grads();
        let mut input = Matrix::zeros(0, 0);
        self.backward_into(tape, upstream, &mut params, Some(&mut input))?;
        Ok(Gradients { params, input })
    }

    /// Like [`backward`](Self::backward) but writes into caller buffers.
    /// `grads` is overwritten; the input gradient is computed only when asked.
    pub fn backward_into(
        &self,
        tape: &Tape,
        upstream: &Matrix,
        grads: &mut MlpGrads,
        mut input_grad: Option<&mut Matrix>,
    ) -> Result<()> {
        self.check_tape(tape)?;
        if upstream.shape() != tape.output.shape() {
            return Err(Error::shape(
                "mlp backward upstream",
                format!("{:?}", tape.output.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            *grads = self.zero_grads();
        }

        let n_layers = self.layers.len();
        let mut delta = upstream.clone();
        let mut scratch = Matrix::zeros(0, 0);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let lt = &tape.layers[l];
            let g = &mut grads.layers[l];
            let batch = delta.rows();

            if !lt.mask.is_empty() {
                for (d, &m) in delta.as_mut_slice().iter_mut().zip(&lt.mask) {
                    *d *= m;
                }
            }
            if l + 1 != n_layers {
                let act = self.activation;
                for (d, &y) in delta.as_mut_slice().iter_mut().zip(lt.activated.as_slice()) {
                    *d *= act.derivative_from_output(y);
                }
            }
            if let Some(norm) = &layer.norm {
                g.gain.fill(0.0);
                g.shift.fill(0.0);
                scratch.resize(batch, layer.outputs());
                let mut dxhat = vec![0.0; layer.outputs()];
                for b in 0..batch {
                    let drow = delta.row(b);
                    let xrow = lt.xhat.row(b);
                    for j in 0..layer.outputs() {
                        g.gain[j] += drow[j] * xrow[j];
                        g.shift[j] += drow[j];
                        dxhat[j] = drow[j] * norm.gain[j];
                    }
                    normalize_row_backward(xrow, lt.inv_std[b], &dxhat, scratch.row_mut(b));
                }
                std::mem::swap(&mut delta, &mut scratch);
            }

            g.bias.fill(0.0);
            for b in 0..batch {
                for (gb, &d) in g.bias.iter_mut().zip(delta.row(b)) {
                    *gb += d;
                }
            }
            g.weight.fill(0.0);
            matmul_transa_acc(&lt.input, &delta, &mut g.weight);

            if l > 0 {
                matmul_transb_into(&delta, &layer.weight, &mut scratch);
                std::mem::swap(&mut delta, &mut scratch);
            } else if let Some(ig) = input_grad.as_deref_mut() {
                matmul_transb_into(&delta, &layer.weight, ig);
            }
        }
        Ok(())
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.dims.len() != self.layers.len()
            || tape
                .dims
                .iter()
                .zip(&self.layers)
                .any(|(d, l)| *d != l.weight.shape())
        {
            return Err(Error::StaleTape("layer shapes differ".into()));
        }
        if tape.version != self.version {
            return Err(Error::StaleTape(format!(
                "recorded at version {}, parameters at version {}",
                tape.version, self.version
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct LayerTape {
    input: Matrix,
    /// Post-activation values before the dropout mask.
    activated: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// Per-element mask (0 or 1/(1−rate)); empty when no dropout was applied.
    mask: Vec<f64>,
}

/// Activation record of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    version: u64,
    dims: Vec<(usize, usize)>,
    layers: Vec<LayerTape>,
    output: Matrix,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Dropout mask applied after hidden layer `layer`, if any.
    pub fn dropout_mask(&self, layer: usize) -> Option<&[f64]> {
        self.layers
            .get(layer)
            .filter(|l| !l.mask.is_empty())
            .map(|l| l.mask.as_slice())
    }

    /// Pre-affine normalized values of layer `layer`, if it is normalized.
    pub fn normalized(&self, layer: usize) -> Option<&Matrix> {
        self.layers
            .get(layer)
            .filter(|l| !l.inv_std.is_empty())
            .map(|l| &l.xhat)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Gradients (or any per-parameter quantity) shaped like an [`MlpParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if !l.gain.is_empty() {
                out.push(l.gain.as_slice());
                out.push(l.shift.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if !l.gain.is_empty() {
                out.push(l.gain.as_mut_slice());
                out.push(l.shift.as_mut_slice());
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= s;
            }
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: MlpGrads,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}
