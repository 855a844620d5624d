//! Dense feed-forward forecaster with hand-derived backpropagation.
//!
//! A forecaster maps a past window of shape `L × K` to a future window of
//! shape `M × K`. Windows are flattened **time-major**: element `(t, k)` of a
//! window sits at flat index `t * K + k`, for both the input and the output.
//! Each layer computes `activation(W x + b)` with `W` stored row-major as
//! `(out, in)`.

use serde::{Deserialize, Serialize};

use crate::linalg::{affine, Matrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Default width of both hidden layers of the forecaster.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::config(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform(inputs: usize, outputs: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Matrix::from_fn(outputs, inputs, |_, _| rng.uniform(-bound, bound));
        let bias = (0..outputs).map(|_| rng.uniform(-bound, bound)).collect();
        Self {
            weight,
            bias,
            activation,
        }
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Weights of a forecaster. Used both for the trained (source) network and
/// for its moving-average (target) copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    input_len: usize,
    output_len: usize,
    features: usize,
    layers: Vec<Layer>,
}

impl ModelParams {
    /// Assembles a network from explicit layers, checking that shapes chain
    /// from `input_len * features` to `output_len * features`.
    pub fn new(input_len: usize, output_len: usize, features: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        if input_len == 0 || output_len == 0 || features == 0 {
            return Err(Error::config("window lengths and feature count must be positive"));
        }
        let mut width = input_len * features;
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs() != width {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.inputs()
                )));
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::config(format!("layer {i} bias length mismatch")));
            }
            width = layer.outputs();
        }
        if width != output_len * features {
            return Err(Error::config(format!(
                "network emits {width} values, expected {}",
                output_len * features
            )));
        }
        let params = Self {
            input_len,
            output_len,
            features,
            layers,
        };
        if !params.is_finite() {
            return Err(Error::config("network parameters must be finite"));
        }
        Ok(params)
    }

    /// The three-layer forecaster: two tanh hidden layers of width `hidden`
    /// and a linear output layer.
    pub fn forecaster(
        input_len: usize,
        output_len: usize,
        features: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        let d_in = input_len * features;
        let d_out = output_len * features;
        let layers = vec![
            Layer::uniform(d_in, hidden, Activation::Tanh, rng),
            Layer::uniform(hidden, hidden, Activation::Tanh, rng),
            Layer::uniform(hidden, d_out, Activation::Identity, rng),
        ];
        Self::new(input_len, output_len, features, layers)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Parameter tensors in storage order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// True when both networks have identical layer shapes and activations.
    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.input_len == other.input_len
            && self.output_len == other.output_len
            && self.features == other.features
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.activation == b.activation)
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        input.ensure_shape(self.input_len, self.features, "forecaster input")
    }

    /// Predicts the `M × K` future window from an `L × K` past window.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let trace = self.trace(input.as_slice());
        let out = trace.activations.last().expect("at least one layer").clone();
        Matrix::from_vec(self.output_len, self.features, out)
    }

    /// Runs the forward pass keeping every layer's activations.
    pub fn trace(&self, input: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let prev = activations.last().expect("seeded above");
            let mut z = vec![0.0; layer.outputs()];
            affine(&layer.weight, &layer.bias, prev, &mut z);
            for v in &mut z {
                *v = layer.activation.apply(*v);
            }
            activations.push(z);
        }
        Trace { activations }
    }

    /// Gradient of `<upstream, forward(input)>` with respect to every
    /// parameter.
    pub fn backward(&self, input: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        self.check_input(input)?;
        upstream.ensure_shape(self.output_len, self.features, "upstream gradient")?;
        if !upstream.is_finite() {
            return Err(Error::Numeric("upstream gradient is not finite".into()));
        }
        let trace = self.trace(input.as_slice());
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_backward(&trace, upstream.as_slice(), &mut grads);
        Ok(grads)
    }

    /// Adds the gradient for one traced sample into `grads`.
    pub fn accumulate_backward(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) {
        let n = self.layers.len();
        debug_assert_eq!(upstream.len(), self.output_len * self.features);
        let mut delta: Vec<f64> = upstream.to_vec();
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let out = &trace.activations[li + 1];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(a);
            }
            let prev = &trace.activations[li];
            let g = &mut grads.layers[li];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                for (gw, &p) in g.weight.row_mut(r).iter_mut().zip(prev) {
                    *gw += d * p;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; layer.inputs()];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (nv, &w) in next.iter_mut().zip(layer.weight.row(r)) {
                        *nv += d * w;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Per-layer activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients shaped exactly like a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.outputs(), l.inputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// All entries concatenated in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = SeededRng::new(3);
        let mut params = ModelParams::forecaster(4, 3, 2, 5, &mut rng).unwrap();
        for t in params.tensors_mut() {
            t.fill(0.0);
        }
        let x = random_matrix(4, 2, &mut rng);
        let y = params.forward(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer::new(Matrix::identity(6), vec![0.0; 6], Activation::Identity).unwrap();
        let params = ModelParams::new(3, 3, 2, vec![layer]).unwrap();
        let x = Matrix::from_vec(3, 2, vec![1.0, -2.0, 3.5, 0.0, 0.25, 9.0]).unwrap();
        assert_eq!(params.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let mut rng = SeededRng::new(7);
        let params = ModelParams::forecaster(4, 3, 2, 6, &mut rng).unwrap();
        let x = random_matrix(4, 2, &mut rng);
        let got = params.forward(&x).unwrap();

        // Independent oracle: explicit index arithmetic over each stage.
        let l = params.layers();
        let mut h1 = [0.0; 6];
        for r in 0..6 {
            let mut s = l[0].bias[r];
            for t in 0..4 {
                for k in 0..2 {
                    s += l[0].weight[(r, t * 2 + k)] * x[(t, k)];
                }
            }
            h1[r] = s.tanh();
        }
        let mut h2 = [0.0; 6];
        for r in 0..6 {
            let mut s = l[1].bias[r];
            for c in 0..6 {
                s += l[1].weight[(r, c)] * h1[c];
            }
            h2[r] = s.tanh();
        }
        for j in 0..3 {
            for k in 0..2 {
                let r = j * 2 + k;
                let mut s = l[2].bias[r];
                for c in 0..6 {
                    s += l[2].weight[(r, c)] * h2[c];
                }
                assert!((got[(j, k)] - s).abs() <= 1e-14, "({j},{k})");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let mut rng = SeededRng::new(1);
        let params = ModelParams::forecaster(4, 3, 2, 5, &mut rng).unwrap();
        let err = params.forward(&Matrix::zeros(3, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn new_rejects_broken_chain() {
        let mut rng = SeededRng::new(1);
        let a = Layer::uniform(4, 5, Activation::Tanh, &mut rng);
        let b = Layer::uniform(6, 2, Activation::Identity, &mut rng);
        assert!(ModelParams::new(4, 2, 1, vec![a, b]).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = SeededRng::new(2);
        let params = ModelParams::forecaster(8, 2, 2, 10, &mut rng).unwrap();
        for layer in params.layers() {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            assert!(layer.weight.max_abs() <= bound);
        }
        assert_eq!(params.layers().len(), 3);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(4);
        let params = ModelParams::forecaster(4, 3, 2, 5, &mut rng).unwrap();
        let x = random_matrix(4, 2, &mut rng);
        let g = params.backward(&x, &Matrix::zeros(3, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let mut rng = SeededRng::new(5);
        let params = ModelParams::forecaster(4, 3, 2, 5, &mut rng).unwrap();
        let x = random_matrix(4, 2, &mut rng);
        let up = random_matrix(3, 2, &mut rng);
        let g1 = params.backward(&x, &up).unwrap();
        let g2 = params.backward(&x, &up.scale(2.0)).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    fn contracted(params: &ModelParams, x: &Matrix, up: &Matrix) -> f64 {
        params.forward(x).unwrap().dot(up)
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = SeededRng::new(11);
        let params = ModelParams::forecaster(4, 3, 2, 5, &mut rng).unwrap();
        let x = random_matrix(4, 2, &mut rng);
        let up = random_matrix(3, 2, &mut rng);
        let analytic = params.backward(&x, &up).unwrap().flatten();
        let h = 1e-4;
        let mut idx = 0;
        let n_tensors = params.tensors().count();
        for ti in 0..n_tensors {
            let len = params.tensors().nth(ti).unwrap().len();
            for e in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut().nth(ti).unwrap()[e] += h;
                let mut minus = params.clone();
                minus.tensors_mut().nth(ti).unwrap()[e] -= h;
                let fd = (contracted(&plus, &x, &up) - contracted(&minus, &x, &up)) / (2.0 * h);
                let a = analytic[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel <= 1e-4 || (a - fd).abs() <= 1e-9,
                    "tensor {ti} entry {e}: {a} vs {fd}"
                );
                idx += 1;
            }
        }
        assert_eq!(idx, params.parameter_count());
    }
}
