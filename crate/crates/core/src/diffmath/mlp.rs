use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use super::{Array, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map followed by an activation. `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array,
    pub bias: Array,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    rows: usize,
    /// `outputs[0]` is the input; `outputs[l + 1]` is layer `l`'s output.
    outputs: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("tape always holds the input")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.outputs.pop().expect("tape always holds the input")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases; `hidden` between layers,
    /// identity on the output.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                let activation = if l + 2 == sizes.len() {
                    Activation::Identity
                } else {
                    hidden
                };
                Layer {
                    weight: Array::new(vec![fan_out, fan_in], weight).expect("sized above"),
                    bias: Array::zeros(&[fan_out]),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    /// Zeroes the final layer so the network initially outputs zero.
    pub fn with_zero_output(mut self) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            last.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP without layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weight.rank() != 2 || layer.bias.shape() != [layer.out_dim()] {
                return Err(Error::Shape(format!("layer {l} has inconsistent weight/bias")));
            }
            if l > 0 && self.layers[l - 1].out_dim() != layer.in_dim() {
                return Err(Error::Shape(format!("layer {l} input does not chain")));
            }
        }
        if self.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Shape("final layer activation must be identity".into()));
        }
        Ok(())
    }

    /// Batched forward pass over `rows` inputs stored row-major.
    pub fn forward_rows(&self, input: &[f64], rows: usize) -> MlpTape {
        assert_eq!(input.len(), rows * self.in_dim(), "MLP input size");
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for layer in &self.layers {
            let x = outputs.last().expect("nonempty");
            let (din, dout) = (layer.in_dim(), layer.out_dim());
            let mut y = vec![0.0; rows * dout];
            for row in y.chunks_exact_mut(dout) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(rows, din, dout, x, false, layer.weight.data(), true, &mut y, true);
            if layer.activation != Activation::Identity {
                y.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            outputs.push(y);
        }
        MlpTape { rows, outputs }
    }

    pub fn forward_one(&self, input: &[f64]) -> Vec<f64> {
        self.forward_rows(input, 1).into_output()
    }

    /// Accumulates parameter gradients of `<upstream, output>` into `grads`
    /// and returns the gradient with respect to the input rows.
    pub fn backward_rows(&self, tape: &MlpTape, upstream: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        let rows = tape.rows;
        assert_eq!(upstream.len(), rows * self.out_dim(), "MLP upstream size");
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (din, dout) = (layer.in_dim(), layer.out_dim());
            let y = &tape.outputs[l + 1];
            if layer.activation != Activation::Identity {
                delta
                    .iter_mut()
                    .zip(y)
                    .for_each(|(d, yv)| *d *= layer.activation.derivative_from_output(*yv));
            }
            let x = &tape.outputs[l];
            let g = &mut grads.layers[l];
            gemm(dout, rows, din, &delta, true, x, false, g.weight.data_mut(), true);
            let gb = g.bias.data_mut();
            for row in delta.chunks_exact(dout) {
                gb.iter_mut().zip(row).for_each(|(b, d)| *b += d);
            }
            let mut dx = vec![0.0; rows * din];
            gemm(
                rows,
                dout,
                din,
                &delta,
                false,
                layer.weight.data(),
                false,
                &mut dx,
                false,
            );
            delta = dx;
        }
        delta
    }
}

impl Parameterized for MlpParams {
    fn arrays(&self) -> Vec<&Array> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn input_rows(params: &MlpParams, input: &Array) -> Result<usize> {
    let din = params.in_dim();
    match input.shape() {
        [n] if *n == din => Ok(1),
        [rows, n] if *n == din => Ok(*rows),
        s => Err(Error::Shape(format!("MLP expects input width {din}, got shape {s:?}"))),
    }
}

fn output_shape(input: &Array, rows: usize, width: usize) -> Vec<usize> {
    if input.rank() == 1 {
        vec![width]
    } else {
        vec![rows, width]
    }
}

/// Forward pass for a single input vector `[in]` or a batch `[rows, in]`.
pub fn mlp_forward(params: &MlpParams, input: &Array) -> Result<Array> {
    params.validate()?;
    let rows = input_rows(params, input)?;
    let out = params.forward_rows(input.data(), rows).into_output();
    Array::new(output_shape(input, rows, params.out_dim()), out)
}

/// Gradients of `<upstream, mlp_forward(params, input)>`.
pub fn mlp_gradient(params: &MlpParams, input: &Array, upstream: &Array) -> Result<(MlpParams, Array)> {
    params.validate()?;
    let rows = input_rows(params, input)?;
    if upstream.shape() != output_shape(input, rows, params.out_dim()).as_slice() {
        return Err(Error::Shape(format!(
            "upstream shape {:?} does not match output",
            upstream.shape()
        )));
    }
    let tape = params.forward_rows(input.data(), rows);
    let mut grads = params.zeros_like();
    let dx = params.backward_rows(&tape, upstream.data(), &mut grads);
    Ok((grads, Array::new(input.shape().to_vec(), dx)?))
}
