use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Affine layer `y = act(x Wᵀ + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Batch-major activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub layers: Vec<LayerGrad>,
}

impl NetGrad {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("contiguous"), l.bias.as_slice().expect("contiguous")])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("contiguous"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // Gram-Schmidt on `short` Gaussian vectors of length `long`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &basis {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let value = if rows >= cols { basis[j][i] } else { basis[i][j] };
        gain * value
    })
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::InvalidArgument("bias length does not match layer".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Tanh MLP with an identity output layer and orthogonal initialisation.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                Layer {
                    weight: orthogonal(dims[i + 1], dims[i], if last { output_gain } else { hidden_gain }, rng),
                    bias: Array1::zeros(dims[i + 1]),
                    activation: if last { Activation::Identity } else { Activation::Tanh },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn apply(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        if layer.activation == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = Self::apply(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h = Self::apply(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let y = Self::apply(layer, &h.view());
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        Ok((h, Tape { inputs, outputs }))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (out, tape) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    /// Reverse pass. `grad_out` is the loss gradient w.r.t. the batch output;
    /// gradients are summed over the batch.
    pub fn backward(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> Result<(NetGrad, Array2<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::contract("tape was recorded on a different network"));
        }
        let batch = tape.batch_size();
        if grad_out.dim() != (batch, self.output_dim()) {
            return Err(Error::contract(format!(
                "output gradient has shape {:?}, expected ({batch}, {})",
                grad_out.dim(),
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Tanh {
                delta.zip_mut_with(&tape.outputs[i], |d, &y| *d *= 1.0 - y * y);
            }
            let weight = delta.t().dot(&tape.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weight);
            grads.push(LayerGrad { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((NetGrad { layers: grads }, delta))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("contiguous"), l.bias.as_slice().expect("contiguous")])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("contiguous"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
