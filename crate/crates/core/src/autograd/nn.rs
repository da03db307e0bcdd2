use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Matrix, NodeId, Param};
use crate::{Error, Result};

/// Layer-norm epsilon; small enough that normalized rows have unit variance
/// to ~1e-6 whenever the raw variance exceeds 1e-2.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
    Softmax,
}

/// Shape of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: Activation,
    pub layer_norm: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, output_activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![128, 128],
            output_dim,
            output_activation,
            layer_norm: true,
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>) -> Self {
        self.hidden_dims = hidden_dims;
        self
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }
}

/// Affine layer `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform `+-1/sqrt(fan_in)` initialization for both weight and bias.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = uniform(fan_in * fan_out);
        let b = uniform(fan_out);
        Self {
            weight: Param::new(format!("{name}.w"), Matrix::from_vec(fan_in, fan_out, w)),
            bias: Param::new(format!("{name}.b"), Matrix::from_vec(1, fan_out, b)),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Param::new(format!("{name}.w"), Matrix::zeros(fan_in, fan_out)),
            bias: Param::new(format!("{name}.b"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value().rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value().cols()
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, x: NodeId, trainable: bool) -> NodeId {
        let w = g.bind(&self.weight, trainable);
        let b = g.bind(&self.bias, trainable);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn renamed(&self, from: &str, to: &str) -> Self {
        Self {
            weight: self.weight.renamed(self.weight.name().replacen(from, to, 1)),
            bias: self.bias.renamed(self.bias.name().replacen(from, to, 1)),
        }
    }
}

/// Learnable gain and bias applied after per-row standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

impl LayerNorm {
    fn new(name: &str, width: usize) -> Self {
        Self {
            gain: Param::new(format!("{name}.gain"), Matrix::filled(1, width, 1.0)),
            bias: Param::new(format!("{name}.bias"), Matrix::zeros(1, width)),
        }
    }

    fn forward<'p>(&'p self, g: &mut Graph<'p>, x: NodeId, trainable: bool) -> NodeId {
        let n = g.layer_norm(x, LAYER_NORM_EPS);
        let gain = g.bind(&self.gain, trainable);
        let bias = g.bind(&self.bias, trainable);
        let s = g.mul_row(n, gain);
        g.add_row(s, bias)
    }
}

/// Feed-forward network: hidden layers of `pre -> [layer norm] -> [mask] -> ReLU`
/// followed by an output layer and `output_activation`.
///
/// A mask, when given, gates the first hidden layer's (normalized)
/// pre-activations: with mask width `K`, unit `m` is multiplied by
/// `mask[m mod K]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
    norms: Vec<LayerNorm>,
}

/// Output of [`Mlp::forward_full`].
#[derive(Clone, Copy, Debug)]
pub struct MlpNodes {
    /// Last hidden layer activation.
    pub trunk: NodeId,
    /// Network output after the output activation.
    pub output: NodeId,
}

impl Mlp {
    pub fn new(spec: MlpSpec, name: &str, rng: &mut impl Rng) -> Self {
        Self::build(spec, name, |n, i, o| Linear::new(n, i, o, rng))
    }

    /// All weights and biases zero (layer-norm gains stay at one).
    pub fn zeros(spec: MlpSpec, name: &str) -> Self {
        Self::build(spec, name, Linear::zeros)
    }

    fn build(spec: MlpSpec, name: &str, mut linear: impl FnMut(&str, usize, usize) -> Linear) -> Self {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut fan_in = spec.input_dim;
        for (i, &h) in spec.hidden_dims.iter().enumerate() {
            layers.push(linear(&format!("{name}.l{i}"), fan_in, h));
            if spec.layer_norm {
                norms.push(LayerNorm::new(&format!("{name}.ln{i}"), h));
            }
            fan_in = h;
        }
        layers.push(linear(&format!("{name}.out"), fan_in, spec.output_dim));
        Self { spec, layers, norms }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn trunk_dim(&self) -> usize {
        self.spec.hidden_dims.last().copied().unwrap_or(self.spec.input_dim)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(Linear::params).collect();
        out.extend(self.norms.iter().flat_map(|n| [&n.gain, &n.bias]));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.layers.iter_mut().flat_map(Linear::params_mut).collect();
        out.extend(self.norms.iter_mut().flat_map(|n| [&mut n.gain, &mut n.bias]));
        out
    }

    /// Copy whose parameter names have their first `from` replaced by `to`.
    pub fn renamed(&self, from: &str, to: &str) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            let name: String = p.name().replacen(from, to, 1);
            *p = p.renamed(name);
        }
        out
    }

    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        input: NodeId,
        mask: Option<NodeId>,
        trainable: bool,
    ) -> Result<NodeId> {
        Ok(self.forward_full(g, input, mask, trainable)?.output)
    }

    pub fn forward_full<'p>(
        &'p self,
        g: &mut Graph<'p>,
        input: NodeId,
        mask: Option<NodeId>,
        trainable: bool,
    ) -> Result<MlpNodes> {
        let x = g.value(input);
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape("mlp input", self.spec.input_dim, x.cols()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("mlp input"));
        }
        if let Some(m) = mask {
            let (rows, k) = g.value(m).shape();
            let width = self.spec.hidden_dims.first().copied().unwrap_or(0);
            if k == 0 || width % k != 0 {
                return Err(Error::shape("mask width", format!("a divisor of {width}"), k));
            }
            if rows != x.rows() {
                return Err(Error::shape("mask rows", x.rows(), rows));
            }
        }

        let n_hidden = self.spec.hidden_dims.len();
        let mut h = input;
        for i in 0..n_hidden {
            let mut pre = self.layers[i].forward(g, h, trainable);
            if let Some(norm) = self.norms.get(i) {
                pre = norm.forward(g, pre, trainable);
            }
            if i == 0 {
                if let Some(m) = mask {
                    pre = g.tile_mask(pre, m);
                }
            }
            h = g.relu(pre);
        }
        let out = self.layers[n_hidden].forward(g, h, trainable);
        let output = match self.spec.output_activation {
            Activation::Linear => out,
            Activation::Tanh => g.tanh(out),
            Activation::Softmax => g.softmax(out),
        };
        Ok(MlpNodes { trunk: h, output })
    }

    /// Forward pass outside of any training graph.
    pub fn eval(&self, input: &Matrix, mask: Option<&Matrix>) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let m = mask.map(|m| g.input(m.clone()));
        let y = self.forward(&mut g, x, m, false)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_weights_tanh_head_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(5, 3, Activation::Tanh), "n");
        let y = net.eval(&Matrix::row_vector(&[1.0, -2.0, 0.3, 4.0, 9.0]), None).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = seed::stream(0, "t");
        let net = Mlp::new(MlpSpec::new(3, 2, Activation::Linear).with_hidden(vec![8, 8]), "n", &mut rng);
        assert!(matches!(net.eval(&Matrix::zeros(1, 4), None), Err(Error::Shape { .. })));
        assert!(matches!(
            net.eval(&Matrix::row_vector(&[0.0, f64::NAN, 1.0]), None),
            Err(Error::NonFinite(_))
        ));
        assert!(net.eval(&Matrix::zeros(1, 3), Some(&Matrix::zeros(1, 3))).is_err());
    }

    /// Independent forward written with plain loops: zero the first-layer
    /// pre-activations whose index is not congruent to `j` modulo `k`.
    fn dropout_oracle(net: &Mlp, x: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut h = x.to_vec();
        let n_hidden = net.spec.hidden_dims.len();
        for (li, layer) in net.layers.iter().enumerate() {
            let (w, b) = (layer.weight.value(), layer.bias.value());
            let mut pre: Vec<f64> = (0..w.cols())
                .map(|c| b.get(0, c) + (0..w.rows()).map(|r| h[r] * w.get(r, c)).sum::<f64>())
                .collect();
            if li < n_hidden {
                let norm = &net.norms[li];
                let n = pre.len() as f64;
                let mean = pre.iter().sum::<f64>() / n;
                let var = pre.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                for (c, v) in pre.iter_mut().enumerate() {
                    *v = (*v - mean) / libm::sqrt(var + LAYER_NORM_EPS) * norm.gain.value().get(0, c)
                        + norm.bias.value().get(0, c);
                }
                if li == 0 {
                    for (c, v) in pre.iter_mut().enumerate() {
                        if !keep(c) {
                            *v = 0.0;
                        }
                    }
                }
                h = pre.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                h = pre.into_iter().map(libm::tanh).collect();
            }
        }
        h
    }

    #[test]
    fn masked_forward_equals_manual_dropout() {
        let mut rng = seed::stream(11, "mask-oracle");
        let mut net = Mlp::new(MlpSpec::new(6, 3, Activation::Tanh).with_hidden(vec![8, 8]), "n", &mut rng);
        // Non-trivial layer-norm affine parameters.
        for (i, p) in net.params_mut().into_iter().enumerate() {
            if p.name().contains(".ln") {
                for v in p.value_mut().as_mut_slice() {
                    *v += 0.1 * (i as f64).sin();
                }
            }
        }
        let x = [0.3, -1.2, 0.7, 2.0, -0.4, 0.05];
        for j in 0..4 {
            let mut mask = Matrix::zeros(1, 4);
            mask.set(0, j, 1.0);
            let y = net.eval(&Matrix::row_vector(&x), Some(&mask)).unwrap();
            let expected = dropout_oracle(&net, &x, |m| m % 4 == j);
            for (a, b) in y.as_slice().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "mask {j}: {a} vs {b}");
            }
            assert_eq!(y, manual_zeroing(&net, &x, |m| m % 4 == j), "mask {j}");
        }
        let unmasked = net.eval(&Matrix::row_vector(&x), None).unwrap();
        assert_eq!(unmasked, manual_zeroing(&net, &x, |_| true));
    }

    /// Same layers as the network, with the first-layer pre-activations
    /// multiplied by an explicit full-width 0/1 row instead of a tiled mask.
    fn manual_zeroing(net: &Mlp, x: &[f64], keep: impl Fn(usize) -> bool) -> Matrix {
        let mut g = Graph::new();
        let mut h = g.input(Matrix::row_vector(x));
        for i in 0..net.spec.hidden_dims.len() {
            let mut pre = net.layers[i].forward(&mut g, h, false);
            pre = net.norms[i].forward(&mut g, pre, false);
            if i == 0 {
                let width = net.spec.hidden_dims[0];
                let row: Vec<f64> = (0..width).map(|m| if keep(m) { 1.0 } else { 0.0 }).collect();
                let dropout = g.input(Matrix::row_vector(&row));
                pre = g.mul_row(pre, dropout);
            }
            h = g.relu(pre);
        }
        let out = net.layers.last().unwrap().forward(&mut g, h, false);
        let y = g.tanh(out);
        g.value(y).clone()
    }
}
