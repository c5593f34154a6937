use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of a fully connected network. An empty `hidden` list is a
/// linear model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("all MLP extents must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, readout last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Width of the penultimate representation.
    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `(fan_in, fan_out)`.
    pub weight: Tensor,
    /// `(1, fan_out)`.
    pub bias: Tensor,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

impl MlpWeights {
    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.norm_sq() + l.bias.norm_sq())
            .sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<LayerVars<'t>> {
        self.layers
            .iter()
            .map(|l| LayerVars {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
            })
            .collect()
    }
}

/// Draws layers with weights `N(0, weight_gain / fan_in)` and biases
/// `N(0, bias_var)`; `bias_var == 0` gives zero biases.
pub fn draw_layers<R: Rng + ?Sized>(
    dims: &[(usize, usize)],
    weight_gain: f64,
    bias_var: f64,
    rng: &mut R,
) -> Vec<Layer> {
    dims.iter()
        .map(|&(fan_in, fan_out)| {
            let w = Normal::new(0.0, (weight_gain / fan_in as f64).sqrt()).expect("finite std");
            let weight = (0..fan_in * fan_out).map(|_| w.sample(rng)).collect();
            let bias = if bias_var > 0.0 {
                let b = Normal::new(0.0, bias_var.sqrt()).expect("finite std");
                (0..fan_out).map(|_| b.sample(rng)).collect()
            } else {
                vec![0.0; fan_out]
            };
            Layer {
                weight: Tensor::matrix(fan_in, fan_out, weight).expect("sized"),
                bias: Tensor::matrix(1, fan_out, bias).expect("sized"),
            }
        })
        .collect()
}

/// He initialization: weights `N(0, 2/fan_in)`, zero biases.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<MlpWeights> {
    spec.validate()?;
    let mut rng = stream(seed, 0, Purpose::Init);
    Ok(MlpWeights {
        spec: spec.clone(),
        layers: draw_layers(&spec.layer_dims(), 2.0, 0.0, &mut rng),
    })
}

fn check_input(layers: &[Layer], x: &Tensor) -> Result<()> {
    let (_, d) = x.dims2()?;
    if let Some(first) = layers.first() {
        if first.fan_in() != d {
            return Err(Error::invalid(format!(
                "input has {d} columns, network expects {}",
                first.fan_in()
            )));
        }
    }
    Ok(())
}

/// Applies `layers` with a ReLU after every one of them.
pub fn features(layers: &[Layer], x: &Tensor) -> Result<Tensor> {
    check_input(layers, x)?;
    let mut h = x.clone();
    for l in layers {
        h = l.apply(&h)?.map(|v| v.max(0.0));
    }
    Ok(h)
}

/// Network outputs `g(x, w)`, shape `(n, output_dim)`.
pub fn forward(w: &MlpWeights, x: &Tensor) -> Result<Tensor> {
    let (readout, hidden) = w
        .layers
        .split_last()
        .ok_or_else(|| Error::invalid("network without layers"))?;
    if hidden.is_empty() {
        check_input(&w.layers, x)?;
        return readout.apply(x);
    }
    readout.apply(&features(hidden, x)?)
}

/// Penultimate activations. A network without hidden layers returns its
/// input unchanged (identity projector).
pub fn forward_features(w: &MlpWeights, x: &Tensor) -> Result<Tensor> {
    let hidden = &w.layers[..w.layers.len().saturating_sub(1)];
    if hidden.is_empty() {
        check_input(&w.layers, x)?;
        return Ok(x.clone());
    }
    features(hidden, x)
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

/// Recorded forward pass; ReLU after every layer except, unless
/// `relu_last`, the final one.
pub fn forward_tape<'t>(layers: &[LayerVars<'t>], x: Var<'t>, relu_last: bool) -> Result<Var<'t>> {
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = h.matmul(l.weight)?.add_row(l.bias)?;
        if relu_last || i + 1 < layers.len() {
            h = h.relu();
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_grid(n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(3, &[16, 8], 2);
        assert_eq!(init_mlp(&spec, 5).unwrap(), init_mlp(&spec, 5).unwrap());
        assert_ne!(init_mlp(&spec, 5).unwrap(), init_mlp(&spec, 6).unwrap());
    }

    #[test]
    fn init_variance_follows_fan_in() {
        // 256 x 400 = 102400 draws
        let spec = MlpSpec::new(256, &[400], 1);
        let w = init_mlp(&spec, 1).unwrap();
        let d = w.layers[0].weight.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((0.0062..=0.0094).contains(&var), "{var}");
        assert!(w.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn linear_model_has_one_layer() {
        let w = init_mlp(&MlpSpec::new(2, &[], 1), 0).unwrap();
        assert_eq!(w.layers.len(), 1);
        assert_eq!(w.layers[0].weight.shape(), &[2, 1]);
        assert_eq!(w.layers[0].bias.shape(), &[1, 1]);
    }

    #[test]
    fn rejects_zero_extents() {
        assert!(init_mlp(&MlpSpec::new(0, &[], 1), 0).is_err());
        assert!(init_mlp(&MlpSpec::new(1, &[0], 1), 0).is_err());
    }

    #[test]
    fn linear_identity_projection() {
        let mut w = init_mlp(&MlpSpec::new(2, &[], 2), 0).unwrap();
        w.layers[0].weight = Tensor::eye(2);
        w.layers[0].bias = Tensor::zeros(&[1, 2]);
        let x = x_grid(4, 2);
        assert_eq!(forward(&w, &x).unwrap(), x);
    }

    #[test]
    fn dead_hidden_layer_leaves_bias_path() {
        let mut w = init_mlp(&MlpSpec::new(1, &[4], 1), 0).unwrap();
        w.layers[0].weight = Tensor::zeros(&[1, 4]);
        w.layers[0].bias = Tensor::full(&[1, 4], -1.0);
        w.layers[1].bias = Tensor::full(&[1, 1], 0.25);
        let out = forward(&w, &x_grid(5, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let w = init_mlp(&MlpSpec::new(3, &[4], 1), 0).unwrap();
        assert!(forward(&w, &x_grid(2, 2)).is_err());
        let lin = init_mlp(&MlpSpec::new(3, &[], 1), 0).unwrap();
        assert!(forward(&lin, &x_grid(2, 2)).is_err());
    }

    #[test]
    fn features_compose_with_readout() {
        let w = init_mlp(&MlpSpec::new(2, &[7], 3), 4).unwrap();
        let x = x_grid(6, 2);
        let h = forward_features(&w, &x).unwrap();
        assert_eq!(h.cols(), 7);
        assert!(h.data().iter().all(|&v| v >= 0.0));
        let out = h.matmul(&w.layers[1].weight).unwrap().add_row(&w.layers[1].bias).unwrap();
        assert_eq!(out, forward(&w, &x).unwrap());
    }

    #[test]
    fn features_of_linear_model_are_inputs() {
        let w = init_mlp(&MlpSpec::new(2, &[], 3), 4).unwrap();
        let x = x_grid(3, 2);
        assert_eq!(forward_features(&w, &x).unwrap(), x);
        assert_eq!(w.spec.feature_dim(), 2);
    }

    #[test]
    fn tape_forward_matches_and_differentiates() {
        let w = init_mlp(&MlpSpec::new(1, &[16], 1), 3).unwrap();
        // keep away from the ReLU kink at x = 0 (biases start at zero)
        let x = x_grid(5, 1).map(|v| v + 0.05);
        let tape = Tape::new();
        let vars = w.bind(&tape);
        let xv = tape.constant(x.clone());
        let out = forward_tape(&vars, xv, false).unwrap();
        assert_eq!(*tape.value(out), forward(&w, &x).unwrap());

        let loss = out.square().sum();
        let grads = tape.backward(loss).unwrap();
        let eval = |w: &MlpWeights| forward(w, &x).unwrap().norm_sq();
        let h = 1e-5;
        for (li, lv) in vars.iter().enumerate() {
            for (which, var) in [(0, lv.weight), (1, lv.bias)] {
                let g = grads.wrt(var);
                let shifted = |k: usize, by: f64| {
                    let mut w = w.clone();
                    let t = if which == 0 { &mut w.layers[li].weight } else { &mut w.layers[li].bias };
                    t.data_mut()[k] += by;
                    eval(&w)
                };
                for k in 0..g.numel() {
                    let fd = (shifted(k, h) - shifted(k, -h)) / (2.0 * h);
                    let an = g.data()[k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel < 1e-5, "layer {li} param {which}/{k}: {fd} vs {an}");
                }
            }
        }
    }
}
