use crate::error::{Error, Result};
use crate::ndcore::{Gradients, Tape, Tensor, Var};
use crate::rng::{child_seed, stream, Purpose};

use super::mlp::{draw_layers, features, forward, forward_tape, init_mlp, Layer, LayerVars, MlpSpec, MlpWeights};

/// Hidden layers shared by every member. ReLU follows every trunk layer;
/// a trunk without layers is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub layers: Vec<Layer>,
}

impl Trunk {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, Layer::fan_out)
    }
}

/// The member weight collections of an ensemble.
///
/// In shared mode every member is a head applied to the trunk output, and
/// `spec` describes the composed network `head ∘ trunk`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights {
    pub spec: MlpSpec,
    pub trunk: Option<Trunk>,
    pub members: Vec<MlpWeights>,
}

const TRUNK_STREAM: u64 = u64::MAX;

impl EnsembleWeights {
    /// `m` independently initialized networks; member `i` uses the seed
    /// `child_seed(seed, i)`.
    pub fn init_independent(spec: &MlpSpec, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        let members = (0..m)
            .map(|i| init_mlp(spec, child_seed(seed, i as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { spec: spec.clone(), trunk: None, members })
    }

    /// The first `trunk_depth` hidden layers of `spec` are shared; each of the
    /// `m` heads holds the remaining layers.
    pub fn init_shared(spec: &MlpSpec, trunk_depth: usize, m: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if m == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        if trunk_depth > spec.hidden.len() {
            return Err(Error::invalid(format!(
                "trunk depth {trunk_depth} exceeds {} hidden layers",
                spec.hidden.len()
            )));
        }
        let dims = spec.layer_dims();
        let mut rng = stream(seed, TRUNK_STREAM, Purpose::Init);
        let trunk = Trunk { layers: draw_layers(&dims[..trunk_depth], 2.0, 0.0, &mut rng) };
        let head_spec = MlpSpec {
            input_dim: trunk.output_dim(spec.input_dim),
            hidden: spec.hidden[trunk_depth..].to_vec(),
            output_dim: spec.output_dim,
            activation: spec.activation,
        };
        let members = (0..m)
            .map(|i| init_mlp(&head_spec, child_seed(seed, i as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { spec: spec.clone(), trunk: Some(trunk), members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn trunk_features(&self, x: &Tensor) -> Result<Tensor> {
        match &self.trunk {
            Some(t) if !t.layers.is_empty() => features(&t.layers, x),
            _ => Ok(x.clone()),
        }
    }

    /// Output of member `i`, shape `(n, C)`.
    pub fn member_forward(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        forward(&self.members[i], &self.trunk_features(x)?)
    }

    /// All member outputs, trunk evaluated once.
    pub fn member_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let h = self.trunk_features(x)?;
        self.members.iter().map(|w| forward(w, &h)).collect()
    }

    /// Every trainable tensor: trunk layers first, then members in order.
    pub fn params(&self) -> Vec<&Tensor> {
        let trunk = self.trunk.iter().flat_map(|t| t.layers.iter().flat_map(|l| [&l.weight, &l.bias]));
        trunk.chain(self.members.iter().flat_map(MlpWeights::tensors)).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let trunk = self
            .trunk
            .iter_mut()
            .flat_map(|t| t.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]));
        trunk.chain(self.members.iter_mut().flat_map(MlpWeights::tensors_mut)).collect()
    }

    /// Names matching [`params`](Self::params) one to one.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if let Some(t) = &self.trunk {
            for l in 0..t.layers.len() {
                names.push(format!("trunk.{l}.weight"));
                names.push(format!("trunk.{l}.bias"));
            }
        }
        for (i, w) in self.members.iter().enumerate() {
            for l in 0..w.layers.len() {
                names.push(format!("member.{i}.{l}.weight"));
                names.push(format!("member.{i}.{l}.bias"));
            }
        }
        names
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Σ‖w‖² over all parameters, trunk counted once.
    pub fn norm_sq(&self) -> f64 {
        self.params().iter().map(|t| t.norm_sq()).sum()
    }

    /// Overwrites all parameters from named tensors, which must match
    /// [`param_names`](Self::param_names) and the current shapes.
    pub fn restore(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let names = self.param_names();
        if names.len() != named.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, got {}",
                names.len(),
                named.len()
            )));
        }
        for ((expect, (name, t)), p) in names.iter().zip(named).zip(self.params()) {
            if expect != name || p.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "tensor {name} {:?} does not match {expect} {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params_mut().into_iter().zip(named) {
            *p = t.clone();
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.param_names()
            .into_iter()
            .zip(self.params().into_iter().cloned())
            .collect()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundEnsemble<'t> {
        let trunk = self
            .trunk
            .as_ref()
            .map(|t| {
                t.layers
                    .iter()
                    .map(|l| LayerVars { weight: tape.leaf(l.weight.clone()), bias: tape.leaf(l.bias.clone()) })
                    .collect()
            })
            .unwrap_or_default();
        let members = self.members.iter().map(|w| w.bind(tape)).collect();
        BoundEnsemble { trunk, members, output_dim: self.spec.output_dim }
    }
}

/// An ensemble whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundEnsemble<'t> {
    pub trunk: Vec<LayerVars<'t>>,
    pub members: Vec<Vec<LayerVars<'t>>>,
    output_dim: usize,
}

impl<'t> BoundEnsemble<'t> {
    /// Leaves in the order of [`EnsembleWeights::params`].
    pub fn leaves(&self) -> Vec<Var<'t>> {
        self.trunk
            .iter()
            .chain(self.members.iter().flatten())
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Per-member outputs, each `(n, C)`.
    pub fn member_outputs(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let h = if self.trunk.is_empty() { x } else { forward_tape(&self.trunk, x, true)? };
        self.members.iter().map(|m| forward_tape(m, h, false)).collect()
    }

    /// Raw function block of shape `(M, n·C)`; row `i` is member `i`'s
    /// outputs flattened point-major with the output index fastest.
    pub fn forward_raw(&self, x: Var<'t>) -> Result<Var<'t>> {
        let n = x.shape()[0];
        let d = n * self.output_dim;
        let rows = self
            .member_outputs(x)?
            .into_iter()
            .map(|o| o.reshape(&[1, d]))
            .collect::<Result<Vec<_>>>()?;
        Var::concat_rows(&rows)
    }

    /// Σ‖w‖² over all leaves, trunk counted once.
    pub fn norm_sq(&self) -> Result<Var<'t>> {
        let leaves = self.leaves();
        let mut total = leaves[0].square().sum();
        for v in &leaves[1..] {
            total = total.add(v.square().sum())?;
        }
        Ok(total)
    }

    /// Gradients in parameter order.
    pub fn collect(&self, grads: &Gradients) -> Vec<Tensor> {
        self.leaves().iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Raw function block `(M, n·C)` of all members at `x`.
pub fn ensemble_forward(ens: &EnsembleWeights, x: &Tensor) -> Result<Tensor> {
    let outs = ens.member_outputs(x)?;
    let d = outs[0].numel();
    let mut data = Vec::with_capacity(outs.len() * d);
    for o in &outs {
        data.extend_from_slice(o.data());
    }
    Tensor::matrix(outs.len(), d, data)
}
