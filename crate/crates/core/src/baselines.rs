//! Reference ensembles: maximum likelihood (DE), L2-regularized MAP (rDE),
//! anchored ensembles (RMS), and exact NN-GP regression.
//!
//! Each member minimizes its own loss
//!
//! ```text
//! DE:  −Σ_batch log p(y | g(x, w_i))
//! rDE: DE + decay·‖w_i‖²
//! RMS: DE + γ·‖w_i − a_i‖²
//! ```
//!
//! Independent members are trained one after another with their own data
//! order; a shared trunk is trained jointly on the sum of the member losses
//! with the trunk penalty counted once.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::nets::{draw_layers, EnsembleWeights, MlpWeights};
use crate::priorkern::{arccos_diag, arccos_kernel, exact_gp_regression, GpPrediction};
use crate::rng::{child_seed, stream, Purpose};
use crate::trainer::{clip_global_norm, epoch_batches, expected_loglik, EpochRecord, Optimizer, TrainConfig, TrainOutcome};

/// Frozen prior draws, one tensor per ensemble parameter (same order as
/// [`EnsembleWeights::params`]).
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub tensors: Vec<Tensor>,
}

impl AnchorSet {
    /// Weights from `N(0, weight_gain/fan_in)`, biases from `N(0, bias_var)`.
    pub fn draw(ens: &EnsembleWeights, weight_gain: f64, bias_var: f64, seed: u64) -> Self {
        let mut tensors = Vec::new();
        if let Some(t) = &ens.trunk {
            let dims: Vec<_> = t.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect();
            let layers = draw_layers(&dims, weight_gain, bias_var, &mut stream(seed, u64::MAX, Purpose::Anchors));
            tensors.extend(layers.into_iter().flat_map(|l| [l.weight, l.bias]));
        }
        for (i, m) in ens.members.iter().enumerate() {
            let dims: Vec<_> = m.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect();
            let layers = draw_layers(&dims, weight_gain, bias_var, &mut stream(seed, i as u64, Purpose::Anchors));
            tensors.extend(layers.into_iter().flat_map(|l| [l.weight, l.bias]));
        }
        Self { tensors }
    }

    pub fn zeros(ens: &EnsembleWeights) -> Self {
        Self { tensors: ens.params().iter().map(|p| Tensor::zeros(p.shape())).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    None,
    WeightDecay(f64),
    Anchored { gamma: f64, anchors: AnchorSet },
}

fn penalty<'t>(leaves: &[Var<'t>], anchors: Option<&[Tensor]>, coef: f64) -> Result<Option<Var<'t>>> {
    if coef == 0.0 || leaves.is_empty() {
        return Ok(None);
    }
    let tape = leaves[0].tape();
    let mut total: Option<Var<'t>> = None;
    for (k, &w) in leaves.iter().enumerate() {
        let d = match anchors {
            Some(a) => w.sub(tape.constant(a[k].clone()))?,
            None => w,
        };
        let s = d.square().sum();
        total = Some(match total {
            Some(t) => t.add(s)?,
            None => s,
        });
    }
    Ok(total.map(|t| t.scale(coef)))
}

fn reg_parts(reg: &Regularizer) -> (f64, Option<&[Tensor]>) {
    match reg {
        Regularizer::None => (0.0, None),
        Regularizer::WeightDecay(d) => (*d, None),
        Regularizer::Anchored { gamma, anchors } => (*gamma, Some(&anchors.tensors)),
    }
}

fn check(ens: &EnsembleWeights, data: &Dataset, cfg: &TrainConfig, reg: &Regularizer) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if data.input_dim() != ens.spec.input_dim || data.output_dim() != ens.output_dim() {
        return Err(Error::invalid("data shape does not match the ensemble"));
    }
    let (coef, anchors) = reg_parts(reg);
    if !(coef >= 0.0) {
        return Err(Error::invalid("regularization coefficient must be nonnegative"));
    }
    if let Some(a) = anchors {
        let params = ens.params();
        if a.len() != params.len() || a.iter().zip(&params).any(|(x, p)| x.shape() != p.shape()) {
            return Err(Error::invalid("anchors do not match the ensemble parameters"));
        }
    }
    Ok(())
}

fn member_loss<'t>(
    layers: &[crate::nets::LayerVars<'t>],
    h: Var<'t>,
    batch: &Dataset,
    cfg: &TrainConfig,
    log_temp: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let out = crate::nets::forward_tape(layers, h, false)?;
    let n = batch.len();
    let c = out.shape()[1];
    let f = out.reshape(&[1, n * c])?;
    Ok(expected_loglik(f, &batch.targets, &cfg.likelihood, log_temp)?.scale(-1.0))
}

/// Trains with the given per-member regularizer.
pub fn train_regularized(ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig, reg: &Regularizer) -> Result<TrainOutcome> {
    check(&ens, data, cfg, reg)?;
    if ens.trunk.is_some() {
        train_joint(ens, data, cfg, reg)
    } else {
        train_independent(ens, data, cfg, reg)
    }
}

fn fixed_log_temp<'t>(tape: &'t Tape, cfg: &TrainConfig) -> Option<Var<'t>> {
    match cfg.likelihood {
        crate::trainer::LikelihoodConfig::Categorical { .. } => {
            Some(tape.constant(Tensor::scalar(cfg.initial_log_temperature())))
        }
        _ => None,
    }
}

fn train_independent(mut ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig, reg: &Regularizer) -> Result<TrainOutcome> {
    let (coef, anchors) = reg_parts(reg);
    let n = data.len();
    let bs = cfg.batch_len(n);
    let spe = cfg.steps_per_epoch(n);
    let total = spe * cfg.epochs;
    let mut history = vec![EpochRecord::default(); cfg.epochs];
    for (e, h) in history.iter_mut().enumerate() {
        h.epoch = e;
        h.temperature = cfg.initial_log_temperature().exp();
    }
    let per_member = ens.members[0].layers.len() * 2;
    for i in 0..ens.len() {
        let seed = child_seed(cfg.seed, i as u64);
        let member_anchors = anchors.map(|a| &a[i * per_member..(i + 1) * per_member]);
        let mut w: MlpWeights = ens.members[i].clone();
        let mut opt = Optimizer::new(cfg.optimizer.clone());
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let batches = epoch_batches(n, bs, seed, epoch);
            let mut loss_sum = 0.0;
            for idx in &batches {
                let lr = cfg.schedule.lr(cfg.optimizer.lr(), step, spe, total);
                let batch = data.select(idx)?;
                let tape = Tape::new();
                let vars = w.bind(&tape);
                let x = tape.constant(batch.x.clone());
                let mut loss = member_loss(&vars, x, &batch, cfg, fixed_log_temp(&tape, cfg))?;
                let leaves: Vec<Var> = vars.iter().flat_map(|l| [l.weight, l.bias]).collect();
                if let Some(p) = penalty(&leaves, member_anchors, coef)? {
                    loss = loss.add(p)?;
                }
                let lv = loss.value().item()?;
                let g = tape.backward(loss)?;
                let mut grads: Vec<Tensor> = leaves.iter().map(|&v| g.wrt(v)).collect();
                if !lv.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                    ens.members[i] = w;
                    return Ok(TrainOutcome {
                        weights: ens,
                        log_temperature: cfg.initial_log_temperature(),
                        history,
                        aborted: Some(format!("member {i}, epoch {epoch}, step {step}: non-finite loss or gradient")),
                    });
                }
                clip_global_norm(&mut grads, cfg.grad_clip);
                opt.step(w.tensors_mut().collect(), &grads, lr)?;
                loss_sum += lv;
                history[epoch].lr = lr;
                step += 1;
            }
            history[epoch].loss += loss_sum / batches.len() as f64;
        }
        ens.members[i] = w;
    }
    Ok(TrainOutcome { weights: ens, log_temperature: cfg.initial_log_temperature(), history, aborted: None })
}

fn train_joint(mut ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig, reg: &Regularizer) -> Result<TrainOutcome> {
    let (coef, anchors) = reg_parts(reg);
    let n = data.len();
    let bs = cfg.batch_len(n);
    let spe = cfg.steps_per_epoch(n);
    let total = spe * cfg.epochs;
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(n, bs, cfg.seed, epoch);
        let mut rec = EpochRecord { epoch, temperature: cfg.initial_log_temperature().exp(), ..Default::default() };
        for idx in &batches {
            let lr = cfg.schedule.lr(cfg.optimizer.lr(), step, spe, total);
            let batch = data.select(idx)?;
            let tape = Tape::new();
            let bound = ens.bind(&tape);
            let x = tape.constant(batch.x.clone());
            let h = if bound.trunk.is_empty() { x } else { crate::nets::forward_tape(&bound.trunk, x, true)? };
            let mut loss: Option<Var> = None;
            for m in &bound.members {
                let l = member_loss(m, h, &batch, cfg, fixed_log_temp(&tape, cfg))?;
                loss = Some(match loss {
                    Some(t) => t.add(l)?,
                    None => l,
                });
            }
            let mut loss = loss.ok_or_else(|| Error::invalid("empty ensemble"))?;
            if let Some(p) = penalty(&bound.leaves(), anchors, coef)? {
                loss = loss.add(p)?;
            }
            let lv = loss.value().item()?;
            let g = tape.backward(loss)?;
            let mut grads = bound.collect(&g);
            if !lv.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Ok(TrainOutcome {
                    weights: ens,
                    log_temperature: cfg.initial_log_temperature(),
                    history,
                    aborted: Some(format!("epoch {epoch}, step {step}: non-finite loss or gradient")),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(ens.params_mut(), &grads, lr)?;
            rec.loss += lv / batches.len() as f64;
            rec.lr = lr;
            step += 1;
        }
        history.push(rec);
    }
    Ok(TrainOutcome { weights: ens, log_temperature: cfg.initial_log_temperature(), history, aborted: None })
}

/// Per-member maximum likelihood.
pub fn train_de(ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_regularized(ens, data, cfg, &Regularizer::None)
}

/// Per-member MAP with penalty `weight_decay·‖w_i‖²`.
pub fn train_rde(ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig, weight_decay: f64) -> Result<TrainOutcome> {
    train_regularized(ens, data, cfg, &Regularizer::WeightDecay(weight_decay))
}

/// Anchored ensemble with penalty `γ·‖w_i − a_i‖²`.
pub fn train_rms(ens: EnsembleWeights, data: &Dataset, cfg: &TrainConfig, gamma: f64, anchors: &AnchorSet) -> Result<TrainOutcome> {
    train_regularized(ens, data, cfg, &Regularizer::Anchored { gamma, anchors: anchors.clone() })
}

/// Exact GP regression under the infinite-width ReLU kernel with `depth`
/// hidden layers. `y` holds one target per training row.
pub fn nngp_regression_baseline(
    train_x: &Tensor,
    y: &[f64],
    test_x: &Tensor,
    depth: usize,
    sigma_w2: f64,
    sigma_b2: f64,
    noise: f64,
) -> Result<GpPrediction> {
    let k_train = arccos_kernel(train_x, train_x, depth, sigma_w2, sigma_b2)?;
    let k_cross = arccos_kernel(train_x, test_x, depth, sigma_w2, sigma_b2)?;
    let diag = arccos_diag(test_x, depth, sigma_w2, sigma_b2);
    exact_gp_regression(&k_train, &k_cross, &diag, y, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{ensemble_forward, MlpSpec};
    use crate::trainer::{LikelihoodConfig, OptimizerConfig};

    fn line_data() -> Dataset {
        let x = Tensor::matrix(8, 1, vec![-1.4, -1.0, -0.6, -0.2, 0.1, 0.5, 0.9, 1.3]).unwrap();
        let y = x.map(|v| (2.0 * v).sin());
        Dataset::regression(x, y).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.1 }, OptimizerConfig::adam(0.01), epochs)
    }

    fn distance(a: &EnsembleWeights, i: usize, j: usize) -> f64 {
        a.members[i].tensors().zip(a.members[j].tensors()).map(|(x, y)| x.sub(y).unwrap().norm_sq()).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_decay_equals_de() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[6], 1), 2, 0).unwrap();
        let a = train_de(ens.clone(), &line_data(), &cfg(30)).unwrap();
        let b = train_rde(ens.clone(), &line_data(), &cfg(30), 0.0).unwrap();
        let zero = AnchorSet::zeros(&ens);
        let c = train_rms(ens, &line_data(), &cfg(30), 0.0, &zero).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.weights, c.weights);
    }

    #[test]
    fn zero_anchors_equal_decay() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[6], 1), 2, 0).unwrap();
        let zero = AnchorSet::zeros(&ens);
        let a = train_rde(ens.clone(), &line_data(), &cfg(20), 0.1).unwrap();
        let b = train_rms(ens, &line_data(), &cfg(20), 0.1, &zero).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn decay_shrinks_weights() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[16], 1), 1, 3).unwrap();
        let free = train_rde(ens.clone(), &line_data(), &cfg(200), 0.0).unwrap();
        let reg = train_rde(ens, &line_data(), &cfg(200), 0.1).unwrap();
        assert!(reg.weights.norm_sq() < free.weights.norm_sq());
    }

    #[test]
    fn strong_anchoring_pins_weights() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[4], 1), 2, 5).unwrap();
        let anchors = AnchorSet::draw(&ens, 2.0, 0.01, 9);
        let mut c = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.1 }, OptimizerConfig::sgd(2e-5, 0.0), 300);
        c.grad_clip = 1e12;
        let out = train_rms(ens, &line_data(), &c, 1e4, &anchors).unwrap();
        let d: f64 = out.weights.params().iter().zip(&anchors.tensors).map(|(p, a)| p.sub(a).unwrap().norm_sq()).sum::<f64>().sqrt();
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn linear_de_collapses_but_rms_does_not() {
        let spec = MlpSpec::new(1, &[], 1);
        let ens = EnsembleWeights::init_independent(&spec, 4, 7).unwrap();
        let mut c = TrainConfig::new(
            LikelihoodConfig::Gaussian { noise_var: 0.1 },
            OptimizerConfig::sgd(0.001, 0.9),
            1000,
        );
        c.schedule = crate::trainer::Schedule::Cosine;
        let de = train_de(ens.clone(), &line_data(), &c).unwrap();
        let grid = Tensor::matrix(201, 1, (0..201).map(|i| -2.0 + 0.02 * i as f64).collect()).unwrap();
        let raw = ensemble_forward(&de.weights, &grid).unwrap();
        let spread = (0..201)
            .map(|j| {
                let col: Vec<f64> = (0..4).map(|i| raw.at(i, j)).collect();
                col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min)
            })
            .fold(0.0, f64::max);
        assert!(spread < 1e-3, "{spread}");

        let anchors = AnchorSet::draw(&ens, 2.0, 0.01, 1);
        let rms = train_rms(ens, &line_data(), &c, 1.0, &anchors).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(distance(&rms.weights, i, j) > 0.01);
            }
        }
    }

    #[test]
    fn deterministic_and_member_independent() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[6], 1), 3, 2).unwrap();
        let mut c = cfg(10);
        c.batch_size = 3;
        let a = train_de(ens.clone(), &line_data(), &c).unwrap();
        let b = train_de(ens.clone(), &line_data(), &c).unwrap();
        assert_eq!(a.weights, b.weights);
        // a member's result does not depend on the other members
        let mut solo = ens.clone();
        solo.members.truncate(1);
        let s = train_de(solo, &line_data(), &c).unwrap();
        assert_eq!(s.weights.members[0], a.weights.members[0]);
    }

    #[test]
    fn shared_trunk_trains_jointly() {
        let ens = EnsembleWeights::init_shared(&MlpSpec::new(1, &[8, 4], 1), 1, 3, 2).unwrap();
        let before = ens.trunk.clone();
        let out = train_rde(ens, &line_data(), &cfg(5), 0.01).unwrap();
        assert_ne!(out.weights.trunk, before);
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn nngp_baseline_interpolates() {
        let d = line_data();
        let y: Vec<f64> = match &d.targets {
            crate::data::Targets::Real { y, .. } => y.data().to_vec(),
            _ => unreachable!(),
        };
        let p = nngp_regression_baseline(&d.x, &y, &d.x, 2, 2.0, 0.01, 1e-10).unwrap();
        for (m, t) in p.mean.iter().zip(&y) {
            assert!((m - t).abs() < 1e-4);
        }
    }
}
