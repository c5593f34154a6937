//! Training the ensemble as a functional variational posterior.
//!
//! Each step draws a mini-batch, appends random measurement points, and
//! minimizes
//!
//! ```text
//! −( E_q[Σ_batch log p(y | f(x))] − α·KL[q(f_X̃) ‖ p(f_X̃)] − β·Σ‖w‖² )
//! ```
//!
//! where the expectation uses `U` pathwise samples restricted to the batch
//! inputs and the KL is exact on the whole measurement set.

mod likelihood;
mod optim;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use likelihood::{expected_loglik, LikelihoodConfig};
pub use optim::{clip_global_norm, Optimizer, OptimizerConfig, Schedule};

use crate::data::{Dataset, Targets};
use crate::degp::{center_tape, lambda_from_trace, sample_tape, SampleNoise};
use crate::error::{Error, Result};
use crate::gaussops::kl_structured_tape;
use crate::ndcore::{Tape, Tensor, Var};
use crate::nets::{BoundEnsemble, EnsembleWeights};
use crate::priorkern::{mc_nngp_base, PriorBase, PriorSpec};
use crate::rng::{stream, Purpose};

/// Where extra measurement points come from: `points` draws per step,
/// uniform over the box `[low, high]` (one bound per input dimension).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementPolicy {
    pub points: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl MeasurementPolicy {
    pub fn uniform_box(points: usize, low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { points, low, high }
    }

    /// Box spanning the per-column range of `x`.
    pub fn data_box(points: usize, x: &Tensor) -> Self {
        let d = x.cols();
        let mut low = vec![f64::INFINITY; d];
        let mut high = vec![f64::NEG_INFINITY; d];
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                low[j] = low[j].min(v);
                high[j] = high[j].max(v);
            }
        }
        Self { points, low, high }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.points == 0 {
            return Ok(());
        }
        if self.low.len() != input_dim || self.high.len() != input_dim {
            return Err(Error::invalid(format!(
                "measurement box has {}/{} bounds for {input_dim} inputs",
                self.low.len(),
                self.high.len()
            )));
        }
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::invalid("measurement box bounds must be finite with low <= high"));
        }
        Ok(())
    }
}

/// The batch inputs followed by `policy.points` uniform draws.
pub fn measurement_set<R: Rng + ?Sized>(batch_x: &Tensor, policy: &MeasurementPolicy, rng: &mut R) -> Result<Tensor> {
    if batch_x.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if policy.points == 0 {
        return Ok(batch_x.clone());
    }
    policy.validate(batch_x.cols())?;
    let d = batch_x.cols();
    let extra: Vec<f64> = (0..policy.points * d)
        .map(|k| {
            let (l, h) = (policy.low[k % d], policy.high[k % d]);
            l + (h - l) * rng.random::<f64>()
        })
        .collect();
    Tensor::concat_rows(&[batch_x, &Tensor::matrix(policy.points, d, extra)?])
}

fn default_alpha() -> f64 {
    1.0
}
fn default_fraction() -> f64 {
    0.05
}
fn default_samples() -> usize {
    256
}
fn default_clip() -> f64 {
    100.0
}
fn default_temperature_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// KL coefficient.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Coefficient of Σ‖w‖² (no 1/M factor).
    #[serde(default)]
    pub beta: f64,
    /// λ as a fraction of the average eigenvalue of the centered covariance.
    #[serde(default = "default_fraction")]
    pub lambda_fraction: f64,
    /// Function samples per step for the expected log-likelihood.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub measurement: MeasurementPolicy,
    pub likelihood: LikelihoodConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: Schedule,
    pub epochs: usize,
    /// Mini-batch size; 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm bound.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Adam step size of the log-temperature.
    #[serde(default = "default_temperature_lr")]
    pub temperature_lr: f64,
}

impl TrainConfig {
    pub fn new(likelihood: LikelihoodConfig, optimizer: OptimizerConfig, epochs: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            lambda_fraction: 0.05,
            samples: 256,
            measurement: MeasurementPolicy::default(),
            likelihood,
            optimizer,
            schedule: Schedule::Constant,
            epochs,
            batch_size: 0,
            seed: 0,
            grad_clip: 100.0,
            temperature_lr: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("α and β must be nonnegative"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("need at least one function sample per step"));
        }
        if !(self.lambda_fraction > 0.0) {
            return Err(Error::invalid("λ fraction must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        self.likelihood.validate()?;
        self.optimizer.validate()
    }

    pub fn batch_len(&self, n: usize) -> usize {
        if self.batch_size == 0 {
            n
        } else {
            self.batch_size.min(n)
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_len(n).max(1))
    }

    fn learns_temperature(&self) -> bool {
        matches!(self.likelihood, LikelihoodConfig::Categorical { learn_temperature: true, .. })
    }

    fn uses_temperature(&self) -> bool {
        matches!(self.likelihood, LikelihoodConfig::Categorical { .. })
    }

    pub fn initial_log_temperature(&self) -> f64 {
        match self.likelihood {
            LikelihoodConfig::Categorical { temperature, .. } => temperature.ln(),
            LikelihoodConfig::Gaussian { .. } => 0.0,
        }
    }
}

/// One training step's data: the measurement set (batch inputs first) and the
/// targets of those batch inputs.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a> {
    pub x: &'a Tensor,
    pub n_batch: usize,
    pub targets: &'a Targets,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub loss: f64,
    /// Expected log-likelihood.
    pub l1: f64,
    /// KL divergence (0 when α = 0).
    pub l2: f64,
    /// Σ‖w‖² (0 when β = 0).
    pub l3: f64,
    pub lambda: f64,
    pub temperature: f64,
}

/// Records the negated objective on `bound`'s tape.
///
/// `lambda` overrides the trace rule; either way λ is a constant for
/// differentiation. `base` may be `None` only when `α = 0`.
pub fn felbo_loss<'t>(
    bound: &BoundEnsemble<'t>,
    log_temp: Option<Var<'t>>,
    batch: StepBatch<'_>,
    base: Option<&PriorBase>,
    cfg: &TrainConfig,
    noise: &SampleNoise,
    lambda: Option<f64>,
) -> Result<(Var<'t>, Diagnostics)> {
    let tape = log_temp.map(|v| v.tape()).unwrap_or_else(|| bound.leaves()[0].tape());
    let c = bound_output_dim(bound)?;
    let raw = bound.forward_raw(tape.constant(batch.x.clone()))?;
    let (mean, dev) = center_tape(raw)?;
    let lambda = lambda.unwrap_or_else(|| lambda_from_trace(&dev.value(), cfg.lambda_fraction));
    let nb = batch.n_batch * c;
    let samples = sample_tape(mean.slice_cols(0, nb)?, dev.slice_cols(0, nb)?, lambda, noise)?;
    let temp = if cfg.uses_temperature() { log_temp } else { None };
    let l1 = expected_loglik(samples, batch.targets, &cfg.likelihood, temp)?;
    let mut objective = l1;
    let mut l2v = 0.0;
    if cfg.alpha > 0.0 {
        let base = base.ok_or_else(|| Error::invalid("KL term needs a prior base"))?;
        let kl = kl_structured_tape(mean, dev, lambda, base, c)?;
        l2v = kl.value().item()?;
        objective = objective.sub(kl.scale(cfg.alpha))?;
    }
    let mut l3v = 0.0;
    if cfg.beta > 0.0 {
        let l3 = bound.norm_sq()?;
        l3v = l3.value().item()?;
        objective = objective.sub(l3.scale(cfg.beta))?;
    }
    let loss = objective.scale(-1.0);
    let diag = Diagnostics {
        loss: loss.value().item()?,
        l1: l1.value().item()?,
        l2: l2v,
        l3: l3v,
        lambda,
        temperature: log_temp.map_or(1.0, |v| v.value().item().map_or(f64::NAN, f64::exp)),
    };
    Ok((loss, diag))
}

fn bound_output_dim(bound: &BoundEnsemble<'_>) -> Result<usize> {
    let last = bound.members[0].last().ok_or_else(|| Error::invalid("member without layers"))?;
    Ok(last.bias.shape()[1])
}

/// Loss value and gradients (parameter order, then the log-temperature).
pub struct LossGradients {
    pub diagnostics: Diagnostics,
    pub grads: Vec<Tensor>,
    pub log_temp_grad: Option<f64>,
}

pub fn felbo_gradients(
    ens: &EnsembleWeights,
    log_temp: f64,
    batch: StepBatch<'_>,
    base: Option<&PriorBase>,
    cfg: &TrainConfig,
    noise: &SampleNoise,
    lambda: Option<f64>,
) -> Result<LossGradients> {
    let tape = Tape::new();
    let bound = ens.bind(&tape);
    let lt = cfg.uses_temperature().then(|| {
        if cfg.learns_temperature() {
            tape.leaf(Tensor::scalar(log_temp))
        } else {
            tape.constant(Tensor::scalar(log_temp))
        }
    });
    let (loss, diagnostics) = felbo_loss(&bound, lt, batch, base, cfg, noise, lambda)?;
    let g = tape.backward(loss)?;
    let log_temp_grad = match lt {
        Some(v) if cfg.learns_temperature() => Some(g.wrt(v).item()?),
        _ => None,
    };
    Ok(LossGradients { diagnostics, grads: bound.collect(&g), log_temp_grad })
}

/// Per-epoch means of the step diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final weights, or the last finite weights if training aborted.
    pub weights: EnsembleWeights,
    pub log_temperature: f64,
    pub history: Vec<EpochRecord>,
    /// Set when a numeric failure stopped training early.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.aborted {
            Some(e) => Err(Error::Numeric(e)),
            None => Ok(self),
        }
    }
}

/// Shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if batch < n {
        idx.shuffle(&mut stream(seed, epoch as u64, Purpose::Shuffle));
    }
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn check_data(ens: &EnsembleWeights, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if data.input_dim() != ens.spec.input_dim || data.output_dim() != ens.output_dim() {
        return Err(Error::invalid(format!(
            "data is {}→{}, ensemble is {}→{}",
            data.input_dim(),
            data.output_dim(),
            ens.spec.input_dim,
            ens.output_dim()
        )));
    }
    Ok(())
}

/// Trains all members jointly. Configuration errors are returned as `Err`;
/// numeric failures stop training and are reported in
/// [`TrainOutcome::aborted`] together with the last finite weights.
pub fn train(mut ens: EnsembleWeights, data: &Dataset, prior: &PriorSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(&ens, data)?;
    cfg.measurement.validate(data.input_dim())?;
    if cfg.alpha > 0.0 && prior.input_dim != data.input_dim() {
        return Err(Error::invalid(format!(
            "prior expects {} inputs, data has {}",
            prior.input_dim,
            data.input_dim()
        )));
    }
    let n = data.len();
    let bs = cfg.batch_len(n);
    let spe = cfg.steps_per_epoch(n);
    let total = spe * cfg.epochs;
    let c = ens.output_dim();
    let m = ens.len();
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let mut temp_opt = Optimizer::new(OptimizerConfig::adam(cfg.temperature_lr));
    let mut log_temp = Tensor::scalar(cfg.initial_log_temperature());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let snapshot = (ens.clone(), log_temp.clone());
        let mut acc = EpochRecord { epoch, ..Default::default() };
        let batches = epoch_batches(n, bs, cfg.seed, epoch);
        for idx in &batches {
            let lr = cfg.schedule.lr(cfg.optimizer.lr(), step, spe, total);
            let fail = |e: Error, ens: EnsembleWeights, lt: f64, history: Vec<EpochRecord>| TrainOutcome {
                weights: ens,
                log_temperature: lt,
                history,
                aborted: Some(format!("epoch {epoch}, step {step}: {e}")),
            };
            let batch = data.select(idx)?;
            let xt = measurement_set(&batch.x, &cfg.measurement, &mut stream(cfg.seed, step as u64, Purpose::Measurement))?;
            let base = if cfg.alpha > 0.0 {
                match mc_nngp_base(prior, &xt) {
                    Ok(b) => Some(b),
                    Err(e) => return Ok(fail(e, ens, log_temp.item()?, history)),
                }
            } else {
                None
            };
            let noise = SampleNoise::draw(cfg.samples, m, idx.len() * c, &mut stream(cfg.seed, step as u64, Purpose::MemberNoise));
            let sb = StepBatch { x: &xt, n_batch: idx.len(), targets: &batch.targets };
            let lg = match felbo_gradients(&ens, log_temp.item()?, sb, base.as_ref(), cfg, &noise, None) {
                Ok(lg) => lg,
                Err(e @ (Error::Numeric(_) | Error::NotPositiveDefinite { .. })) => {
                    return Ok(fail(e, ens, log_temp.item()?, history))
                }
                Err(e) => return Err(e),
            };
            let mut grads = lg.grads;
            if !lg.diagnostics.loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                let e = Error::Numeric("non-finite loss or gradient".into());
                return Ok(fail(e, ens, log_temp.item()?, history));
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(ens.params_mut(), &grads, lr)?;
            if let Some(g) = lg.log_temp_grad {
                temp_opt.step(vec![&mut log_temp], &[Tensor::scalar(g)], cfg.temperature_lr)?;
            }
            if ens.params().iter().any(|p| !p.all_finite()) {
                let e = Error::Numeric("weights became non-finite".into());
                return Ok(fail(e, snapshot.0, snapshot.1.item()?, history));
            }
            let d = lg.diagnostics;
            acc.loss += d.loss;
            acc.l1 += d.l1;
            acc.l2 += d.l2;
            acc.l3 += d.l3;
            acc.lambda += d.lambda;
            acc.lr = lr;
            step += 1;
        }
        let k = batches.len() as f64;
        acc.loss /= k;
        acc.l1 /= k;
        acc.l2 /= k;
        acc.l3 /= k;
        acc.lambda /= k;
        acc.temperature = log_temp.item()?.exp();
        log::debug!("epoch {epoch}: loss {:.6e} l1 {:.6e} kl {:.6e}", acc.loss, acc.l1, acc.l2);
        history.push(acc);
    }
    Ok(TrainOutcome { weights: ens, log_temperature: log_temp.item()?, history, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::MlpSpec;
    use crate::priorkern::PriorConfig;

    fn toy_data() -> Dataset {
        let x = Tensor::matrix(6, 1, vec![-1.2, -0.7, -0.1, 0.3, 0.8, 1.4]).unwrap();
        let y = x.map(|v| (2.0 * v).sin());
        Dataset::regression(x, y).unwrap()
    }

    fn toy_cfg(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.1 }, OptimizerConfig::adam(0.01), epochs);
        cfg.samples = 16;
        cfg.measurement = MeasurementPolicy::uniform_box(4, vec![-2.0], vec![2.0]);
        cfg
    }

    #[test]
    fn measurement_set_layout() {
        let x = Tensor::matrix(2, 1, vec![0.1, 0.2]).unwrap();
        let none = MeasurementPolicy::default();
        assert_eq!(measurement_set(&x, &none, &mut stream(0, 0, Purpose::Measurement)).unwrap(), x);
        let p = MeasurementPolicy::uniform_box(5, vec![-2.0], vec![2.0]);
        let a = measurement_set(&x, &p, &mut stream(0, 0, Purpose::Measurement)).unwrap();
        let b = measurement_set(&x, &p, &mut stream(0, 0, Purpose::Measurement)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 7);
        assert_eq!(&a.data()[..2], x.data());
        assert!(a.data()[2..].iter().all(|v| (-2.0..=2.0).contains(v)));
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[4], 1), 3, 0).unwrap();
        let prior = PriorSpec::new(1, PriorConfig::default(), 0).unwrap();
        let out = train(ens.clone(), &toy_data(), &prior, &toy_cfg(0)).unwrap();
        assert_eq!(out.weights, ens);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_records_history() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[8], 1), 3, 1).unwrap();
        let prior = PriorSpec::new(1, PriorConfig::default(), 2).unwrap();
        let mut cfg = toy_cfg(5);
        cfg.batch_size = 4;
        let a = train(ens.clone(), &toy_data(), &prior, &cfg).unwrap();
        let b = train(ens, &toy_data(), &prior, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 5);
        assert!(a.history.iter().all(|h| h.l2 > 0.0 && h.lambda > 0.0 && h.temperature == 1.0));
    }

    #[test]
    fn beta_term_adds_weight_norm() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[4], 1), 2, 3).unwrap();
        let data = toy_data();
        let mut cfg = toy_cfg(1);
        cfg.alpha = 0.0;
        let noise = SampleNoise::draw(cfg.samples, 2, 6, &mut stream(0, 0, Purpose::MemberNoise));
        let batch = StepBatch { x: &data.x, n_batch: 6, targets: &data.targets };
        let plain = felbo_gradients(&ens, 0.0, batch, None, &cfg, &noise, None).unwrap();
        cfg.beta = 0.3;
        let reg = felbo_gradients(&ens, 0.0, batch, None, &cfg, &noise, None).unwrap();
        let diff = reg.diagnostics.loss - plain.diagnostics.loss;
        assert!((diff - 0.3 * ens.norm_sq()).abs() < 1e-10);
        for ((g0, g1), p) in plain.grads.iter().zip(&reg.grads).zip(ens.params()) {
            let expect = g0.add(&p.scale(0.6)).unwrap();
            assert!(g1.sub(&expect).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_runs_ignore_temperature() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(1, &[4], 1), 2, 3).unwrap();
        let data = toy_data();
        let cfg = toy_cfg(1);
        let noise = SampleNoise::draw(cfg.samples, 2, 6, &mut stream(0, 0, Purpose::MemberNoise));
        let xt = data.x.clone();
        let base = mc_nngp_base(&PriorSpec::new(1, PriorConfig::default(), 0).unwrap(), &xt).unwrap();
        let batch = StepBatch { x: &xt, n_batch: 6, targets: &data.targets };
        let a = felbo_gradients(&ens, 0.0, batch, Some(&base), &cfg, &noise, None).unwrap();
        let b = felbo_gradients(&ens, 3.0, batch, Some(&base), &cfg, &noise, None).unwrap();
        assert_eq!(a.diagnostics.loss, b.diagnostics.loss);
        assert!(a.log_temp_grad.is_none());
    }

    #[test]
    fn rejects_mismatched_data() {
        let ens = EnsembleWeights::init_independent(&MlpSpec::new(2, &[4], 1), 2, 3).unwrap();
        let prior = PriorSpec::new(1, PriorConfig::default(), 0).unwrap();
        assert!(train(ens, &toy_data(), &prior, &toy_cfg(1)).is_err());
    }

    #[test]
    fn epoch_batches_cover_every_index_once() {
        let b = epoch_batches(10, 3, 4, 2);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_batches(5, 5, 0, 0), vec![vec![0, 1, 2, 3, 4]]);
    }
}
