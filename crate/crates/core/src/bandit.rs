//! Contextual bandits with Thompson-style exploration.
//!
//! Every round the environment draws a context together with the reward of
//! every arm. The agent sees the context, plays one arm and observes only that
//! arm's reward. Reward models are networks with one output head per arm,
//! trained on the replay buffer with all unplayed heads masked out.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{train_de, train_rde, train_rms, AnchorSet};
use crate::data::{Dataset, Targets};
use crate::degp::{sample_with_noise, FunctionBatch, SampleNoise};
use crate::error::{Error, Result};
use crate::evalx::argmax;
use crate::ndcore::Tensor;
use crate::nets::{ensemble_forward, EnsembleWeights, MlpSpec};
use crate::priorkern::{PriorConfig, PriorSpec};
use crate::rng::{child_seed, stream, Purpose};
use crate::trainer::{train, LikelihoodConfig, MeasurementPolicy, OptimizerConfig, TrainConfig};

/// One round: a context, the realized reward of every arm and the arm means
/// (the latter only for the oracle and for regret bookkeeping).
#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub context: Vec<f64>,
    pub rewards: Vec<f64>,
    pub means: Vec<f64>,
}

pub trait BanditEnv {
    fn context_dim(&self) -> usize;
    fn arms(&self) -> usize;
    /// Round `t`; a pure function of the environment seed and `t`.
    fn round(&self, t: usize) -> Round;
}

/// Wheel problem: contexts uniform on the unit disk. Arm 0 always pays
/// `mean_safe`. Inside radius `delta` the other arms pay `mean_low`; outside,
/// the arm assigned to the context's quadrant pays `mean_high` and the rest
/// `mean_low`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WheelConfig {
    pub delta: f64,
    pub mean_safe: f64,
    pub mean_low: f64,
    pub mean_high: f64,
    pub noise_std: f64,
}

impl Default for WheelConfig {
    fn default() -> Self {
        Self { delta: 0.5, mean_safe: 1.2, mean_low: 1.0, mean_high: 50.0, noise_std: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct WheelEnv {
    pub config: WheelConfig,
    seed: u64,
}

impl WheelEnv {
    pub fn new(config: WheelConfig, seed: u64) -> Result<Self> {
        if !(config.delta > 0.0 && config.delta < 1.0) || !(config.noise_std >= 0.0) {
            return Err(Error::invalid("wheel needs 0 < delta < 1 and noise_std >= 0"));
        }
        Ok(Self { config, seed })
    }

    /// Arm means at context `x`.
    pub fn means(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let mut m = vec![c.mean_safe, c.mean_low, c.mean_low, c.mean_low, c.mean_low];
        if x[0].hypot(x[1]) > c.delta {
            let arm = match (x[0] >= 0.0, x[1] >= 0.0) {
                (true, true) => 1,
                (true, false) => 2,
                (false, true) => 3,
                (false, false) => 4,
            };
            m[arm] = c.mean_high;
        }
        m
    }
}

impl BanditEnv for WheelEnv {
    fn context_dim(&self) -> usize {
        2
    }

    fn arms(&self) -> usize {
        5
    }

    fn round(&self, t: usize) -> Round {
        let mut rng = stream(self.seed, t as u64, Purpose::Environment);
        let context = loop {
            let p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                break p.to_vec();
            }
        };
        let means = self.means(&context);
        let noise = Normal::new(0.0, self.config.noise_std).expect("validated std");
        let rewards = means.iter().map(|m| m + noise.sample(&mut rng)).collect();
        Round { context, rewards, means }
    }
}

/// Mushroom problem with two arms: 0 = pass (reward 0), 1 = eat. Eating an
/// edible mushroom pays `edible`; eating a poisonous one pays `edible` or
/// `poisonous` with equal probability.
#[derive(Clone, Debug)]
pub struct MushroomEnv {
    pub features: Tensor,
    pub edible: Vec<bool>,
    pub reward_edible: f64,
    pub reward_poisonous: f64,
    seed: u64,
}

impl MushroomEnv {
    pub fn new(features: Tensor, edible: Vec<bool>, seed: u64) -> Result<Self> {
        if features.rows() != edible.len() || edible.is_empty() {
            return Err(Error::invalid("need one edibility label per feature row"));
        }
        Ok(Self { features, edible, reward_edible: 5.0, reward_poisonous: -35.0, seed })
    }

    /// Reads a CSV whose first column is `e` (edible) or `p` (poisonous) and
    /// whose remaining columns are categorical. Each categorical column is
    /// one-hot encoded over the values seen in that column, sorted.
    pub fn from_csv(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (x, edible) = parse_mushroom(&text)?;
        Self::new(x, edible, seed)
    }
}

pub(crate) fn parse_mushroom(text: &str) -> Result<(Tensor, Vec<bool>)> {
    let rows: Vec<Vec<&str>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::trim).collect())
        .collect();
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 {
        return Err(Error::Parse("mushroom CSV needs a label and at least one feature".into()));
    }
    let mut edible = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Parse(format!("line {}: expected {width} fields, got {}", i + 1, r.len())));
        }
        edible.push(match r[0] {
            "e" => true,
            "p" => false,
            other => return Err(Error::Parse(format!("line {}: label must be e or p, got {other:?}", i + 1))),
        });
    }
    let vocab: Vec<Vec<&str>> = (1..width)
        .map(|j| {
            let mut v: Vec<&str> = rows.iter().map(|r| r[j]).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let dim: usize = vocab.iter().map(Vec::len).sum();
    let mut x = Tensor::zeros(&[rows.len(), dim]);
    for (i, r) in rows.iter().enumerate() {
        let mut offset = 0;
        for (j, v) in vocab.iter().enumerate() {
            let k = v.binary_search(&r[j + 1]).expect("value is in its own vocabulary");
            x.set(i, offset + k, 1.0);
            offset += v.len();
        }
    }
    Ok((x, edible))
}

impl BanditEnv for MushroomEnv {
    fn context_dim(&self) -> usize {
        self.features.cols()
    }

    fn arms(&self) -> usize {
        2
    }

    fn round(&self, t: usize) -> Round {
        let mut rng = stream(self.seed, t as u64, Purpose::Environment);
        let i = rng.random_range(0..self.edible.len());
        let eat = if self.edible[i] || rng.random::<bool>() { self.reward_edible } else { self.reward_poisonous };
        let eat_mean = if self.edible[i] {
            self.reward_edible
        } else {
            0.5 * (self.reward_edible + self.reward_poisonous)
        };
        Round { context: self.features.row(i).to_vec(), rewards: vec![0.0, eat], means: vec![0.0, eat_mean] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentKind {
    /// One function sample from the ensemble's Gaussian process per round.
    Degp,
    /// Random member per round.
    De,
    Rde { weight_decay: f64 },
    Rms { gamma: f64 },
    Uniform,
    /// Plays the arm with the highest mean; an upper-bound reference.
    Oracle,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Degp => "degp",
            AgentKind::De => "de",
            AgentKind::Rde { .. } => "rde",
            AgentKind::Rms { .. } => "rms",
            AgentKind::Uniform => "uniform",
            AgentKind::Oracle => "oracle",
        }
    }

    fn learns(&self) -> bool {
        !matches!(self, AgentKind::Uniform | AgentKind::Oracle)
    }
}

/// Settings shared by the learning agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub members: usize,
    /// Retrain after this many new rounds; play uniformly until the first.
    pub retrain_every: usize,
    /// Optimizer steps per retrain.
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Observed rewards are multiplied by this before training.
    pub reward_scale: f64,
    pub noise_var: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_fraction: f64,
    pub samples: usize,
    pub measurement_points: usize,
    pub prior: PriorConfig,
    /// Prior draws for RMS anchors.
    pub anchor_gain: f64,
    pub anchor_bias_var: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50],
            members: 10,
            retrain_every: 50,
            train_steps: 100,
            batch_size: 64,
            lr: 1e-3,
            reward_scale: 0.02,
            noise_var: 1e-3,
            alpha: 1.0,
            beta: 0.0,
            lambda_fraction: 0.05,
            samples: 64,
            measurement_points: 0,
            prior: PriorConfig::default(),
            anchor_gain: 2.0,
            anchor_bias_var: 0.01,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 || self.retrain_every == 0 || self.batch_size == 0 {
            return Err(Error::invalid("members, retrain_every and batch_size must be positive"));
        }
        if !(self.reward_scale > 0.0) || !(self.noise_var > 0.0) {
            return Err(Error::invalid("reward_scale and noise_var must be positive"));
        }
        self.prior.validate()
    }
}

/// Observed transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub context: Vec<f64>,
    pub arm: usize,
    pub reward: f64,
}

pub struct Agent {
    pub kind: AgentKind,
    pub config: AgentConfig,
    pub buffer: Vec<Transition>,
    pub model: Option<EnsembleWeights>,
    pub retrains: usize,
    arms: usize,
    context_dim: usize,
    seed: u64,
    init: EnsembleWeights,
    prior: PriorSpec,
    anchors: Option<AnchorSet>,
    since_retrain: usize,
}

impl Agent {
    pub fn new(kind: AgentKind, config: AgentConfig, context_dim: usize, arms: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if arms == 0 {
            return Err(Error::invalid("need at least one arm"));
        }
        let spec = MlpSpec::new(context_dim, &config.hidden, arms);
        let init = EnsembleWeights::init_independent(&spec, config.members, child_seed(seed, 0))?;
        let prior = PriorSpec::new(context_dim, config.prior.clone(), child_seed(seed, 1))?;
        let anchors = match kind {
            AgentKind::Rms { .. } => {
                Some(AnchorSet::draw(&init, config.anchor_gain, config.anchor_bias_var, child_seed(seed, 2)))
            }
            _ => None,
        };
        Ok(Self {
            kind,
            config,
            buffer: Vec::new(),
            model: None,
            retrains: 0,
            arms,
            context_dim,
            seed,
            init,
            prior,
            anchors,
            since_retrain: 0,
        })
    }

    /// Arm to play at round `t`.
    pub fn act(&self, t: usize, round: &Round) -> Result<usize> {
        if round.context.len() != self.context_dim {
            return Err(Error::invalid("context has the wrong dimension"));
        }
        let mut rng = stream(self.seed, t as u64, Purpose::Agent);
        if self.arms == 1 {
            return Ok(0);
        }
        if self.kind == AgentKind::Oracle {
            return Ok(argmax(&round.means).0);
        }
        let model = match (&self.model, self.kind.learns()) {
            (Some(m), true) => m,
            _ => return Ok(rng.random_range(0..self.arms)),
        };
        let x = Tensor::matrix(1, self.context_dim, round.context.clone())?;
        let f = match self.kind {
            AgentKind::Degp => thompson_sample(model, &x, self.config.lambda_fraction, &mut rng)?,
            _ => {
                let idx: Vec<usize> = (0..model.len()).collect();
                let i = *idx.choose(&mut rng).expect("nonempty ensemble");
                model.member_forward(i, &x)?.into_data()
            }
        };
        Ok(argmax(&f).0)
    }

    /// Records a transition and retrains when due.
    pub fn observe(&mut self, tr: Transition) -> Result<()> {
        self.buffer.push(tr);
        self.since_retrain += 1;
        if self.kind.learns() && self.since_retrain >= self.config.retrain_every {
            self.retrain()?;
            self.since_retrain = 0;
        }
        Ok(())
    }

    /// Masked regression data: one row per transition with only the played
    /// head observed.
    pub fn replay_dataset(&self, idx: &[usize]) -> Result<Dataset> {
        let n = idx.len();
        let mut x = Tensor::zeros(&[n, self.context_dim]);
        let mut y = Tensor::zeros(&[n, self.arms]);
        let mut mask = Tensor::zeros(&[n, self.arms]);
        for (r, &i) in idx.iter().enumerate() {
            let tr = &self.buffer[i];
            x.row_mut(r).copy_from_slice(&tr.context);
            y.set(r, tr.arm, tr.reward * self.config.reward_scale);
            mask.set(r, tr.arm, 1.0);
        }
        Dataset::new(x, Targets::Real { y, mask: Some(mask) })
    }

    fn retrain(&mut self) -> Result<()> {
        let c = &self.config;
        let k = self.retrains as u64;
        let seed = child_seed(self.seed, 1000 + k);
        // `train_steps` minibatches resampled from the buffer, visited once.
        let mut rng = stream(seed, 0, Purpose::Data);
        let bs = c.batch_size.min(self.buffer.len());
        let idx: Vec<usize> = (0..c.train_steps * bs).map(|_| rng.random_range(0..self.buffer.len())).collect();
        let data = self.replay_dataset(&idx)?;
        let mut cfg = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: c.noise_var }, OptimizerConfig::adam(c.lr), 1);
        cfg.batch_size = bs;
        cfg.seed = seed;
        cfg.alpha = c.alpha;
        cfg.beta = c.beta;
        cfg.lambda_fraction = c.lambda_fraction;
        cfg.samples = c.samples;
        let start = self.model.take().unwrap_or_else(|| self.init.clone());
        let out = match &self.kind {
            AgentKind::Degp => {
                cfg.measurement = MeasurementPolicy::data_box(c.measurement_points, &data.x);
                train(start, &data, &self.prior, &cfg)?
            }
            AgentKind::De => train_de(start, &data, &cfg)?,
            AgentKind::Rde { weight_decay } => train_rde(start, &data, &cfg, *weight_decay)?,
            AgentKind::Rms { gamma } => {
                train_rms(start, &data, &cfg, *gamma, self.anchors.as_ref().expect("rms agents carry anchors"))?
            }
            AgentKind::Uniform | AgentKind::Oracle => unreachable!("non-learning agents never retrain"),
        };
        if let Some(msg) = &out.aborted {
            log::warn!("bandit retrain {k} stopped early: {msg}");
        }
        self.model = Some(out.weights);
        self.retrains += 1;
        Ok(())
    }
}

/// One draw of the `C` outputs at a single input from the ensemble's GP.
pub fn thompson_sample<R: Rng + ?Sized>(ens: &EnsembleWeights, x: &Tensor, fraction: f64, rng: &mut R) -> Result<Vec<f64>> {
    let batch = FunctionBatch::from_raw(&ensemble_forward(ens, x)?, fraction)?;
    let noise = SampleNoise::draw(1, batch.members(), batch.dim(), rng);
    Ok(sample_with_noise(&batch.mean, &batch.gc, batch.lambda, &noise)?.into_data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub method: String,
    pub seed: u64,
    /// Cumulative reward after each round.
    pub cumulative: Vec<f64>,
    pub arms: Vec<usize>,
}

impl Trace {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Plays `rounds` rounds of `env` with one agent.
pub fn run_agent(env: &dyn BanditEnv, kind: AgentKind, config: &AgentConfig, rounds: usize, seed: u64) -> Result<Trace> {
    let mut agent = Agent::new(kind.clone(), config.clone(), env.context_dim(), env.arms(), seed)?;
    let mut cumulative = Vec::with_capacity(rounds);
    let mut arms = Vec::with_capacity(rounds);
    let mut total = 0.0;
    for t in 0..rounds {
        let round = env.round(t);
        let arm = agent.act(t, &round)?;
        let reward = round.rewards[arm];
        total += reward;
        cumulative.push(total);
        arms.push(arm);
        agent.observe(Transition { context: round.context, arm, reward })?;
    }
    Ok(Trace { method: kind.name().to_string(), seed, cumulative, arms })
}

/// Runs every agent against every seed; the environment for seed `s` is
/// built by `make_env(s)` so agents face the same rounds.
pub fn run_experiment<F>(make_env: F, agents: &[AgentKind], config: &AgentConfig, rounds: usize, seeds: &[u64]) -> Result<Vec<Trace>>
where
    F: Fn(u64) -> Result<Box<dyn BanditEnv>>,
{
    let mut out = Vec::new();
    for &s in seeds {
        let env = make_env(s)?;
        for kind in agents {
            let mut trace = run_agent(env.as_ref(), kind.clone(), config, rounds, child_seed(s, 7))?;
            trace.seed = s;
            out.push(trace);
        }
    }
    Ok(out)
}

/// Seed-mean cumulative trace for `method`.
pub fn mean_trace(traces: &[Trace], method: &str) -> Option<Vec<f64>> {
    let sel: Vec<&Trace> = traces.iter().filter(|t| t.method == method).collect();
    let first = sel.first()?;
    let mut mean = vec![0.0; first.cumulative.len()];
    for t in &sel {
        for (m, v) in mean.iter_mut().zip(&t.cumulative) {
            *m += v / sel.len() as f64;
        }
    }
    Some(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AgentConfig {
        AgentConfig { hidden: vec![8], members: 3, retrain_every: 10, train_steps: 5, batch_size: 8, samples: 8, ..Default::default() }
    }

    struct TwoArm;
    impl BanditEnv for TwoArm {
        fn context_dim(&self) -> usize {
            1
        }
        fn arms(&self) -> usize {
            2
        }
        fn round(&self, _t: usize) -> Round {
            Round { context: vec![0.0], rewards: vec![1.0, 0.0], means: vec![1.0, 0.0] }
        }
    }

    #[test]
    fn wheel_means() {
        let env = WheelEnv::new(WheelConfig::default(), 0).unwrap();
        assert_eq!(env.means(&[0.1, 0.1]), vec![1.2, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(env.means(&[0.6, 0.6])[1], 50.0);
        assert_eq!(env.means(&[0.6, -0.6])[2], 50.0);
        assert_eq!(env.means(&[-0.6, 0.6])[3], 50.0);
        assert_eq!(env.means(&[-0.6, -0.6])[4], 50.0);
        let r = env.round(3);
        assert_eq!(r, env.round(3));
        assert!(r.context[0].hypot(r.context[1]) <= 1.0);
    }

    #[test]
    fn single_arm_always_zero() {
        let agent = Agent::new(AgentKind::Degp, tiny(), 2, 1, 0).unwrap();
        let r = Round { context: vec![0.3, 0.1], rewards: vec![1.0], means: vec![1.0] };
        assert!((0..20).all(|t| agent.act(t, &r).unwrap() == 0));
    }

    #[test]
    fn collapsed_posterior_plays_its_argmax() {
        let mut agent = Agent::new(AgentKind::Degp, tiny(), 2, 5, 0).unwrap();
        let mut ens = agent.init.clone();
        for m in &mut ens.members {
            for t in m.tensors_mut() {
                t.data_mut().fill(0.0);
            }
            m.layers.last_mut().unwrap().bias.set(0, 2, 1.0);
        }
        agent.model = Some(ens);
        let r = Round { context: vec![0.3, 0.1], rewards: vec![0.0; 5], means: vec![0.0; 5] };
        assert!((0..50).all(|t| agent.act(t, &r).unwrap() == 2));
    }

    #[test]
    fn exchangeable_heads_are_played_uniformly() {
        // Identical members with equal outputs: only the λ noise decides.
        let mut agent = Agent::new(AgentKind::Degp, AgentConfig { lambda_fraction: 1.0, ..tiny() }, 2, 4, 0).unwrap();
        let mut ens = agent.init.clone();
        for (i, m) in ens.members.iter_mut().enumerate() {
            for t in m.tensors_mut() {
                t.data_mut().fill(0.0);
            }
            let b = &mut m.layers.last_mut().unwrap().bias;
            b.data_mut().fill(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        agent.model = Some(ens);
        let r = Round { context: vec![0.3, 0.1], rewards: vec![0.0; 4], means: vec![0.0; 4] };
        let n = 10_000;
        let mut counts = [0usize; 4];
        for t in 0..n {
            counts[agent.act(t, &r).unwrap()] += 1;
        }
        let p = 0.25;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn uniform_agent_on_two_arms() {
        let tr = run_agent(&TwoArm, AgentKind::Uniform, &tiny(), 4000, 3).unwrap();
        let sd = (4000.0f64 * 0.25).sqrt();
        assert!((tr.total() - 2000.0).abs() < 4.0 * sd);
        let oracle = run_agent(&TwoArm, AgentKind::Oracle, &tiny(), 100, 3).unwrap();
        assert_eq!(oracle.total(), 100.0);
        assert!(tr.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn warmup_matches_uniform_and_retrains_on_cadence() {
        let env = WheelEnv::new(WheelConfig::default(), 1).unwrap();
        let cfg = tiny();
        let u = run_agent(&env, AgentKind::Uniform, &cfg, 10, 5).unwrap();
        let mut agent = Agent::new(AgentKind::De, cfg.clone(), 2, 5, 5).unwrap();
        let mut arms = Vec::new();
        for t in 0..25 {
            let r = env.round(t);
            let a = agent.act(t, &r).unwrap();
            arms.push(a);
            agent.observe(Transition { context: r.context, arm: a, reward: r.rewards[a] }).unwrap();
            assert_eq!(agent.retrains, (t + 1) / 10);
        }
        assert_eq!(&arms[..10], &u.arms[..]);
    }

    #[test]
    fn replay_masks_unplayed_heads() {
        let mut agent = Agent::new(AgentKind::Degp, tiny(), 2, 3, 0).unwrap();
        agent.buffer.push(Transition { context: vec![0.1, 0.2], arm: 1, reward: 10.0 });
        let d = agent.replay_dataset(&[0]).unwrap();
        let Targets::Real { y, mask } = d.targets else { panic!() };
        assert_eq!(mask.unwrap().data(), &[0.0, 1.0, 0.0]);
        assert!((y.at(0, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn runs_are_reproducible() {
        let env = WheelEnv::new(WheelConfig::default(), 2).unwrap();
        let a = run_agent(&env, AgentKind::Degp, &tiny(), 30, 9).unwrap();
        let b = run_agent(&env, AgentKind::Degp, &tiny(), 30, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mushroom_parsing() {
        let (x, e) = parse_mushroom("e,a,x\np,b,x\ne,a,y\n").unwrap();
        assert_eq!(e, vec![true, false, true]);
        assert_eq!(x.dims2().unwrap(), (3, 4));
        assert_eq!(x.row(1), &[0.0, 1.0, 1.0, 0.0]);
        assert!(parse_mushroom("q,a\n").is_err());
        assert!(parse_mushroom("e,a\np\n").is_err());
        let env = MushroomEnv::new(x, e, 0).unwrap();
        for t in 0..50 {
            let r = env.round(t);
            assert_eq!(r.rewards[0], 0.0);
            assert!(r.rewards[1] == 5.0 || r.rewards[1] == -35.0);
        }
    }
}
