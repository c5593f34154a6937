//! Experiment runners. Each writes its result files into an [`OutputDir`]
//! and returns the values the validation suites inspect.

pub mod bandit;
pub mod classify;
pub mod kernel_check;
pub mod regress1d;
pub mod uci;

use std::path::Path;
use std::time::Instant;

use degp_core::baselines::{train_de, train_rde, train_rms, AnchorSet};
use degp_core::data::Dataset;
use degp_core::evalx::{posterior_predictive, Model, Observation, PredictiveSummary};
use degp_core::ndcore::Tensor;
use degp_core::nets::{EnsembleWeights, MlpSpec};
use degp_core::priorkern::PriorSpec;
use degp_core::rng::{child_seed, stream, Purpose};
use degp_core::trainer::{train, TrainConfig, TrainOutcome};

use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::error::{CliError, CliResult};
use crate::output::{Manifest, OutputDir};

/// What a run produced and which checks failed.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: Manifest,
    /// Hard validation failures; a nonempty list means a nonzero exit.
    pub failures: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunReport> {
    let mut dir = OutputDir::create(out)?;
    let t0 = Instant::now();
    let failures = match cfg.experiment {
        ExperimentKind::Regress1d => {
            regress1d::run(cfg, &mut dir)?;
            Vec::new()
        }
        ExperimentKind::Uci => {
            uci::run(cfg, &mut dir)?;
            Vec::new()
        }
        ExperimentKind::ClassifySynth => {
            classify::run(cfg, &mut dir)?;
            Vec::new()
        }
        ExperimentKind::Bandit => {
            bandit::run(cfg, &mut dir)?;
            Vec::new()
        }
        ExperimentKind::KernelCheck => kernel_check::run(cfg, &mut dir)?.failures(),
    };
    dir.record_time("total", t0.elapsed().as_secs_f64());
    let manifest = dir.finish(cfg)?;
    Ok(RunReport { manifest, failures })
}

/// Seeds derived from an experiment seed, shared by all methods so they start
/// from the same initialization.
pub struct SeedPlan {
    pub init: u64,
    pub prior: u64,
    pub train: u64,
    pub anchors: u64,
    pub data: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            init: child_seed(seed, 1),
            prior: child_seed(seed, 2),
            train: child_seed(seed, 3),
            anchors: child_seed(seed, 4),
            data: child_seed(seed, 5),
        }
    }
}

pub fn init_ensemble(cfg: &ExperimentConfig, input_dim: usize, output_dim: usize, seed: u64) -> CliResult<EnsembleWeights> {
    let spec = MlpSpec::new(input_dim, &cfg.model.hidden, output_dim);
    let ens = if cfg.model.trunk_depth > 0 {
        EnsembleWeights::init_shared(&spec, cfg.model.trunk_depth, cfg.model.members, seed)?
    } else {
        EnsembleWeights::init_independent(&spec, cfg.model.members, seed)?
    };
    Ok(ens)
}

/// Trains `method` on `data` from the shared initialization. Numeric aborts
/// are logged and the last finite weights kept.
pub fn fit(
    cfg: &ExperimentConfig,
    method: Method,
    data: &Dataset,
    train_cfg: &TrainConfig,
    seeds: &SeedPlan,
) -> CliResult<TrainOutcome> {
    let ens = init_ensemble(cfg, data.input_dim(), data.output_dim(), seeds.init)?;
    let b = &cfg.baselines;
    let out = match method {
        Method::Degp => {
            let prior = PriorSpec::new(data.input_dim(), cfg.prior.clone(), seeds.prior)?;
            train(ens, data, &prior, train_cfg)?
        }
        Method::De => train_de(ens, data, train_cfg)?,
        Method::Rde => train_rde(ens, data, train_cfg, b.weight_decay)?,
        Method::Rms => {
            let anchors = AnchorSet::draw(&ens, b.anchor_gain, b.anchor_bias_var, seeds.anchors);
            train_rms(ens, data, train_cfg, b.gamma(), &anchors)?
        }
        Method::Nngp => return Err(CliError::Config("nngp has no trainable ensemble".into())),
    };
    if let Some(msg) = &out.aborted {
        log::warn!("{} training stopped early: {msg}", method.name());
    }
    Ok(out)
}

/// Predictive at `x`: member samples for ensemble baselines, GP draws for
/// DE-GP.
pub fn predict(
    cfg: &ExperimentConfig,
    method: Method,
    weights: &EnsembleWeights,
    x: &Tensor,
    obs: Observation,
    seed: u64,
    index: u64,
) -> CliResult<PredictiveSummary> {
    let model = match method {
        Method::Degp => Model::Gp { ens: weights, fraction: cfg.train.lambda_fraction, samples: cfg.eval.predictive_samples },
        _ => Model::Ensemble(weights),
    };
    Ok(posterior_predictive(model, x, obs, &mut stream(seed, index, Purpose::Predict))?)
}

fn method_index(m: Method) -> u64 {
    m as u64
}
