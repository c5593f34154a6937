//! Multiclass classification on Gaussian blobs with an out-of-distribution
//! ring.
//!
//! Files: `classify_metrics.csv` (method, seed, nll, accuracy, ece,
//! temperature) and `classify_curves.csv` (method, seed, tau, error, count).
//! An empty `error` cell means no point fell below that threshold.

use degp_core::data::Dataset;
use degp_core::evalx::{
    argmax, classification_metrics, error_vs_uncertainty_with_ood, threshold_grid, Observation, Predictive,
};
use degp_core::ndcore::Tensor;
use degp_core::rng::{stream, Purpose};
use degp_core::trainer::LikelihoodConfig;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{fit, method_index, predict, SeedPlan};
use crate::config::{ClassifyConfig, ExperimentConfig, Method};
use crate::error::CliResult;
use crate::output::OutputDir;

pub fn blobs(c: &ClassifyConfig, n: usize, seed: u64, index: u64) -> CliResult<Dataset> {
    let mut rng = stream(seed, index, Purpose::Data);
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..c.classes);
        let angle = 2.0 * std::f64::consts::PI * k as f64 / c.classes as f64;
        for center in [c.radius * angle.cos(), c.radius * angle.sin()] {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(center + c.cluster_std * z);
        }
        labels.push(k);
    }
    Ok(Dataset::classification(Tensor::matrix(n, 2, x)?, labels, c.classes)?)
}

pub fn ood_ring(c: &ClassifyConfig, seed: u64) -> CliResult<Tensor> {
    let mut rng = stream(seed, 2, Purpose::Data);
    let mut x = Vec::with_capacity(2 * c.ood_points);
    for _ in 0..c.ood_points {
        let r = rng.random_range(c.ood_inner..=c.ood_outer);
        let a = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        x.extend([r * a.cos(), r * a.sin()]);
    }
    Ok(Tensor::matrix(c.ood_points, 2, x)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub nll: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub method: String,
    pub seed: u64,
    pub tau: f64,
    pub error: Option<f64>,
    pub count: usize,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Vec<MetricsRow>, Vec<CurveRow>)> {
    let seeds = SeedPlan::new(seed);
    let c = &cfg.classify;
    let train = blobs(c, c.train_points, seeds.data, 0)?;
    let test = blobs(c, c.test_points, seeds.data, 1)?;
    let ood = ood_ring(c, seeds.data)?;
    let degp_core::data::Targets::Labels { labels, .. } = &test.targets else { unreachable!("labels") };
    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    for &method in &cfg.methods {
        let mut tc = cfg.train.clone();
        tc.seed = seeds.train;
        if method != Method::Degp {
            // Baselines keep the configured temperature fixed.
            if let LikelihoodConfig::Categorical { temperature, .. } = tc.likelihood {
                tc.likelihood = LikelihoodConfig::Categorical { temperature, learn_temperature: false };
            }
        }
        let out = fit(cfg, method, &train, &tc, &seeds)?;
        let temperature = out.temperature();
        let obs = Observation::Categorical { temperature };
        let idx = method_index(method);
        let p_in = predict(cfg, method, &out.weights, &test.x, obs, seed, 2 * idx)?;
        let p_ood = predict(cfg, method, &out.weights, &ood, obs, seed, 2 * idx + 1)?;
        let Predictive::Classification { probs, .. } = &p_in.predictive else { unreachable!("classification") };
        let m = classification_metrics(probs, labels)?;
        let correct: Vec<bool> = labels.iter().enumerate().map(|(i, &l)| argmax(probs.row(i)).0 == l).collect();
        let taus = threshold_grid(cfg.eval.curve_points);
        let curve = error_vs_uncertainty_with_ood(&correct, &p_in.uncertainty, &p_ood.uncertainty, &taus)?;
        metrics.push(MetricsRow { method: method.name().into(), seed, nll: m.nll, accuracy: m.accuracy, ece: m.ece, temperature });
        curves.extend(curve.into_iter().map(|p| CurveRow {
            method: method.name().into(),
            seed,
            tau: p.tau,
            error: p.error,
            count: p.count,
        }));
    }
    Ok((metrics, curves))
}

pub fn run(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<Vec<MetricsRow>> {
    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = std::time::Instant::now();
        let (m, c) = run_seed(cfg, seed)?;
        dir.record_time(format!("seed {seed}"), t0.elapsed().as_secs_f64());
        metrics.extend(m);
        curves.extend(c);
    }
    dir.write_csv("classify_metrics.csv", &metrics)?;
    dir.write_csv("classify_curves.csv", &curves)?;
    Ok(metrics)
}
