//! 1-D regression on `y = sin 2x + ε` with a perturbed rightmost target.
//!
//! Files: `regress1d_data_seed{s}.csv` (x, y), `regress1d_grid_seed{s}.csv`
//! (x, mean, std, method) and `regress1d_summary.json`.

use degp_core::baselines::nngp_regression_baseline;
use degp_core::data::{Dataset, Targets};
use degp_core::degp::FunctionBatch;
use degp_core::evalx::{Observation, Predictive};
use degp_core::ndcore::Tensor;
use degp_core::nets::ensemble_forward;
use degp_core::rng::{stream, Purpose};
use degp_core::trainer::LikelihoodConfig;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{fit, method_index, predict, SeedPlan};
use crate::config::{ExperimentConfig, Method, Regress1dConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;

/// Inputs beyond this magnitude count as far from the data.
pub const FAR: f64 = 1.8;

pub fn make_data(r: &Regress1dConfig, seed: u64) -> CliResult<Dataset> {
    let mut rng = stream(seed, 0, Purpose::Data);
    let mut x: Vec<f64> = (0..r.points).map(|_| rng.random_range(r.low..r.high)).collect();
    x.sort_by(f64::total_cmp);
    let noise = Normal::new(0.0, r.noise_std).map_err(|e| CliError::Config(e.to_string()))?;
    let mut y: Vec<f64> = x.iter().map(|&v| (2.0 * v).sin() + noise.sample(&mut rng)).collect();
    if let Some(last) = y.last_mut() {
        *last += r.perturb;
    }
    let n = x.len();
    Ok(Dataset::regression(Tensor::matrix(n, 1, x)?, Tensor::matrix(n, 1, y)?)?)
}

pub fn grid(r: &Regress1dConfig) -> Tensor {
    let k = r.grid_points;
    let xs = (0..k).map(|i| r.grid_low + (r.grid_high - r.grid_low) * i as f64 / (k - 1) as f64).collect();
    Tensor::matrix(k, 1, xs).expect("grid shape")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodResult {
    pub seed: u64,
    pub method: String,
    #[serde(skip)]
    pub mean: Vec<f64>,
    #[serde(skip)]
    pub std: Vec<f64>,
    /// Mean diagonal of the function-space covariance on the grid: the
    /// member covariance, plus λ for DE-GP.
    pub kernel_trace_mean: Option<f64>,
    /// Largest absolute difference between two members anywhere on the grid.
    pub max_member_discrepancy: Option<f64>,
    pub std_far: f64,
    pub std_train: f64,
    pub aborted: Option<String>,
}

fn noise_var(cfg: &ExperimentConfig) -> CliResult<f64> {
    match cfg.train.likelihood {
        LikelihoodConfig::Gaussian { noise_var } => Ok(noise_var),
        _ => Err(CliError::Config("regress1d needs a gaussian likelihood".into())),
    }
}

fn mean_std(p: &Predictive) -> (Vec<f64>, Vec<f64>) {
    match p {
        Predictive::Regression { mean, var, .. } => (mean.clone(), var.iter().map(|v| v.sqrt()).collect()),
        Predictive::Classification { .. } => unreachable!("regression predictive"),
    }
}

fn far_and_train(g: &Tensor, std: &[f64], train_std: &[f64]) -> (f64, f64) {
    let far: Vec<f64> = g.data().iter().zip(std).filter(|(x, _)| x.abs() > FAR).map(|(_, s)| *s).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    (mean(&far), mean(train_std))
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Dataset, Vec<MethodResult>)> {
    let seeds = SeedPlan::new(seed);
    let data = make_data(&cfg.regress1d, seeds.data)?;
    let g = grid(&cfg.regress1d);
    let nv = noise_var(cfg)?;
    let obs = Observation::Gaussian { noise_var: nv };
    let Targets::Real { y, .. } = &data.targets else { unreachable!("regression data") };
    let mut results = Vec::new();
    for &method in &cfg.methods {
        let res = if method == Method::Nngp {
            let depth = cfg.model.hidden.len();
            let (w, b) = (cfg.prior.sigma_w2, cfg.prior.sigma_b2);
            let on_grid = nngp_regression_baseline(&data.x, y.data(), &g, depth, w, b, nv)?;
            let at_train = nngp_regression_baseline(&data.x, y.data(), &data.x, depth, w, b, nv)?;
            let std: Vec<f64> = on_grid.var.iter().map(|v| (v + nv).sqrt()).collect();
            let train_std: Vec<f64> = at_train.var.iter().map(|v| (v + nv).sqrt()).collect();
            let (std_far, std_train) = far_and_train(&g, &std, &train_std);
            MethodResult {
                seed,
                method: method.name().into(),
                mean: on_grid.mean,
                std,
                kernel_trace_mean: None,
                max_member_discrepancy: None,
                std_far,
                std_train,
                aborted: None,
            }
        } else {
            let out = fit(cfg, method, &data, &cfg.train, &seeds)?;
            let w = &out.weights;
            let idx = method_index(method);
            let (mean, std) = mean_std(&predict(cfg, method, w, &g, obs, seed, 2 * idx)?.predictive);
            let (_, train_std) = mean_std(&predict(cfg, method, w, &data.x, obs, seed, 2 * idx + 1)?.predictive);
            let raw = ensemble_forward(w, &g)?;
            let fb = FunctionBatch::from_raw(&raw, cfg.train.lambda_fraction)?;
            let member_trace = fb.gc.norm_sq() / (fb.members() * fb.dim()) as f64;
            let trace = if method == Method::Degp { member_trace + fb.lambda } else { member_trace };
            let mut disc = 0.0f64;
            for i in 0..raw.rows() {
                for j in i + 1..raw.rows() {
                    for (a, b) in raw.row(i).iter().zip(raw.row(j)) {
                        disc = disc.max((a - b).abs());
                    }
                }
            }
            let (std_far, std_train) = far_and_train(&g, &std, &train_std);
            MethodResult {
                seed,
                method: method.name().into(),
                mean,
                std,
                kernel_trace_mean: Some(trace),
                max_member_discrepancy: Some(disc),
                std_far,
                std_train,
                aborted: out.aborted,
            }
        };
        results.push(res);
    }
    Ok((data, results))
}

#[derive(Serialize)]
struct GridRow<'a> {
    x: f64,
    mean: f64,
    std: f64,
    method: &'a str,
}

#[derive(Serialize)]
struct DataRow {
    x: f64,
    y: f64,
}

pub fn run(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<Vec<MethodResult>> {
    let g = grid(&cfg.regress1d);
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = std::time::Instant::now();
        let (data, results) = run_seed(cfg, seed)?;
        dir.record_time(format!("seed {seed}"), t0.elapsed().as_secs_f64());
        let Targets::Real { y, .. } = &data.targets else { unreachable!("regression data") };
        let rows: Vec<DataRow> = data.x.data().iter().zip(y.data()).map(|(&x, &y)| DataRow { x, y }).collect();
        dir.write_csv(&format!("regress1d_data_seed{seed}.csv"), &rows)?;
        let mut rows = Vec::new();
        for r in &results {
            for (k, &x) in g.data().iter().enumerate() {
                rows.push(GridRow { x, mean: r.mean[k], std: r.std[k], method: &r.method });
            }
        }
        dir.write_csv(&format!("regress1d_grid_seed{seed}.csv"), &rows)?;
        all.extend(results);
    }
    dir.write_json("regress1d_summary.json", &all)?;
    Ok(all)
}
