//! K-fold regression on tabular datasets.
//!
//! Inputs and targets are standardized with training-fold statistics; NLL and
//! RMSE are reported in the original target units. Files: `uci_folds.csv`
//! (dataset, method, seed, fold, alpha, nll, rmse) and `uci_summary.json`.

use degp_core::data::Dataset;
use degp_core::evalx::{regression_metrics, Observation, Predictive};
use degp_core::ndcore::Tensor;
use degp_core::rng::{stream, Purpose};
use degp_core::trainer::{LikelihoodConfig, MeasurementPolicy, TrainConfig};
use rand::seq::SliceRandom;
use serde::Serialize;

use super::{fit, method_index, predict, SeedPlan};
use crate::config::{data_path, ExperimentConfig, Method, UciDataset};
use crate::datasets::{column_stats, load_regression_csv, standardize};
use crate::error::CliResult;
use crate::output::OutputDir;

/// Fold id of every row: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, 0, Purpose::Folds));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub fold: usize,
    pub alpha: f64,
    pub nll: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub dataset: String,
    pub method: String,
    pub nll_mean: f64,
    pub nll_se: f64,
    pub rmse_mean: f64,
    pub rmse_se: f64,
    pub runs: usize,
}

struct Split {
    train: Dataset,
    test_x: Tensor,
    test_y: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
}

fn split(x: &Tensor, y: &Tensor, train_idx: &[usize], test_idx: &[usize]) -> CliResult<Split> {
    let xt = x.select_rows(train_idx)?;
    let yt = y.select_rows(train_idx)?;
    let (xm, xs) = column_stats(&xt);
    let (ym, ys) = column_stats(&yt);
    let train = Dataset::regression(standardize(&xt, &xm, &xs), standardize(&yt, &ym, &ys))?;
    Ok(Split {
        train,
        test_x: standardize(&x.select_rows(test_idx)?, &xm, &xs),
        test_y: y.select_rows(test_idx)?.into_data(),
        y_mean: ym[0],
        y_sd: ys[0],
    })
}

fn train_cfg(cfg: &ExperimentConfig, ds: &UciDataset, train: &Dataset, alpha: f64, seed: u64) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.likelihood = LikelihoodConfig::Gaussian { noise_var: ds.noise_var };
    t.measurement = MeasurementPolicy::data_box(cfg.uci.measurement_points, &train.x);
    t.alpha = alpha;
    t.seed = seed;
    t
}

/// NLL and RMSE in original units.
fn evaluate(cfg: &ExperimentConfig, method: Method, s: &Split, out: &degp_core::trainer::TrainOutcome, nv: f64, seed: u64, idx: u64) -> CliResult<(f64, f64)> {
    let p = predict(cfg, method, &out.weights, &s.test_x, Observation::Gaussian { noise_var: nv }, seed, idx)?;
    let Predictive::Regression { mean, var, .. } = p.predictive else { unreachable!("regression predictive") };
    let mean: Vec<f64> = mean.iter().map(|m| m * s.y_sd + s.y_mean).collect();
    let var: Vec<f64> = var.iter().map(|v| v * s.y_sd * s.y_sd).collect();
    let m = regression_metrics(&mean, &var, &s.test_y)?;
    Ok((m.nll, m.rmse))
}

pub fn run_dataset(cfg: &ExperimentConfig, ds: &UciDataset, seed: u64) -> CliResult<Vec<FoldResult>> {
    let table = load_regression_csv(&data_path(&cfg.data_root, &ds.path), ds.target_column)?;
    let n = table.x.rows();
    let k = cfg.uci.folds;
    let folds = fold_assignment(n, k, seed);
    let seeds = SeedPlan::new(seed);
    let mut out = Vec::new();
    for fold in 0..k {
        let train_idx: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let s = split(&table.x, &table.y, &train_idx, &test_idx)?;
        for &method in &cfg.methods {
            let fold_seed = degp_core::rng::child_seed(seeds.train, fold as u64);
            let alpha = match (method, cfg.uci.alpha_grid.as_slice()) {
                (Method::Degp, [a]) => *a,
                (Method::Degp, _) => select_alpha(cfg, ds, &table.x, &table.y, &train_idx, fold_seed)?,
                _ => cfg.train.alpha,
            };
            let tc = train_cfg(cfg, ds, &s.train, alpha, fold_seed);
            let trained = fit(cfg, method, &s.train, &tc, &seeds)?;
            let idx = 100 * fold as u64 + method_index(method);
            let (nll, rmse) = evaluate(cfg, method, &s, &trained, ds.noise_var, seed, idx)?;
            log::info!("{} {} seed {seed} fold {fold}: nll {nll:.4} rmse {rmse:.4}", ds.name, method.name());
            out.push(FoldResult { dataset: ds.name.clone(), method: method.name().into(), seed, fold, alpha, nll, rmse });
        }
    }
    Ok(out)
}

/// Chooses α by validation NLL on the last fifth of a seeded shuffle of the
/// training part.
fn select_alpha(cfg: &ExperimentConfig, ds: &UciDataset, x: &Tensor, y: &Tensor, train_idx: &[usize], seed: u64) -> CliResult<f64> {
    let mut idx = train_idx.to_vec();
    idx.shuffle(&mut stream(seed, 1, Purpose::Folds));
    let cut = idx.len() - idx.len() / 5;
    let s = split(x, y, &idx[..cut], &idx[cut..])?;
    let seeds = SeedPlan::new(seed);
    let mut best = (f64::INFINITY, cfg.uci.alpha_grid[0]);
    for (i, &alpha) in cfg.uci.alpha_grid.iter().enumerate() {
        let tc = train_cfg(cfg, ds, &s.train, alpha, seed);
        let trained = fit(cfg, Method::Degp, &s.train, &tc, &seeds)?;
        let (nll, _) = evaluate(cfg, Method::Degp, &s, &trained, ds.noise_var, seed, 1000 + i as u64)?;
        if nll < best.0 {
            best = (nll, alpha);
        }
    }
    Ok(best.1)
}

pub fn summarize(rows: &[FoldResult]) -> Vec<Summary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.dataset.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, method)| {
            let sel: Vec<&FoldResult> = rows.iter().filter(|r| r.dataset == dataset && r.method == method).collect();
            let stats = |f: fn(&FoldResult) -> f64| {
                let n = sel.len() as f64;
                let m = sel.iter().map(|r| f(r)).sum::<f64>() / n;
                let var = sel.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (m, (var / n).sqrt())
            };
            let (nll_mean, nll_se) = stats(|r| r.nll);
            let (rmse_mean, rmse_se) = stats(|r| r.rmse);
            Summary { dataset, method, nll_mean, nll_se, rmse_mean, rmse_se, runs: sel.len() }
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<Vec<Summary>> {
    let mut rows = Vec::new();
    for ds in &cfg.uci.datasets {
        for &seed in &cfg.seeds {
            let t0 = std::time::Instant::now();
            rows.extend(run_dataset(cfg, ds, seed)?);
            dir.record_time(format!("{} seed {seed}", ds.name), t0.elapsed().as_secs_f64());
        }
    }
    dir.write_csv("uci_folds.csv", &rows)?;
    let summary = summarize(&rows);
    dir.write_json("uci_summary.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use degp_core::data::Targets;

    #[test]
    fn folds_partition_evenly_and_deterministically() {
        let f = fold_assignment(23, 5, 7);
        assert_eq!(f, fold_assignment(23, 5, 7));
        assert_ne!(f, fold_assignment(23, 5, 8));
        let counts: Vec<usize> = (0..5).map(|k| f.iter().filter(|&&v| v == k).count()).collect();
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
    }

    #[test]
    fn split_uses_train_statistics() {
        let x = Tensor::matrix(4, 1, vec![0.0, 2.0, 4.0, 10.0]).unwrap();
        let y = Tensor::matrix(4, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let s = split(&x, &y, &[0, 1, 2], &[3]).unwrap();
        let sd = (8.0f64 / 3.0).sqrt();
        assert!((s.test_x.at(0, 0) - 8.0 / sd).abs() < 1e-12);
        assert_eq!(s.test_y, vec![7.0]);
        assert_eq!(s.y_mean, 3.0);
        let Targets::Real { y: yt, .. } = &s.train.targets else { panic!() };
        assert!(yt.data().iter().sum::<f64>().abs() < 1e-12);
    }
}
