//! Predictive distributions and uncertainty metrics.
//!
//! Entropies and mutual information are in nats.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degp::{FunctionBatch, SampleNoise};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::nets::{ensemble_forward, EnsembleWeights};

/// Samples used for the DE-GP predictive unless configured otherwise.
pub const DEFAULT_PREDICTIVE_SAMPLES: usize = 1000;

/// Points per sampling chunk when drawing DE-GP functions.
const CHUNK_POINTS: usize = 256;

/// Source of predictive function samples.
#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    /// One sample per member.
    Ensemble(&'a EnsembleWeights),
    /// `samples` draws from the ensemble's Gaussian process, with λ set by
    /// the trace rule on the evaluated points.
    Gp { ens: &'a EnsembleWeights, fraction: f64, samples: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Gaussian { noise_var: f64 },
    Categorical { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictive {
    /// Per point: mixture mean, total variance, and the between-sample
    /// (epistemic) variance.
    Regression { mean: Vec<f64>, var: Vec<f64>, epistemic: Vec<f64> },
    /// `(n, C)` class probabilities and per-point mutual information.
    Classification { probs: Tensor, mutual_info: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub predictive: Predictive,
    /// Raw epistemic uncertainty per point.
    pub uncertainty: Vec<f64>,
    /// `uncertainty` divided by its maximum.
    pub normalized: Vec<f64>,
    pub samples: usize,
}

/// Function samples `(S, n·C)` at `x`.
pub fn function_samples<R: Rng + ?Sized>(model: Model<'_>, x: &Tensor, rng: &mut R) -> Result<Tensor> {
    match model {
        Model::Ensemble(ens) => ensemble_forward(ens, x),
        Model::Gp { ens, fraction, samples } => {
            if samples == 0 {
                return Err(Error::invalid("need at least one predictive sample"));
            }
            let c = ens.output_dim();
            let batch = FunctionBatch::from_raw(&ensemble_forward(ens, x)?, fraction)?;
            let n = x.rows();
            let mut out = Tensor::zeros(&[samples, n * c]);
            for start in (0..n).step_by(CHUNK_POINTS) {
                let end = (start + CHUNK_POINTS).min(n);
                let (a, b) = (start * c, end * c);
                let gc = batch.gc.slice_rows(a, b)?;
                let noise = SampleNoise::draw(samples, ens.len(), b - a, rng);
                let s = crate::degp::sample_with_noise(&batch.mean[a..b], &gc, batch.lambda, &noise)?;
                for u in 0..samples {
                    out.row_mut(u)[a..b].copy_from_slice(s.row(u));
                }
            }
            Ok(out)
        }
    }
}

fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - mx) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Shannon entropy in nats, with `0·log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `H(mean_s p_s) − mean_s H(p_s)` for rows `p_s` of an `(S, C)` matrix.
pub fn mutual_info(rows: &Tensor) -> Result<f64> {
    let (s, c) = rows.dims2()?;
    if s == 0 {
        return Err(Error::invalid("no sample rows"));
    }
    let mut mean = vec![0.0; c];
    let mut avg_h = 0.0;
    for i in 0..s {
        let r = rows.row(i);
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / s as f64;
        }
        avg_h += entropy(r) / s as f64;
    }
    Ok((entropy(&mean) - avg_h).max(0.0))
}

fn normalize(u: &[f64]) -> Vec<f64> {
    let mx = u.iter().copied().fold(0.0, f64::max);
    if mx > 0.0 {
        u.iter().map(|v| v / mx).collect()
    } else {
        vec![0.0; u.len()]
    }
}

/// Divides by the maximum over the pool so values lie in `[0, 1]`.
pub fn normalize_uncertainty(raw: &[f64]) -> Vec<f64> {
    normalize(raw)
}

/// Predictive summary from `(S, n·C)` function samples.
pub fn summarize_samples(samples: &Tensor, c: usize, obs: Observation) -> Result<PredictiveSummary> {
    let (s, d) = samples.dims2()?;
    if s == 0 || c == 0 || d % c != 0 {
        return Err(Error::invalid(format!("cannot split {d} sample columns into {c} outputs")));
    }
    let n = d / c;
    let predictive = match obs {
        Observation::Gaussian { noise_var } => {
            if c != 1 {
                return Err(Error::invalid("regression predictive expects one output"));
            }
            let mut mean = vec![0.0; n];
            let mut epistemic = vec![0.0; n];
            for j in 0..n {
                let m = (0..s).map(|u| samples.at(u, j)).sum::<f64>() / s as f64;
                mean[j] = m;
                epistemic[j] = (0..s).map(|u| (samples.at(u, j) - m).powi(2)).sum::<f64>() / s as f64;
            }
            let var = epistemic.iter().map(|v| v + noise_var).collect();
            Predictive::Regression { mean, var, epistemic }
        }
        Observation::Categorical { temperature } => {
            let mut probs = Tensor::zeros(&[n, c]);
            let mut mi = Vec::with_capacity(n);
            let mut rows = Tensor::zeros(&[s, c]);
            for j in 0..n {
                for u in 0..s {
                    let p = softmax(&samples.row(u)[j * c..(j + 1) * c], temperature);
                    rows.row_mut(u).copy_from_slice(&p);
                }
                let mean = rows.sum_rows()?.scale(1.0 / s as f64);
                probs.row_mut(j).copy_from_slice(mean.data());
                mi.push(mutual_info(&rows)?);
            }
            Predictive::Classification { probs, mutual_info: mi }
        }
    };
    let uncertainty = match &predictive {
        Predictive::Regression { epistemic, .. } => epistemic.clone(),
        Predictive::Classification { mutual_info, .. } => mutual_info.clone(),
    };
    Ok(PredictiveSummary { normalized: normalize(&uncertainty), uncertainty, predictive, samples: s })
}

/// Posterior predictive at `x`: the average of the observation model over
/// function samples.
pub fn posterior_predictive<R: Rng + ?Sized>(model: Model<'_>, x: &Tensor, obs: Observation, rng: &mut R) -> Result<PredictiveSummary> {
    let c = match model {
        Model::Ensemble(e) | Model::Gp { ens: e, .. } => e.output_dim(),
    };
    summarize_samples(&function_samples(model, x, rng)?, c, obs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    /// Mean 0/1 error over points with uncertainty `≤ tau`; `None` when no
    /// point qualifies.
    pub error: Option<f64>,
    pub count: usize,
}

/// Error rate among points whose normalized uncertainty is at most each
/// threshold.
pub fn error_vs_uncertainty(correct: &[bool], normalized: &[f64], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    if correct.len() != normalized.len() {
        return Err(Error::invalid("one uncertainty per prediction required"));
    }
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let (mut count, mut wrong) = (0usize, 0usize);
            for (&ok, &u) in correct.iter().zip(normalized) {
                if u <= tau {
                    count += 1;
                    wrong += usize::from(!ok);
                }
            }
            CurvePoint { tau, error: (count > 0).then(|| wrong as f64 / count as f64), count }
        })
        .collect())
}

/// Curve over in-distribution and out-of-distribution points together; every
/// OOD prediction counts as wrong and uncertainties are normalized over the
/// combined pool.
pub fn error_vs_uncertainty_with_ood(
    correct_in: &[bool],
    raw_in: &[f64],
    raw_ood: &[f64],
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    let mut correct = correct_in.to_vec();
    correct.extend(std::iter::repeat_n(false, raw_ood.len()));
    let pool: Vec<f64> = raw_in.iter().chain(raw_ood).copied().collect();
    error_vs_uncertainty(&correct, &normalize(&pool), thresholds)
}

/// Evenly spaced thresholds `0, 1/(k−1), …, 1`.
pub fn threshold_grid(k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![1.0],
        _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}

pub const ECE_BINS: usize = 15;

/// Expected calibration error with `bins` equal-width confidence bins
/// `(k/B, (k+1)/B]` (confidence 0 falls in the first bin).
pub fn ece(probs: &Tensor, labels: &[usize], bins: usize) -> Result<f64> {
    let (n, _) = probs.dims2()?;
    if labels.len() != n || bins == 0 {
        return Err(Error::invalid("one label per row and at least one bin required"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for (i, &label) in labels.iter().enumerate() {
        let (pred, conf) = argmax(probs.row(i));
        let b = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf_sum[b] += conf;
        acc_sum[b] += f64::from(u8::from(pred == label));
    }
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (count[b] as f64 / n as f64) * (acc_sum[b] / count[b] as f64 - conf_sum[b] / count[b] as f64).abs())
        .sum())
}

pub fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub nll: f64,
    pub accuracy: f64,
    pub ece: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub nll: f64,
    pub rmse: f64,
}

pub fn classification_metrics(probs: &Tensor, labels: &[usize]) -> Result<ClassificationMetrics> {
    let n = labels.len();
    if probs.rows() != n || n == 0 {
        return Err(Error::invalid("one label per probability row required"));
    }
    let nll = labels.iter().enumerate().map(|(i, &l)| -probs.at(i, l).max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n as f64;
    let correct = labels.iter().enumerate().filter(|&(i, &l)| argmax(probs.row(i)).0 == l).count();
    Ok(ClassificationMetrics { nll, accuracy: correct as f64 / n as f64, ece: ece(probs, labels, ECE_BINS)? })
}

/// Gaussian predictive NLL and RMSE.
pub fn regression_metrics(mean: &[f64], var: &[f64], y: &[f64]) -> Result<RegressionMetrics> {
    let n = y.len();
    if mean.len() != n || var.len() != n || n == 0 {
        return Err(Error::invalid("mean, variance and targets must have equal nonzero length"));
    }
    let mut nll = 0.0;
    let mut se = 0.0;
    for i in 0..n {
        let r = y[i] - mean[i];
        se += r * r;
        nll += 0.5 * (2.0 * std::f64::consts::PI * var[i]).ln() + r * r / (2.0 * var[i]);
    }
    Ok(RegressionMetrics { nll: nll / n as f64, rmse: (se / n as f64).sqrt() })
}
