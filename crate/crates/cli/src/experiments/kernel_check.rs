//! Numerical self-checks of the Gaussian-measure kernels.
//!
//! Writes `kernel_check_report.json` and `kernel_check.txt`. Speedups are
//! machine dependent and are written to `timing.json` only, so the report
//! stays byte-identical across reruns.

use std::time::Instant;

use degp_core::degp::sample_functions;
use degp_core::gaussops::{kl_dense, kl_structured, Covariance, GaussianMeasure};
use degp_core::ndcore::{logdet_dense, lowrank_logdet, Tensor};
use degp_core::priorkern::{arccos_kernel, PriorBase, PriorConfig, PriorSpec};
use degp_core::rng::{normal_tensor, stream, Purpose};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{ExperimentConfig, KernelCheckConfig};
use crate::error::CliResult;
use crate::output::OutputDir;

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, instances: usize, max_error: f64, tolerance: f64) -> Self {
        Self { name: name.into(), instances, max_error, tolerance, passed: max_error <= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Dense over low-rank log-determinant time; kept out of the JSON report.
    #[serde(skip)]
    pub speedup: f64,
    #[serde(skip)]
    pub min_speedup: f64,
}

impl Report {
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: max error {:.3e} > {:.1e}", c.name, c.max_error, c.tolerance))
            .collect();
        if self.speedup < self.min_speedup {
            out.push(format!("log-det speedup {:.1}x < {:.0}x", self.speedup, self.min_speedup));
        }
        out
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn spd_base<R: Rng>(n: usize, rng: &mut R) -> CliResult<PriorBase> {
    let a = normal_tensor(rng, &[n, n]);
    let mut b = a.matmul(&a.transpose()?)?.scale(1.0 / n as f64);
    for i in 0..n {
        b.set(i, i, b.at(i, i) + 0.1);
    }
    Ok(PriorBase::from_matrix(b)?)
}

/// Structured against dense KL on random `(n, C, M)` instances.
pub fn kl_check(k: &KernelCheckConfig, seed: u64) -> CliResult<Check> {
    let mut worst = 0.0f64;
    for i in 0..k.kl_instances {
        let mut rng = stream(seed, i as u64, Purpose::Measurement);
        let n = rng.random_range(1..=k.max_points);
        let c = rng.random_range(1..=k.max_outputs);
        let m = rng.random_range(1..=k.max_members);
        let d = n * c;
        let base = spd_base(n, &mut rng)?;
        let gc = normal_tensor(&mut rng, &[d, m]);
        let mean: Vec<f64> = normal_tensor(&mut rng, &[d]).into_data();
        let lambda = 10f64.powf(rng.random_range(-4.0..=0.0));
        let fast = kl_structured(&mean, &gc, lambda, &base, c)?;
        let q = GaussianMeasure::new(mean, Covariance::LowRankDiag { gc, lambda })?;
        let p = GaussianMeasure::new(vec![0.0; d], Covariance::KronIdentity { base: base.matrix.clone(), c })?;
        worst = worst.max(rel(fast, kl_dense(&q, &p)?));
    }
    Ok(Check::new("structured KL vs dense", k.kl_instances, worst, k.kl_tolerance))
}

fn dense_lowrank(gc: &Tensor, lambda: f64) -> CliResult<Tensor> {
    let cov = Covariance::LowRankDiag { gc: gc.clone(), lambda };
    Ok(cov.to_dense()?)
}

pub fn logdet_check(k: &KernelCheckConfig, seed: u64) -> CliResult<Check> {
    let mut worst = 0.0f64;
    for i in 0..k.logdet_instances {
        let mut rng = stream(seed, 10_000 + i as u64, Purpose::Measurement);
        let d = rng.random_range(1..=64);
        let m = rng.random_range(1..=10);
        let lambda = 10f64.powf(rng.random_range(-3.0..0.5));
        let gc = normal_tensor(&mut rng, &[d, m]);
        worst = worst.max(rel(lowrank_logdet(&gc, lambda)?, logdet_dense(&dense_lowrank(&gc, lambda)?)?));
    }
    Ok(Check::new("determinant lemma vs dense log-det", k.logdet_instances, worst, k.logdet_tolerance))
}

/// Wall-clock ratio of the dense log-det over the low-rank one at the
/// configured size, and the relative gap between the two values.
pub fn logdet_speedup(k: &KernelCheckConfig, seed: u64) -> CliResult<(f64, f64)> {
    let mut rng = stream(seed, 20_000, Purpose::Measurement);
    let gc = normal_tensor(&mut rng, &[k.timing_dim, k.timing_members]);
    let lambda = 0.05;
    let dense = dense_lowrank(&gc, lambda)?;
    let t0 = Instant::now();
    let slow = logdet_dense(&dense)?;
    let t_dense = t0.elapsed().as_secs_f64();
    let reps = 20;
    let t0 = Instant::now();
    let mut fast = 0.0;
    for _ in 0..reps {
        fast = lowrank_logdet(&gc, lambda)?;
    }
    let t_fast = t0.elapsed().as_secs_f64() / reps as f64;
    Ok((t_dense / t_fast.max(1e-12), rel(fast, slow)))
}

/// Monte-Carlo prior kernel against the arc-cosine kernel of one hidden ReLU
/// layer, on random input pairs.
pub fn mc_prior_check(k: &KernelCheckConfig, prior: &PriorConfig, seed: u64) -> CliResult<Check> {
    let dim = 3;
    let cfg = PriorConfig { hidden: vec![prior.hidden.first().copied().unwrap_or(50)], samples: k.mc_samples, ..prior.clone() };
    let spec = PriorSpec::new(dim, cfg.clone(), seed)?;
    let mut rng = stream(seed, 30_000, Purpose::Measurement);
    let x = normal_tensor(&mut rng, &[k.mc_pairs, dim]);
    let x2 = normal_tensor(&mut rng, &[k.mc_pairs, dim]);
    let mc = spec.cross_base(&x, &x2)?;
    let exact = arccos_kernel(&x, &x2, 1, cfg.sigma_w2, cfg.sigma_b2)?;
    let mut worst = 0.0f64;
    for i in 0..k.mc_pairs {
        worst = worst.max(rel(mc.at(i, i), exact.at(i, i)));
    }
    Ok(Check::new("MC prior vs arc-cosine kernel", k.mc_pairs, worst, k.mc_tolerance))
}

/// Empirical covariance of pathwise draws against `GcGcᵀ/M + λI`, as a
/// relative Frobenius error.
pub fn sampling_moments(d: usize, m: usize, draws: usize, seed: u64) -> CliResult<f64> {
    let mut rng = stream(seed, 40_000, Purpose::Measurement);
    let gc = normal_tensor(&mut rng, &[d, m]);
    let mean: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let lambda = 0.1;
    let q = GaussianMeasure::new(mean.clone(), Covariance::LowRankDiag { gc: gc.clone(), lambda })?;
    let target = dense_lowrank(&gc, lambda)?;
    let mut cov = vec![0.0; d * d];
    let chunk = 10_000;
    let mut done = 0;
    while done < draws {
        let u = chunk.min(draws - done);
        let f = sample_functions(&q, u, &mut rng)?;
        for s in 0..u {
            let r = f.row(s);
            for a in 0..d {
                let da = r[a] - mean[a];
                for b in 0..d {
                    cov[a * d + b] += da * (r[b] - mean[b]);
                }
            }
        }
        done += u;
    }
    let err: f64 = cov.iter().zip(target.data()).map(|(c, t)| (c / draws as f64 - t).powi(2)).sum();
    Ok((err / target.norm_sq()).sqrt())
}

pub fn run(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<Report> {
    let k = &cfg.kernel_check;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let mut checks = Vec::new();
    let t0 = Instant::now();
    checks.push(kl_check(k, seed)?);
    dir.record_time("kl", t0.elapsed().as_secs_f64());
    checks.push(logdet_check(k, seed)?);
    let (speedup, gap) = logdet_speedup(k, seed)?;
    dir.record_time("logdet speedup (x)", speedup);
    checks.push(Check::new("large log-det agreement", 1, gap, 1e-9));
    let t0 = Instant::now();
    checks.push(mc_prior_check(k, &cfg.prior, seed)?);
    dir.record_time("mc prior", t0.elapsed().as_secs_f64());
    checks.push(Check::new("pathwise sample covariance", 200_000, sampling_moments(8, 4, 200_000, seed)?, 0.02));
    let report = Report { seed, checks, speedup, min_speedup: k.min_speedup };
    dir.write_json("kernel_check_report.json", &report)?;
    let mut text = String::new();
    for c in &report.checks {
        text.push_str(&format!(
            "{} {}: {} instances, max error {:.3e} (tol {:.1e})\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.max_error,
            c.tolerance
        ));
    }
    dir.write_text("kernel_check.txt", &text)?;
    Ok(report)
}
