//! The ensemble viewed as a Gaussian process.
//!
//! On a point set with `D = n·C` function values, the members' outputs give
//! the mean `m = (1/M) Σ g_i` and the covariance `K = (1/M)·Gc·Gcᵀ + λ·I_D`,
//! where column `i` of `Gc` is `g_i − m`. Samples are drawn pathwise as
//!
//! ```text
//! f = m + (1/√M)·Σ_i ε_i·(g_i − m) + √λ·ε₀,   ε_i ~ N(0, 1), ε₀ ~ N(0, I_D)
//! ```
//!
//! which costs `O(D·M)` per sample and is differentiable in the members.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussops::{Covariance, GaussianMeasure};
use crate::ndcore::{Tensor, Var};
use crate::nets::{ensemble_forward, EnsembleWeights};
use crate::rng::normal_tensor;

/// Lower bound on λ, reached when all members coincide.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Ensemble function values on a point set in centered form.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionBatch {
    pub mean: Vec<f64>,
    /// `(D, M)`; columns sum to zero.
    pub gc: Tensor,
    pub lambda: f64,
}

impl FunctionBatch {
    pub fn from_raw(raw: &Tensor, fraction: f64) -> Result<Self> {
        let (mean, gc) = mean_and_center(raw)?;
        let lambda = lambda_from_trace(&gc, fraction);
        Ok(Self { mean, gc, lambda })
    }

    pub fn members(&self) -> usize {
        self.gc.cols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn measure(&self) -> GaussianMeasure {
        GaussianMeasure {
            mean: self.mean.clone(),
            cov: Covariance::LowRankDiag { gc: self.gc.clone(), lambda: self.lambda },
        }
    }
}

/// Splits a raw `(M, D)` block into its mean and the `(D, M)` centered factor.
pub fn mean_and_center(raw: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (m, d) = raw.dims2()?;
    if m == 0 {
        return Err(Error::invalid("need at least one member"));
    }
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(raw.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut gc = Tensor::zeros(&[d, m]);
    for i in 0..m {
        for (k, v) in raw.row(i).iter().enumerate() {
            gc.set(k, i, v - mean[k]);
        }
    }
    Ok((mean, gc))
}

/// `fraction` times the average eigenvalue `‖Gc‖²_F/(M·D)` of the centered
/// covariance, floored at [`LAMBDA_FLOOR`]. Works for either orientation of `Gc`.
pub fn lambda_from_trace(gc: &Tensor, fraction: f64) -> f64 {
    let n = gc.numel();
    if n == 0 {
        return LAMBDA_FLOOR;
    }
    (fraction * gc.norm_sq() / n as f64).max(LAMBDA_FLOOR)
}

/// The ensemble's Gaussian measure on the points `x`.
pub fn posterior_at(ens: &EnsembleWeights, x: &Tensor, fraction: f64) -> Result<GaussianMeasure> {
    if x.rows() == 0 {
        return Err(Error::invalid("empty point set"));
    }
    Ok(FunctionBatch::from_raw(&ensemble_forward(ens, x)?, fraction)?.measure())
}

/// Standard-normal noise for `u` pathwise samples: `(u, M)` member weights
/// and `(u, D)` jitter noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleNoise {
    pub members: Tensor,
    pub jitter: Tensor,
}

impl SampleNoise {
    pub fn draw<R: Rng + ?Sized>(u: usize, m: usize, d: usize, rng: &mut R) -> Self {
        let members = normal_tensor(rng, &[u, m]);
        let jitter = normal_tensor(rng, &[u, d]);
        Self { members, jitter }
    }
}

/// Pathwise samples from `N(m, GcGcᵀ/M + λI)` given fixed noise; `(U, D)`.
pub fn sample_with_noise(mean: &[f64], gc: &Tensor, lambda: f64, noise: &SampleNoise) -> Result<Tensor> {
    let m = gc.cols() as f64;
    let mut f = noise.members.matmul(&gc.transpose()?)?.scale(1.0 / m.sqrt());
    f.axpy(lambda.sqrt(), &noise.jitter)?;
    f.add_row(&Tensor::matrix(1, mean.len(), mean.to_vec())?)
}

/// `u` function samples from a Gaussian measure, `(u, D)`. Low-rank measures
/// use the pathwise formula; other forms use a dense Cholesky factor.
pub fn sample_functions<R: Rng + ?Sized>(q: &GaussianMeasure, u: usize, rng: &mut R) -> Result<Tensor> {
    if u == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let d = q.dim();
    match &q.cov {
        Covariance::LowRankDiag { gc, lambda } => {
            let noise = SampleNoise::draw(u, gc.cols(), d, rng);
            sample_with_noise(&q.mean, gc, *lambda, &noise)
        }
        cov => {
            let l = crate::ndcore::cholesky(&cov.to_dense()?)?;
            let z = normal_tensor(rng, &[u, d]);
            z.matmul(&l.transpose()?)?.add_row(&Tensor::matrix(1, d, q.mean.clone())?)
        }
    }
}

/// Differentiable mean and centered deviations of a raw `(M, D)` block:
/// returns `(m, dev)` with `m` of shape `(1, D)` and `dev` of shape `(M, D)`.
pub fn center_tape<'t>(raw: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let m = raw.shape()[0] as f64;
    let mean = raw.sum_rows()?.scale(1.0 / m);
    let dev = raw.add_row(mean.scale(-1.0))?;
    Ok((mean, dev))
}

/// Differentiable pathwise samples `(U, D)` from centered rows `dev`.
pub fn sample_tape<'t>(mean: Var<'t>, dev: Var<'t>, lambda: f64, noise: &SampleNoise) -> Result<Var<'t>> {
    let tape = dev.tape();
    let m = dev.shape()[0] as f64;
    let eps = tape.constant(noise.members.scale(1.0 / m.sqrt()));
    let jitter = tape.constant(noise.jitter.scale(lambda.sqrt()));
    eps.matmul(dev)?.add_row(mean)?.add(jitter)
}
