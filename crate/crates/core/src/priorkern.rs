//! Neural-network GP prior kernels and exact GP regression.
//!
//! The prior over functions with `C` outputs has covariance `B ⊗ I_C` on a
//! finite set of points, where the scalar base matrix `B` is estimated by
//! Monte Carlo from frozen random draws of a ReLU feature projector:
//!
//! ```text
//! k̂(x, x') = 1/(S·Ĉ) Σ_s h(x, w_s)ᵀ h(x', w_s)
//! B(x, x') = σ_w²·k̂(x, x') + σ_b²
//! ```
//!
//! [`arccos_kernel`] is the infinite-width limit of the same construction.

use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Cholesky, Tensor};
use crate::nets::{draw_layers, features, Layer, MlpSpec};
use crate::rng::{stream, Purpose};

/// Hyperparameters of the MC NN-GP prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Hidden widths of the feature projector; empty means identity features.
    pub hidden: Vec<usize>,
    /// Readout weight variance σ_w² (per unit of `1/Ĉ`).
    pub sigma_w2: f64,
    /// Readout bias variance σ_b².
    pub sigma_b2: f64,
    /// Projector weights are drawn from `N(0, weight_gain / fan_in)`.
    pub weight_gain: f64,
    /// Projector biases are drawn from `N(0, bias_var)`.
    pub bias_var: f64,
    /// Number of frozen projector draws `S`.
    pub samples: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50],
            sigma_w2: 2.0,
            sigma_b2: 0.01,
            weight_gain: 2.0,
            bias_var: 0.01,
            samples: 10,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("prior needs at least one MC sample"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("prior hidden widths must be >= 1"));
        }
        let positive = [self.sigma_w2, self.weight_gain];
        let nonneg = [self.sigma_b2, self.bias_var];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(format!("prior variances out of range: {self:?}")));
        }
        Ok(())
    }
}

/// A prior with its projector draws fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub config: PriorConfig,
    pub input_dim: usize,
    draws: Vec<Vec<Layer>>,
}

impl PriorSpec {
    pub fn new(input_dim: usize, config: PriorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        MlpSpec::new(input_dim, &config.hidden, 1).validate()?;
        let dims = MlpSpec::new(input_dim, &config.hidden, 1).layer_dims();
        let hidden_dims = &dims[..dims.len() - 1];
        let draws = (0..config.samples)
            .map(|s| {
                let mut rng = stream(seed, s as u64, Purpose::PriorDraws);
                draw_layers(hidden_dims, config.weight_gain, config.bias_var, &mut rng)
            })
            .collect();
        Ok(Self { config, input_dim, draws })
    }

    /// Width `Ĉ` of the projector output.
    pub fn feature_dim(&self) -> usize {
        self.config.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn draws(&self) -> &[Vec<Layer>] {
        &self.draws
    }

    /// Monte-Carlo estimate `k̂(X, X')` before the readout variances.
    pub fn feature_kernel(&self, x: &Tensor, x2: &Tensor) -> Result<Tensor> {
        let (n, _) = x.dims2()?;
        let (n2, _) = x2.dims2()?;
        let mut acc = Tensor::zeros(&[n, n2]);
        for layers in &self.draws {
            let h = features(layers, x)?;
            let h2 = if std::ptr::eq(x, x2) { h.clone() } else { features(layers, x2)? };
            acc = acc.add(&h.matmul(&h2.transpose()?)?)?;
        }
        Ok(acc.scale(1.0 / (self.draws.len() * self.feature_dim()) as f64))
    }

    /// Prior covariance base `σ_w²·k̂(X, X') + σ_b²` without jitter.
    pub fn cross_base(&self, x: &Tensor, x2: &Tensor) -> Result<Tensor> {
        let k = self.feature_kernel(x, x2)?;
        Ok(k.map(|v| self.config.sigma_w2 * v + self.config.sigma_b2))
    }
}

/// The factored prior base matrix on one measurement set.
#[derive(Clone, Debug)]
pub struct PriorBase {
    /// `B` including the diagonal jitter that was added before factoring.
    pub matrix: Tensor,
    pub chol: Rc<Cholesky>,
    pub logdet: f64,
    pub jitter: f64,
}

/// Relative diagonal jitter added to every prior base before factoring.
pub const BASE_JITTER: f64 = 1e-8;

impl PriorBase {
    /// Factors `b + BASE_JITTER·mean(diag b)·I`.
    pub fn from_matrix(mut b: Tensor) -> Result<Self> {
        let (n, m) = b.dims2()?;
        if n != m || n == 0 {
            return Err(Error::invalid(format!("prior base must be square and nonempty, got {n}x{m}")));
        }
        let mean_diag = (0..n).map(|i| b.at(i, i)).sum::<f64>() / n as f64;
        let jitter = BASE_JITTER * mean_diag.abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            let v = b.at(i, i);
            b.set(i, i, v + jitter);
        }
        let chol = Cholesky::new(&b)?;
        Ok(Self { logdet: chol.logdet(), chol: Rc::new(chol), matrix: b, jitter })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// MC NN-GP base matrix on the measurement set `x`.
pub fn mc_nngp_base(prior: &PriorSpec, x: &Tensor) -> Result<PriorBase> {
    PriorBase::from_matrix(prior.cross_base(x, x)?)
}

fn linear_kernel(x: &Tensor, x2: &Tensor, sigma_w2: f64, sigma_b2: f64) -> Result<Tensor> {
    let d = x.cols() as f64;
    Ok(x.matmul(&x2.transpose()?)?.map(|v| sigma_w2 * v / d + sigma_b2))
}

fn row_sq_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect()
}

fn arccos_step(k: f64, kxx: f64, kyy: f64, sigma_w2: f64, sigma_b2: f64) -> f64 {
    let norm = (kxx * kyy).sqrt();
    if norm <= 0.0 {
        return sigma_b2;
    }
    let cos = (k / norm).clamp(-1.0, 1.0);
    let theta = cos.acos();
    sigma_w2 / (2.0 * PI) * norm * (theta.sin() + (PI - theta) * cos) + sigma_b2
}

/// Infinite-width NN-GP kernel of a ReLU MLP with `depth` hidden layers,
/// all layers sharing the variances `σ_w²` (scaled by `1/fan_in`) and `σ_b²`.
pub fn arccos_kernel(x: &Tensor, x2: &Tensor, depth: usize, sigma_w2: f64, sigma_b2: f64) -> Result<Tensor> {
    if x.cols() != x2.cols() {
        return Err(Error::invalid(format!("input widths differ: {} vs {}", x.cols(), x2.cols())));
    }
    let d = x.cols() as f64;
    let mut k = linear_kernel(x, x2, sigma_w2, sigma_b2)?;
    let mut dx: Vec<f64> = row_sq_norms(x).iter().map(|s| sigma_w2 * s / d + sigma_b2).collect();
    let mut dy: Vec<f64> = row_sq_norms(x2).iter().map(|s| sigma_w2 * s / d + sigma_b2).collect();
    for _ in 0..depth {
        let cols = k.cols();
        for i in 0..k.rows() {
            let row = k.row_mut(i);
            for (j, v) in row.iter_mut().enumerate().take(cols) {
                *v = arccos_step(*v, dx[i], dy[j], sigma_w2, sigma_b2);
            }
        }
        dx = dx.iter().map(|&v| arccos_step(v, v, v, sigma_w2, sigma_b2)).collect();
        dy = dy.iter().map(|&v| arccos_step(v, v, v, sigma_w2, sigma_b2)).collect();
    }
    Ok(k)
}

/// Diagonal `K(x, x)` of [`arccos_kernel`].
pub fn arccos_diag(x: &Tensor, depth: usize, sigma_w2: f64, sigma_b2: f64) -> Vec<f64> {
    let d = x.cols() as f64;
    let mut v: Vec<f64> = row_sq_norms(x).iter().map(|s| sigma_w2 * s / d + sigma_b2).collect();
    for _ in 0..depth {
        v = v.iter().map(|&k| sigma_w2 / 2.0 * k + sigma_b2).collect();
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of predictive variances that came out negative and were set to 0.
    pub clamped: usize,
}

/// Exact GP regression with Gaussian noise `σ_n²`.
///
/// `k_cross` is `(n_train, n_test)`.
pub fn exact_gp_regression(
    k_train: &Tensor,
    k_cross: &Tensor,
    k_test_diag: &[f64],
    y: &[f64],
    noise: f64,
) -> Result<GpPrediction> {
    let (n, n2) = k_train.dims2()?;
    let (nc, nt) = k_cross.dims2()?;
    if n != n2 || nc != n || y.len() != n || k_test_diag.len() != nt {
        return Err(Error::invalid(format!(
            "GP shapes: train {n}x{n2}, cross {nc}x{nt}, y {}, test diag {}",
            y.len(),
            k_test_diag.len()
        )));
    }
    let mut a = k_train.clone();
    for i in 0..n {
        a.set(i, i, a.at(i, i) + noise);
    }
    let chol = Cholesky::new(&a)?;
    let alpha = chol.solve_vec(y)?;
    let mean = (0..nt).map(|j| (0..n).map(|i| k_cross.at(i, j) * alpha[i]).sum()).collect();
    // v = L⁻¹ K_cross, var = diag - colwise ‖v‖²
    let mut v = k_cross.data().to_vec();
    chol.forward_solve_in_place(&mut v, nt);
    let mut clamped = 0;
    let var = (0..nt)
        .map(|j| {
            let q: f64 = (0..n).map(|i| v[i * nt + j].powi(2)).sum();
            let s = k_test_diag[j] - q;
            if s < 0.0 {
                clamped += 1;
                0.0
            } else {
                s
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} negative GP predictive variances clamped to 0");
    }
    Ok(GpPrediction { mean, var, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, 0, Purpose::Data);
        Tensor::matrix(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn linear_cfg(samples: usize) -> PriorConfig {
        PriorConfig { hidden: vec![], sigma_w2: 1.0, sigma_b2: 0.0, samples, ..PriorConfig::default() }
    }

    #[test]
    fn identity_projector_gives_scaled_gram() {
        let x = random_points(5, 3, 1);
        let prior = PriorSpec::new(3, linear_cfg(1), 0).unwrap();
        let k = prior.cross_base(&x, &x).unwrap();
        let gram = x.matmul(&x.transpose().unwrap()).unwrap().scale(1.0 / 3.0);
        assert!(k.sub(&gram).unwrap().max_abs() < 1e-14);
        let base = mc_nngp_base(&prior, &x).unwrap();
        assert!(base.matrix.sub(&gram).unwrap().max_abs() <= 1e-8 * gram.max_abs());
    }

    #[test]
    fn base_is_symmetric_and_frozen() {
        let x = random_points(7, 2, 2);
        let prior = PriorSpec::new(2, PriorConfig::default(), 3).unwrap();
        let b = mc_nngp_base(&prior, &x).unwrap().matrix;
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(b.at(i, j).to_bits(), b.at(j, i).to_bits());
            }
        }
        let again = PriorSpec::new(2, PriorConfig::default(), 3).unwrap();
        assert_eq!(mc_nngp_base(&again, &x).unwrap().matrix, b);
    }

    #[test]
    fn bias_variance_added_to_every_entry() {
        let x = random_points(4, 2, 5);
        let cfg = PriorConfig::default();
        let prior = PriorSpec::new(2, cfg.clone(), 3).unwrap();
        let k = prior.feature_kernel(&x, &x).unwrap();
        let b = prior.cross_base(&x, &x).unwrap();
        for (kv, bv) in k.data().iter().zip(b.data()) {
            assert!((cfg.sigma_w2 * kv + cfg.sigma_b2 - bv).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_deficient_base_factors_with_jitter() {
        // linear prior on 1-D inputs has rank 1
        let x = Tensor::matrix(6, 1, vec![-2.0, -1.0, 0.0, 0.5, 1.0, 2.0]).unwrap();
        let prior = PriorSpec::new(1, linear_cfg(1), 0).unwrap();
        let base = mc_nngp_base(&prior, &x).unwrap();
        assert!(base.jitter > 0.0 && base.logdet.is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PriorSpec::new(2, PriorConfig { samples: 0, ..PriorConfig::default() }, 0).is_err());
        assert!(PriorSpec::new(2, PriorConfig { sigma_w2: -1.0, ..PriorConfig::default() }, 0).is_err());
        assert!(PriorSpec::new(2, PriorConfig { hidden: vec![0], ..PriorConfig::default() }, 0).is_err());
    }

    #[test]
    fn arccos_depth_zero_is_linear() {
        let x = random_points(4, 3, 7);
        let k = arccos_kernel(&x, &x, 0, 1.5, 0.2).unwrap();
        let lin = linear_kernel(&x, &x, 1.5, 0.2).unwrap();
        assert!(k.sub(&lin).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn arccos_diagonal_recursion() {
        let x = random_points(5, 2, 8);
        for depth in 0..4 {
            let k = arccos_kernel(&x, &x, depth, 2.0, 0.01).unwrap();
            let d = arccos_diag(&x, depth, 2.0, 0.01);
            for i in 0..5 {
                assert!((k.at(i, i) - d[i]).abs() < 1e-12 * d[i]);
            }
        }
    }

    #[test]
    fn arccos_is_psd() {
        let x = random_points(10, 3, 9);
        let k = arccos_kernel(&x, &x, 3, 2.0, 0.01).unwrap();
        let ev = crate::ndcore::symmetric_eigenvalues(&k).unwrap();
        assert!(ev.iter().all(|&e| e > -1e-10 * ev[0]));
    }

    #[test]
    fn wide_network_matches_arccos() {
        // one hidden layer of width 4096, 2000 draws of (w, b) per unit is
        // the same as 4096 * 2000 iid features; use 200 draws for speed
        let x = random_points(6, 3, 10);
        let cfg = PriorConfig { hidden: vec![4096], samples: 200, ..PriorConfig::default() };
        let prior = PriorSpec::new(3, cfg, 11).unwrap();
        let mc = prior.cross_base(&x, &x).unwrap();
        let exact = arccos_kernel(&x, &x, 1, 2.0, 0.01).unwrap();
        for (a, b) in mc.data().iter().zip(exact.data()) {
            assert!((a - b).abs() < 0.05 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn mc_error_shrinks_with_samples() {
        let x = random_points(8, 2, 12);
        let exact = arccos_kernel(&x, &x, 1, 2.0, 0.01).unwrap();
        let err = |s: usize, rep: u64| {
            let cfg = PriorConfig { hidden: vec![16], samples: s, ..PriorConfig::default() };
            let b = PriorSpec::new(2, cfg, 100 + rep).unwrap().cross_base(&x, &x).unwrap();
            b.data().iter().zip(exact.data()).map(|(a, e)| ((a - e) / e).abs()).fold(0.0, f64::max)
        };
        let mean = |s| (0..10).map(|r| err(s, r)).sum::<f64>() / 10.0;
        let (e10, e100, e1000) = (mean(10), mean(100), mean(1000));
        assert!(e10 > e100 && e100 > e1000, "{e10} {e100} {e1000}");
    }

    #[test]
    fn gp_interpolates_noise_free() {
        let x = Tensor::matrix(3, 1, vec![-1.0, 0.2, 1.3]).unwrap();
        let k = arccos_kernel(&x, &x, 1, 2.0, 0.01).unwrap();
        let y = [0.3, -0.7, 1.1];
        let pred = exact_gp_regression(&k, &k, &arccos_diag(&x, 1, 2.0, 0.01), &y, 1e-10).unwrap();
        for (m, t) in pred.mean.iter().zip(y) {
            assert!((m - t).abs() < 1e-4);
        }
    }

    #[test]
    fn gp_zero_kernel() {
        let z = Tensor::zeros(&[2, 3]);
        let pred = exact_gp_regression(&Tensor::zeros(&[2, 2]), &z, &[1.0, 2.0, 3.0], &[1.0, 2.0], 0.5).unwrap();
        assert_eq!(pred.mean, vec![0.0; 3]);
        assert_eq!(pred.var, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gp_matches_dense_inverse() {
        let kt = Tensor::from_rows(&[[2.0, 0.5, 0.1], [0.5, 1.5, 0.3], [0.1, 0.3, 1.0]]).unwrap();
        let kc = Tensor::from_rows(&[[0.4, 0.2], [0.1, 0.9], [0.3, 0.05]]).unwrap();
        let diag = [1.2, 1.1];
        let y = [1.0, -2.0, 0.5];
        let noise = 0.1;
        // hand-coded 3x3 inverse by cofactors
        let a: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| kt.at(i, j) + if i == j { noise } else { 0.0 }).collect()).collect();
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let m = a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]];
            if (i + j) % 2 == 0 { m } else { -m }
        };
        let inv: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| cof(j, i) / det).collect()).collect();
        let pred = exact_gp_regression(&kt, &kc, &diag, &y, noise).unwrap();
        for t in 0..2 {
            let kcol: Vec<f64> = (0..3).map(|i| kc.at(i, t)).collect();
            let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv[i][j] * kcol[j]).sum()).collect();
            let mean: f64 = (0..3).map(|i| w[i] * y[i]).sum();
            let var = diag[t] - (0..3).map(|i| w[i] * kcol[i]).sum::<f64>();
            assert!((pred.mean[t] - mean).abs() < 1e-10);
            assert!((pred.var[t] - var).abs() < 1e-10);
        }
    }
}
