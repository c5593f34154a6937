//! Finite-dimensional Gaussian measures and their KL divergence.
//!
//! Vectors over a point set with `C` outputs are laid out point-major with the
//! output index fastest: entry `i·C + c` is output `c` at point `i`. The prior
//! covariance `B ⊗ I_C` assumes exactly this ordering.
//!
//! The structured KL between the ensemble posterior `N(m, GcGcᵀ/M + λI)` and
//! the prior `N(0, B ⊗ I_C)` costs `O(n³ + D·M² + M³)` with `D = n·C`:
//!
//! ```text
//! 2·KL = (1/M)·Σ_j g_jᵀ(B⁻¹⊗I)g_j + λ·C·tr(B⁻¹) + mᵀ(B⁻¹⊗I)m − D
//!        + C·log|B| − D·log λ − log|I_M + GcᵀGc/(Mλ)|
//! ```

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndcore::{kron_identity_solve, lowrank_logdet, Cholesky, Tensor, Var};
use crate::priorkern::PriorBase;

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    /// `Gc·Gcᵀ/M + λ·I` with `Gc` of shape `(D, M)`.
    LowRankDiag { gc: Tensor, lambda: f64 },
    /// `B ⊗ I_C` with `B` of shape `(n, n)`.
    KronIdentity { base: Tensor, c: usize },
    Dense(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasure {
    pub mean: Vec<f64>,
    pub cov: Covariance,
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::LowRankDiag { gc, .. } => gc.rows(),
            Covariance::KronIdentity { base, c } => base.rows() * c,
            Covariance::Dense(k) => k.rows(),
        }
    }

    pub fn to_dense(&self) -> Result<Tensor> {
        match self {
            Covariance::LowRankDiag { gc, lambda } => {
                let m = gc.cols() as f64;
                let mut k = gc.matmul(&gc.transpose()?)?.scale(1.0 / m);
                for i in 0..k.rows() {
                    k.set(i, i, k.at(i, i) + lambda);
                }
                Ok(k)
            }
            Covariance::KronIdentity { base, c } => {
                let n = base.rows();
                let d = n * c;
                let mut k = Tensor::zeros(&[d, d]);
                for i in 0..n {
                    for j in 0..n {
                        for o in 0..*c {
                            k.set(i * c + o, j * c + o, base.at(i, j));
                        }
                    }
                }
                Ok(k)
            }
            Covariance::Dense(k) => Ok(k.clone()),
        }
    }

    /// Diagonal of the covariance.
    pub fn diag(&self) -> Vec<f64> {
        match self {
            Covariance::LowRankDiag { gc, lambda } => {
                let m = gc.cols() as f64;
                (0..gc.rows()).map(|i| gc.row(i).iter().map(|v| v * v).sum::<f64>() / m + lambda).collect()
            }
            Covariance::KronIdentity { base, c } => {
                (0..base.rows()).flat_map(|i| std::iter::repeat_n(base.at(i, i), *c)).collect()
            }
            Covariance::Dense(k) => (0..k.rows()).map(|i| k.at(i, i)).collect(),
        }
    }
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::invalid(format!(
                "mean has length {}, covariance dimension {}",
                mean.len(),
                cov.dim()
            )));
        }
        if let Covariance::LowRankDiag { lambda, .. } = cov {
            if lambda <= 0.0 {
                return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn quad_inv(chol: &Cholesky, v: &[f64]) -> Result<f64> {
    let s = chol.solve_vec(v)?;
    Ok(v.iter().zip(&s).map(|(a, b)| a * b).sum())
}

/// KL(q ‖ p) through dense Cholesky factorizations of both covariances.
pub fn kl_dense(q: &GaussianMeasure, p: &GaussianMeasure) -> Result<f64> {
    let d = q.dim();
    if p.dim() != d {
        return Err(Error::invalid(format!("dimension mismatch: {d} vs {}", p.dim())));
    }
    let kq = q.cov.to_dense()?;
    let lp = Cholesky::new(&p.cov.to_dense()?)?;
    let lq = Cholesky::new(&kq)?;
    let trace = lp.solve(&kq)?;
    let trace: f64 = (0..d).map(|i| trace.at(i, i)).sum();
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let maha = quad_inv(&lp, &diff)?;
    Ok(0.5 * (trace + maha - d as f64 + lp.logdet() - lq.logdet()))
}

/// `(B⁻¹ ⊗ I_C)·V` for `V` of shape `(n·C, k)`.
pub fn kron_apply_inverse(chol: &Cholesky, v: &Tensor, c: usize) -> Result<Tensor> {
    kron_identity_solve(chol, v, c)
}

fn check_structured(m: &[f64], gc: &Tensor, lambda: f64, base: &PriorBase, c: usize) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
    }
    let d = base.dim() * c;
    if m.len() != d || gc.rows() != d {
        return Err(Error::invalid(format!(
            "mean {} / factor rows {} do not match prior dimension {d}",
            m.len(),
            gc.rows()
        )));
    }
    Ok(())
}

/// KL(N(m, GcGcᵀ/M + λI) ‖ N(0, B⊗I_C)) using the Kronecker and low-rank
/// structure; `gc` is `(D, M)`.
pub fn kl_structured(m: &[f64], gc: &Tensor, lambda: f64, base: &PriorBase, c: usize) -> Result<f64> {
    check_structured(m, gc, lambda, base, c)?;
    let (d, members) = gc.dims2()?;
    let chol = &base.chol;
    let sg = kron_identity_solve(chol, gc, c)?;
    let quad_g = gc.dot(&sg)? / members as f64;
    let mv = Tensor::matrix(d, 1, m.to_vec())?;
    let quad_m = mv.dot(&kron_identity_solve(chol, &mv, c)?)?;
    let tr = lambda * c as f64 * chol.inverse_trace();
    let logdet_q = lowrank_logdet(gc, lambda)?;
    Ok(0.5 * (quad_g + tr + quad_m - d as f64 + c as f64 * base.logdet - logdet_q))
}

/// Differentiable [`kl_structured`]. `mean` is `(1, D)`, `dev` holds the
/// centered member deviations as rows, `(M, D)`. `λ` and the prior are
/// constants.
pub fn kl_structured_tape<'t>(
    mean: Var<'t>,
    dev: Var<'t>,
    lambda: f64,
    base: &PriorBase,
    c: usize,
) -> Result<Var<'t>> {
    let shape = dev.shape();
    let (members, d) = (shape[0], shape[1]);
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
    }
    if d != base.dim() * c || mean.shape() != [1, d] {
        return Err(Error::invalid(format!(
            "posterior dimension {d} does not match prior dimension {}",
            base.dim() * c
        )));
    }
    let chol: Rc<Cholesky> = base.chol.clone();
    let mf = members as f64;
    let quad_g = dev.mul(dev.kron_solve_rows(chol.clone(), c)?)?.sum().scale(1.0 / mf);
    let quad_m = mean.mul(mean.kron_solve_rows(chol.clone(), c)?)?.sum();
    let tape = dev.tape();
    let small = dev
        .matmul(dev.transpose()?)?
        .scale(1.0 / (mf * lambda))
        .add(tape.constant(Tensor::eye(members)))?
        .logdet_pd()?;
    let constant = lambda * c as f64 * chol.inverse_trace() - d as f64 + c as f64 * base.logdet
        - d as f64 * lambda.ln();
    Ok(quad_g.add(quad_m)?.sub(small)?.add_scalar(constant).scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Tape;
    use crate::rng::{normal_tensor, stream, Purpose};

    fn random_base(n: usize, seed: u64) -> PriorBase {
        let mut rng = stream(seed, 0, Purpose::Data);
        let a = normal_tensor(&mut rng, &[n, n + 2]);
        let b = a.matmul(&a.transpose().unwrap()).unwrap().scale(1.0 / n as f64);
        PriorBase::from_matrix(b).unwrap()
    }

    fn random_posterior(d: usize, m: usize, seed: u64) -> (Vec<f64>, Tensor) {
        let mut rng = stream(seed, 1, Purpose::Data);
        let mean = normal_tensor(&mut rng, &[d]).into_data();
        let gc = normal_tensor(&mut rng, &[d, m]).scale(0.5);
        (mean, gc)
    }

    fn dense_pair(m: &[f64], gc: &Tensor, lambda: f64, base: &PriorBase, c: usize) -> (GaussianMeasure, GaussianMeasure) {
        let q = GaussianMeasure::new(m.to_vec(), Covariance::LowRankDiag { gc: gc.clone(), lambda }).unwrap();
        let p = GaussianMeasure::new(vec![0.0; m.len()], Covariance::KronIdentity { base: base.matrix.clone(), c }).unwrap();
        (q, p)
    }

    #[test]
    fn identical_measures_have_zero_kl() {
        let base = random_base(4, 1);
        let p = GaussianMeasure::new(vec![0.3; 8], Covariance::KronIdentity { base: base.matrix.clone(), c: 2 }).unwrap();
        assert!(kl_dense(&p, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn closed_form_cases() {
        let id = |d| Covariance::Dense(Tensor::eye(d));
        let q = GaussianMeasure::new(vec![3.0, 4.0], id(2)).unwrap();
        let p = GaussianMeasure::new(vec![0.0, 0.0], id(2)).unwrap();
        assert!((kl_dense(&q, &p).unwrap() - 12.5).abs() < 1e-12);
        let q2 = GaussianMeasure::new(vec![0.0; 2], Covariance::Dense(Tensor::eye(2).scale(2.0))).unwrap();
        assert!((kl_dense(&q2, &p).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn structured_standard_normal_is_zero() {
        let base = PriorBase::from_matrix(Tensor::eye(3)).unwrap();
        let gc = Tensor::zeros(&[6, 2]);
        // the jitter makes B slightly larger than I
        assert!(kl_structured(&[0.0; 6], &gc, 1.0, &base, 2).unwrap().abs() < 1e-7);
    }

    #[test]
    fn structured_matches_dense() {
        let (n, c, m) = (6, 3, 4);
        let base = random_base(n, 2);
        let (mean, gc) = random_posterior(n * c, m, 3);
        let s = kl_structured(&mean, &gc, 0.1, &base, c).unwrap();
        let (q, p) = dense_pair(&mean, &gc, 0.1, &base, c);
        let d = kl_dense(&q, &p).unwrap();
        assert!((s - d).abs() <= 1e-9 * d.abs(), "{s} vs {d}");
    }

    #[test]
    fn mean_term_is_quadratic() {
        let base = random_base(4, 4);
        let (mean, gc) = random_posterior(8, 3, 5);
        let zero = vec![0.0; 8];
        let k0 = kl_structured(&zero, &gc, 0.2, &base, 2).unwrap();
        let k1 = kl_structured(&mean, &gc, 0.2, &base, 2).unwrap();
        let doubled: Vec<f64> = mean.iter().map(|v| 2.0 * v).collect();
        let k2 = kl_structured(&doubled, &gc, 0.2, &base, 2).unwrap();
        assert!(((k2 - k1) - 3.0 * (k1 - k0)).abs() < 1e-9 * k2.abs());
    }

    #[test]
    fn kron_inverse_cases() {
        let mut rng = stream(7, 0, Purpose::Data);
        let v = normal_tensor(&mut rng, &[10, 3]);
        let id = Cholesky::new(&Tensor::eye(5)).unwrap();
        assert!(kron_apply_inverse(&id, &v, 2).unwrap().sub(&v).unwrap().max_abs() < 1e-15);

        let base = random_base(5, 8);
        let dense = Covariance::KronIdentity { base: base.matrix.clone(), c: 2 }.to_dense().unwrap();
        let expect = Cholesky::new(&dense).unwrap().solve(&v).unwrap();
        let got = kron_apply_inverse(&base.chol, &v, 2).unwrap();
        assert!(got.sub(&expect).unwrap().max_abs() < 1e-10 * expect.max_abs().max(1.0));

        let one = normal_tensor(&mut rng, &[5, 2]);
        let plain = base.chol.solve(&one).unwrap();
        assert_eq!(kron_apply_inverse(&base.chol, &one, 1).unwrap(), plain);
    }

    #[test]
    fn tape_kl_matches_value_and_gradients() {
        let (n, c, m) = (4, 2, 3);
        let lambda = 0.3;
        let base = random_base(n, 9);
        let (mean, gc) = random_posterior(n * c, m, 10);
        let tape = Tape::new();
        let mv = tape.leaf(Tensor::matrix(1, n * c, mean.clone()).unwrap());
        let dv = tape.leaf(gc.transpose().unwrap());
        let kl = kl_structured_tape(mv, dv, lambda, &base, c).unwrap();
        let expect = kl_structured(&mean, &gc, lambda, &base, c).unwrap();
        assert!((tape.value(kl).item().unwrap() - expect).abs() < 1e-10 * expect.abs());

        let grads = tape.backward(kl).unwrap();
        let h = 1e-4;
        let gm = grads.wrt(mv);
        for k in 0..n * c {
            let mut p = mean.clone();
            let mut q = mean.clone();
            p[k] += h;
            q[k] -= h;
            let fd = (kl_structured(&p, &gc, lambda, &base, c).unwrap() - kl_structured(&q, &gc, lambda, &base, c).unwrap()) / (2.0 * h);
            assert!((fd - gm.data()[k]).abs() < 1e-4 * fd.abs().max(1.0));
        }
        let gd = grads.wrt(dv);
        for j in 0..m {
            for k in 0..n * c {
                let shift = |by: f64| {
                    let mut g = gc.clone();
                    g.set(k, j, g.at(k, j) + by);
                    kl_structured(&mean, &g, lambda, &base, c).unwrap()
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let an = gd.at(j, k);
                assert!((fd - an).abs() < 1e-4 * fd.abs().max(1.0), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let base = random_base(3, 11);
        let gc = Tensor::zeros(&[6, 2]);
        assert!(kl_structured(&[0.0; 6], &gc, 0.0, &base, 2).is_err());
        assert!(kl_structured(&[0.0; 5], &gc, 1.0, &base, 2).is_err());
        assert!(GaussianMeasure::new(vec![0.0; 3], Covariance::Dense(Tensor::eye(2))).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn structured_equals_dense_and_nonnegative(
                n in 1usize..=12, c in 1usize..=4, m in 1usize..=8,
                log_lambda in -4.0f64..0.0, seed in 0u64..1_000_000,
            ) {
                let lambda = 10f64.powf(log_lambda);
                let base = random_base(n, seed);
                let (mean, gc) = random_posterior(n * c, m, seed + 1);
                let s = kl_structured(&mean, &gc, lambda, &base, c).unwrap();
                let (q, p) = dense_pair(&mean, &gc, lambda, &base, c);
                let d = kl_dense(&q, &p).unwrap();
                prop_assert!((s - d).abs() <= 1e-8 * d.abs().max(1.0), "{} vs {}", s, d);
                prop_assert!(s >= -1e-9);
            }
        }
    }
}
