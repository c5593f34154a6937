//! Cholesky factorization, triangular solves and log-determinants.

use crate::error::{Error, Result};
use crate::ndcore::tensor::{gemm_tn, Tensor};

/// Lower-triangular factor `L` with `L * L^T = A`.
///
/// Only the lower triangle of `A` is read; symmetry is the caller's
/// responsibility.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let (n, c) = a.dims2()?;
    if n != c {
        return Err(Error::invalid(format!(
            "cholesky of non-square {:?}",
            a.shape()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cholesky of an empty matrix"));
    }
    let src = a.data();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (i * n, j * n);
            let mut s = src[li + j];
            for k in 0..j {
                s -= l[li + k] * l[lj + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l[li + i] = s.sqrt();
            } else {
                l[li + j] = s / l[lj + j];
            }
        }
    }
    Tensor::matrix(n, n, l)
}

/// A factored symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    factor: Tensor,
}

impl Cholesky {
    pub fn new(a: &Tensor) -> Result<Self> {
        Ok(Self {
            factor: cholesky(a)?,
        })
    }

    pub fn factor(&self) -> &Tensor {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn logdet(&self) -> f64 {
        let n = self.dim();
        (0..n).map(|i| self.factor.at(i, i).ln()).sum::<f64>() * 2.0
    }

    /// Solves `L Y = B` in place for a row-major `n x k` right-hand side.
    pub fn forward_solve_in_place(&self, b: &mut [f64], k: usize) {
        let n = self.dim();
        let l = self.factor.data();
        for i in 0..n {
            let (head, tail) = b.split_at_mut(i * k);
            let row = &mut tail[..k];
            for p in 0..i {
                let coef = l[i * n + p];
                if coef != 0.0 {
                    let prev = &head[p * k..(p + 1) * k];
                    for (r, v) in row.iter_mut().zip(prev) {
                        *r -= coef * v;
                    }
                }
            }
            let d = l[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
        }
    }

    /// Solves `L^T X = Y` in place for a row-major `n x k` right-hand side.
    pub fn backward_solve_in_place(&self, b: &mut [f64], k: usize) {
        let n = self.dim();
        let l = self.factor.data();
        for i in (0..n).rev() {
            let (head, tail) = b.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for p in i + 1..n {
                let coef = l[p * n + i];
                if coef != 0.0 {
                    let next = &tail[(p - i - 1) * k..(p - i) * k];
                    for (r, v) in row.iter_mut().zip(next) {
                        *r -= coef * v;
                    }
                }
            }
            let d = l[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
        }
    }

    /// `A^{-1} B` for `B` of shape `(n, k)`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let (r, k) = b.dims2()?;
        if r != self.dim() {
            return Err(Error::invalid(format!(
                "solve: system of size {} with rhs {:?}",
                self.dim(),
                b.shape()
            )));
        }
        let mut x = b.data().to_vec();
        self.forward_solve_in_place(&mut x, k);
        self.backward_solve_in_place(&mut x, k);
        Tensor::matrix(r, k, x)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::invalid("solve_vec: length mismatch"));
        }
        let mut x = b.to_vec();
        self.forward_solve_in_place(&mut x, 1);
        self.backward_solve_in_place(&mut x, 1);
        Ok(x)
    }

    /// `L^{-1}`, lower triangular.
    pub fn inverse_factor(&self) -> Tensor {
        let n = self.dim();
        let mut x = Tensor::eye(n).into_data();
        self.forward_solve_in_place(&mut x, n);
        Tensor::matrix(n, n, x).expect("square")
    }

    /// `A^{-1} = L^{-T} L^{-1}`.
    pub fn inverse(&self) -> Tensor {
        let n = self.dim();
        let linv = self.inverse_factor();
        let mut out = vec![0.0; n * n];
        gemm_tn(n, n, n, linv.data(), linv.data(), &mut out, false);
        // Exact symmetry keeps downstream adjoints symmetric.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        Tensor::matrix(n, n, out).expect("square")
    }

    /// `tr(A^{-1})` as the squared Frobenius norm of `L^{-1}`.
    pub fn inverse_trace(&self) -> f64 {
        self.inverse_factor().norm_sq()
    }
}

/// `log det A` through a Cholesky factorization.
pub fn logdet_dense(a: &Tensor) -> Result<f64> {
    Ok(Cholesky::new(a)?.logdet())
}

/// `log det((1/M) G G^T + lambda I_D)` for a `D x M` factor `G`, via the
/// matrix determinant lemma:
/// `D log lambda + log det(I_M + G^T G / (M lambda))`. Costs `O(D M^2)`.
pub fn lowrank_logdet(gc: &Tensor, lambda: f64) -> Result<f64> {
    let (d, m) = gc.dims2()?;
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if m == 0 {
        return Err(Error::invalid("low-rank factor needs at least one column"));
    }
    let mut small = vec![0.0; m * m];
    gemm_tn(m, d, m, gc.data(), gc.data(), &mut small, false);
    let s = 1.0 / (m as f64 * lambda);
    for (idx, v) in small.iter_mut().enumerate() {
        *v *= s;
        if idx / m == idx % m {
            *v += 1.0;
        }
    }
    let inner = Tensor::matrix(m, m, small)?;
    Ok(d as f64 * lambda.ln() + logdet_dense(&inner)?)
}

/// `(B^{-1} kron I_c) V` for `V` of shape `(n*c, k)`, with the output index
/// varying fastest along the rows of `V`.
///
/// Row-major `(n*c, k)` data is also a row-major `(n, c*k)` matrix, so the
/// Kronecker solve is one Cholesky solve with `c*k` right-hand sides.
pub fn kron_identity_solve(chol: &Cholesky, v: &Tensor, c: usize) -> Result<Tensor> {
    let (d, k) = v.dims2()?;
    let n = chol.dim();
    if c == 0 || d != n * c {
        return Err(Error::invalid(format!(
            "kron solve: {} rows for base size {n} and {c} outputs",
            d
        )));
    }
    let mut x = v.data().to_vec();
    chol.forward_solve_in_place(&mut x, c * k);
    chol.backward_solve_in_place(&mut x, c * k);
    Tensor::matrix(d, k, x)
}

/// Symmetric eigenvalues by cyclic Jacobi rotations. Intended for the small
/// matrices used in rank and spectrum checks.
pub fn symmetric_eigenvalues(a: &Tensor) -> Result<Vec<f64>> {
    let (n, c) = a.dims2()?;
    if n != c {
        return Err(Error::invalid("eigenvalues of non-square matrix"));
    }
    let mut m = a.data().to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = cs * mkp - sn * mkq;
                    m[k * n + q] = sn * mkp + cs * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = cs * mpk - sn * mqk;
                    m[q * n + k] = sn * mpk + cs * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let a = random_matrix(n, n, rng);
        let mut s = a.matmul(&a.transpose().unwrap()).unwrap();
        for i in 0..n {
            let v = s.at(i, i) + n as f64 * 0.1;
            s.set(i, i, v);
        }
        s
    }

    fn reconstruct(l: &Tensor) -> Tensor {
        l.matmul(&l.transpose().unwrap()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Tensor::eye(3)).unwrap(), Tensor::eye(3));
    }

    #[test]
    fn cholesky_reconstructs_2x2() {
        let a = Tensor::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.at(0, 1), 0.0);
        let err = reconstruct(&l).sub(&a).unwrap().max_abs();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { index, pivot }) => {
                assert_eq!(index, 1);
                assert!((pivot + 3.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cholesky_reconstruction_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..12 {
            let a = spd(n, &mut rng);
            let l = cholesky(&a).unwrap();
            let err = reconstruct(&l).sub(&a).unwrap().max_abs();
            assert!(err < 1e-10 * a.max_abs());
        }
    }

    #[test]
    fn solve_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = spd(6, &mut rng);
        let ch = Cholesky::new(&a).unwrap();
        let b = random_matrix(6, 3, &mut rng);
        let x = ch.solve(&b).unwrap();
        let back = a.matmul(&x).unwrap();
        assert!(back.sub(&b).unwrap().max_abs() < 1e-10);
        let inv = ch.inverse();
        let id = a.matmul(&inv).unwrap();
        assert!(id.sub(&Tensor::eye(6)).unwrap().max_abs() < 1e-10);
        let tr: f64 = (0..6).map(|i| inv.at(i, i)).sum();
        assert!((ch.inverse_trace() - tr).abs() < 1e-10 * tr);
    }

    #[test]
    fn lowrank_logdet_pure_jitter() {
        let g = Tensor::zeros(&[4, 2]);
        let v = lowrank_logdet(&g, 0.5).unwrap();
        assert!((v - 4.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn lowrank_logdet_rejects_nonpositive_lambda() {
        let g = Tensor::zeros(&[4, 2]);
        assert!(matches!(lowrank_logdet(&g, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(lowrank_logdet(&g, -1.0), Err(Error::InvalidArgument(_))));
    }

    fn dense_lowrank(g: &Tensor, lambda: f64) -> Tensor {
        let (d, m) = g.dims2().unwrap();
        let mut k = g.matmul(&g.transpose().unwrap()).unwrap().scale(1.0 / m as f64);
        for i in 0..d {
            let v = k.at(i, i) + lambda;
            k.set(i, i, v);
        }
        k
    }

    #[test]
    fn lowrank_logdet_matches_dense_12x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_matrix(12, 3, &mut rng);
        let fast = lowrank_logdet(&g, 0.1).unwrap();
        let dense = logdet_dense(&dense_lowrank(&g, 0.1)).unwrap();
        assert!((fast - dense).abs() <= 1e-9 * dense.abs(), "{fast} vs {dense}");
    }

    #[test]
    fn eigenvalues_of_diagonalizable() {
        let a = Tensor::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&a).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn cholesky_roundtrips_lower_factors(n in 1usize..10, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut l = random_matrix(n, n, &mut rng);
                for i in 0..n {
                    for j in i + 1..n {
                        l.set(i, j, 0.0);
                    }
                    let d = l.at(i, i).abs() + 0.5;
                    l.set(i, i, d);
                }
                let a = reconstruct(&l);
                let back = cholesky(&a).unwrap();
                prop_assert!(back.sub(&l).unwrap().max_abs() < 1e-9);
            }

            #[test]
            fn lowrank_logdet_equals_dense(d in 1usize..=32, m in 1usize..=8, lam in 1e-3f64..2.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = random_matrix(d, m, &mut rng);
                let fast = lowrank_logdet(&g, lam).unwrap();
                let dense = logdet_dense(&dense_lowrank(&g, lam)).unwrap();
                prop_assert!((fast - dense).abs() <= 1e-9 * dense.abs().max(1.0));
            }
        }
    }
}
