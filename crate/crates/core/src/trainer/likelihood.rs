use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::ndcore::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LikelihoodConfig {
    /// `y ~ N(f, noise_var)` per observed output.
    Gaussian { noise_var: f64 },
    /// `y ~ Categorical(softmax(f / T))`.
    Categorical {
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default)]
        learn_temperature: bool,
    },
}

fn one() -> f64 {
    1.0
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LikelihoodConfig::Gaussian { noise_var } => noise_var > 0.0 && noise_var.is_finite(),
            LikelihoodConfig::Categorical { temperature, .. } => temperature > 0.0 && temperature.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad likelihood settings: {self:?}")))
        }
    }
}

fn one_hot(labels: &[usize], classes: usize, repeat: usize) -> Tensor {
    let n = labels.len();
    let mut t = Tensor::zeros(&[repeat * n, classes]);
    for r in 0..repeat {
        for (i, &l) in labels.iter().enumerate() {
            t.set(r * n + i, l, 1.0);
        }
    }
    t
}

/// `(1/U) Σ_u Σ_data log p(y | f_u)` for function samples `f` of shape
/// `(U, n·C)` laid out point-major. `log_temp` is only read by the
/// categorical likelihood; `None` there means temperature 1.
pub fn expected_loglik<'t>(
    f: Var<'t>,
    targets: &Targets,
    likelihood: &LikelihoodConfig,
    log_temp: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let fv = f.value();
    if !fv.all_finite() {
        return Err(Error::Numeric("function samples contain non-finite values".into()));
    }
    let (u, d) = fv.dims2()?;
    let tape = f.tape();
    match (targets, likelihood) {
        (Targets::Real { y, mask }, LikelihoodConfig::Gaussian { noise_var }) => {
            if y.numel() != d {
                return Err(Error::invalid(format!("{} targets for {d} sample columns", y.numel())));
            }
            let neg_y = tape.constant(Tensor::matrix(1, d, y.data().iter().map(|v| -v).collect())?);
            let mut sq = f.add_row(neg_y)?.square();
            let observed = match mask {
                Some(m) => {
                    let rep = Tensor::matrix(1, d, m.data().to_vec())?;
                    sq = sq.mul(tape.constant(Tensor::zeros(&[u, d]).add_row(&rep)?))?;
                    m.sum()
                }
                None => d as f64,
            };
            let constant = -0.5 * (2.0 * PI * noise_var).ln() * observed;
            Ok(sq.sum().scale(-0.5 / (noise_var * u as f64)).add_scalar(constant))
        }
        (Targets::Labels { labels, classes }, LikelihoodConfig::Categorical { .. }) => {
            let n = labels.len();
            if n * classes != d {
                return Err(Error::invalid(format!("{n} labels x {classes} classes for {d} sample columns")));
            }
            let mut logits = f.reshape(&[u * n, *classes])?;
            if let Some(lt) = log_temp {
                logits = logits.scale_by(lt.scale(-1.0).exp())?;
            }
            let picked = logits.log_softmax_rows()?.mul(tape.constant(one_hot(labels, *classes, u)))?;
            Ok(picked.sum().scale(1.0 / u as f64))
        }
        _ => Err(Error::invalid("likelihood does not match the target type")),
    }
}
