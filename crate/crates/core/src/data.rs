//! In-memory supervised datasets.

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Real-valued targets `(n, C)`. Entries where `mask` is 0 are unobserved
    /// and contribute no likelihood.
    Real { y: Tensor, mask: Option<Tensor> },
    /// Class indices in `0..classes`.
    Labels { labels: Vec<usize>, classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Inputs `(n, d)`.
    pub x: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn regression(x: Tensor, y: Tensor) -> Result<Self> {
        Self::new(x, Targets::Real { y, mask: None })
    }

    pub fn classification(x: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(x, Targets::Labels { labels, classes })
    }

    pub fn new(x: Tensor, targets: Targets) -> Result<Self> {
        let (n, _) = x.dims2()?;
        match &targets {
            Targets::Real { y, mask } => {
                let (ny, _) = y.dims2()?;
                if ny != n {
                    return Err(Error::invalid(format!("{n} inputs but {ny} targets")));
                }
                if let Some(m) = mask {
                    if !m.same_shape(y) {
                        return Err(Error::invalid("mask shape differs from targets"));
                    }
                }
            }
            Targets::Labels { labels, classes } => {
                if labels.len() != n {
                    return Err(Error::invalid(format!("{n} inputs but {} labels", labels.len())));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
                }
            }
        }
        Ok(Self { x, targets })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// Number of network outputs the targets call for.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Real { y, .. } => y.cols(),
            Targets::Labels { classes, .. } => *classes,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let targets = match &self.targets {
            Targets::Real { y, mask } => Targets::Real {
                y: y.select_rows(idx)?,
                mask: mask.as_ref().map(|m| m.select_rows(idx)).transpose()?,
            },
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Ok(Self { x: self.x.select_rows(idx)?, targets })
    }
}
