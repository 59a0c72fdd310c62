use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observed responses and design, `y = X β + error`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if y.is_empty() || x.ncols() == 0 {
            return Err(Error::InvalidDataset(
                "dataset must have at least one row and one predictor".into(),
            ));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("response entry {i} is not finite")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (k % x.nrows(), k / x.nrows());
            return Err(Error::InvalidDataset(format!("design entry ({i}, {j}) is not finite")));
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Aspect ratio δ = n/p.
    pub fn delta(&self) -> f64 {
        self.n() as f64 / self.p() as f64
    }
}
