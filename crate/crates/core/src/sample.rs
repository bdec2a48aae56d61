//! Observed design split into the retained block `X`, the tested block `W`
//! and the response `Y`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct Sample {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: DMatrix<f64>, w: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        if w.nrows() != n || y.len() != n {
            return Err(Error::invalid("X, W and Y must have matching row counts"));
        }
        if n == 0 || x.ncols() == 0 || w.ncols() == 0 {
            return Err(Error::invalid("sample must be non-empty with p1, p2 >= 1"));
        }
        if x.iter().chain(w.iter()).any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample contains non-finite values"));
        }
        Ok(Sample { x, w, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p1(&self) -> usize {
        self.x.ncols()
    }

    pub fn p2(&self) -> usize {
        self.w.ncols()
    }
}
