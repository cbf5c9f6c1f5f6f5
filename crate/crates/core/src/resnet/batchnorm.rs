use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Whether batch norm uses batch statistics (and a recorded trace) or the
/// running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization with learned shift and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight of the old running statistic in each update.
    pub momentum: f64,
}

/// Values kept from a train-mode pass for the backward pass and the running
/// statistics update.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub(crate) normalized: Matrix,
    pub(crate) inv_std: Vec<f64>,
    pub(crate) batch_mean: Vec<f64>,
    pub(crate) batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x` and, in train mode, folds the batch statistics into the
    /// running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        self.check_dim(x)?;
        match mode {
            Mode::Train => {
                let (out, cache) = self.forward_train(x)?;
                self.update_running(&cache);
                Ok(out)
            }
            Mode::Eval => Ok(self.forward_eval(x)),
        }
    }

    pub(crate) fn check_dim(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "batch norm over {} features got {} columns",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Batch-statistics pass; does not touch the running statistics.
    pub(crate) fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BnCache)> {
        let n = x.rows();
        if n < 2 {
            return Err(Error::usage(format!(
                "train-mode batch norm needs a batch of at least 2, got {n}"
            )));
        }
        let d = self.dim();
        let nf = n as f64;
        let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / nf).collect();
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        for v in &mut var {
            *v /= nf;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut normalized = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            let xr = x.row(r);
            for c in 0..d {
                let xhat = (xr[c] - mean[c]) * inv_std[c];
                normalized.set(r, c, xhat);
                out.set(r, c, self.gamma[c] * xhat + self.beta[c]);
            }
        }
        Ok((
            out,
            BnCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    pub(crate) fn forward_eval(&self, x: &Matrix) -> Matrix {
        let d = self.dim();
        let scale: Vec<f64> = (0..d)
            .map(|c| self.gamma[c] / (self.running_var[c] + self.eps).sqrt())
            .collect();
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        out
    }

    pub(crate) fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for c in 0..self.dim() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * cache.batch_mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * cache.batch_var[c];
        }
    }

    /// Train-mode backward: returns `(dx, dgamma, dbeta)`.
    pub(crate) fn backward_train(&self, cache: &BnCache, dy: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let (n, d) = dy.shape();
        let nf = n as f64;
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for r in 0..n {
            let g = dy.row(r);
            let xh = cache.normalized.row(r);
            for c in 0..d {
                dgamma[c] += g[c] * xh[c];
                dbeta[c] += g[c];
            }
        }
        // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
        let mut dx = Matrix::zeros(n, d);
        for r in 0..n {
            let g = dy.row(r);
            let xh = cache.normalized.row(r);
            let out = dx.row_mut(r);
            for c in 0..d {
                out[c] = self.gamma[c] * cache.inv_std[c] / nf
                    * (nf * g[c] - dbeta[c] - xh[c] * dgamma[c]);
            }
        }
        (dx, dgamma, dbeta)
    }

    /// Eval-mode backward (running statistics are constants).
    pub(crate) fn backward_eval(&self, x: &Matrix, dy: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let (n, d) = dy.shape();
        let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut dx = Matrix::zeros(n, d);
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for r in 0..n {
            let g = dy.row(r);
            let xr = x.row(r);
            for c in 0..d {
                let xhat = (xr[c] - self.running_mean[c]) * inv_std[c];
                dgamma[c] += g[c] * xhat;
                dbeta[c] += g[c];
                dx.set(r, c, g[c] * self.gamma[c] * inv_std[c]);
            }
        }
        (dx, dgamma, dbeta)
    }
}
