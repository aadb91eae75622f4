//! Alignment and uniformity of embeddings, and a linear probe.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::ViewBatch;
use crate::error::{Error, Result};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Alignment exponent.
    pub alpha: f64,
    /// Uniformity temperature.
    pub t_unif: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            t_unif: 2.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.t_unif > 0.0) {
            return Err(Error::invalid(format!(
                "alpha and t_unif must be positive, got {} and {}",
                self.alpha, self.t_unif
            )));
        }
        Ok(())
    }
}

/// Mean of `‖z_i^(1) - z_i^(2)‖^α` over positive pairs.
pub fn alignment_loss(z1: &Matrix, z2: &Matrix, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if z1.dim() != z2.dim() || z1.nrows() == 0 {
        return Err(Error::invalid("alignment needs two nonempty views of equal shape"));
    }
    let total: f64 = z1
        .rows()
        .into_iter()
        .zip(z2.rows())
        .map(|(a, b)| {
            let d = &a - &b;
            d.dot(&d).sqrt().powf(alpha)
        })
        .sum();
    Ok(total / z1.nrows() as f64)
}

/// `log` of the mean over unordered pairs `i < j` of `exp(-t ‖z_i - z_j‖²)`.
pub fn uniformity_loss(z: &Matrix, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("t must be positive, got {t}")));
    }
    let n = z.nrows();
    if n < 2 {
        return Err(Error::invalid("uniformity needs at least 2 rows"));
    }
    let mut logs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = &z.row(i) - &z.row(j);
            logs.push(-t * d.dot(&d));
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = logs.iter().map(|x| (x - max).exp()).sum::<f64>() / logs.len() as f64;
    Ok(max + mean.ln())
}

/// Uniformity of both views pooled into one sample.
pub fn batch_uniformity(batch: &ViewBatch, t: f64) -> Result<f64> {
    let pooled = concatenate(Axis(0), &[batch.z1.view(), batch.z2.view()]).expect("same width");
    uniformity_loss(&pooled, t)
}

/// Linear probe settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// Test accuracy of multinomial logistic regression fit on the training
/// split by full-batch gradient descent from a zero initialization.
///
/// Features are standardized with training-split statistics.
pub fn linear_probe(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
) -> Result<f64> {
    linear_probe_with(train_x, train_y, test_x, test_y, &ProbeConfig::default())
}

pub fn linear_probe_with(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::invalid("one label per embedding row expected"));
    }
    if train_x.nrows() == 0 || test_x.nrows() == 0 {
        return Err(Error::invalid("probe needs nonempty train and test splits"));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::invalid("train and test embeddings differ in width"));
    }
    let classes = train_y.iter().chain(test_y).max().expect("nonempty") + 1;
    let n = train_x.nrows() as f64;

    let mean = train_x.mean_axis(Axis(0)).expect("nonempty");
    let std = train_x
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let standardize = |x: &Matrix| (x - &mean) / &std;
    let (xtr, xte) = (standardize(train_x), standardize(test_x));

    let mut onehot = Array2::<f64>::zeros((train_y.len(), classes));
    for (i, &y) in train_y.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((xtr.ncols(), classes));
    let mut b = Array1::<f64>::zeros(classes);
    for _ in 0..cfg.steps {
        let mut p = xtr.dot(&w) + &b;
        softmax_rows(&mut p);
        let residual = (p - &onehot) / n;
        let gw = xtr.t().dot(&residual) + &w * cfg.l2;
        let gb = residual.sum_axis(Axis(0));
        w.scaled_add(-cfg.learning_rate, &gw);
        b.scaled_add(-cfg.learning_rate, &gb);
    }
    let scores = xte.dot(&w) + &b;
    let correct = scores
        .rows()
        .into_iter()
        .zip(test_y)
        .filter(|(row, &y)| argmax(row.as_slice().expect("standard layout")) == y)
        .count();
    Ok(correct as f64 / test_y.len() as f64)
}

fn softmax_rows(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    // First maximum wins, so ties resolve deterministically.
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
