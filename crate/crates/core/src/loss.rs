//! Contrastive and spectral graph-matching losses.
//!
//! Within one view, the unit-norm embeddings of a batch define a
//! similarity graph: `S = Z Zᵀ`, thresholded at a per-view percentile `θ`
//! of the off-diagonal similarities. The spectral loss is the squared
//! Frobenius distance between the two views' normalized Laplacians.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

/// How the thresholded similarity graph enters the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// 0/1 adjacency. The loss is piecewise constant in the embeddings.
    Binary,
    /// Similarity-weighted adjacency `W = S ⊙ A` with the mask `A` held
    /// constant, so gradients reach the embeddings through `S`.
    Soft,
}

impl FromStr for AdjacencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(AdjacencyMode::Binary),
            "soft" => Ok(AdjacencyMode::Soft),
            other => Err(Error::invalid(format!("unknown adjacency mode {other:?}"))),
        }
    }
}

impl fmt::Display for AdjacencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjacencyMode::Binary => "binary",
            AdjacencyMode::Soft => "soft",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau: f64,
    pub beta: f64,
    pub percentile: f64,
    pub adjacency: AdjacencyMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.2,
            beta: 0.5,
            percentile: 80.0,
            adjacency: AdjacencyMode::Soft,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        check_percentile(self.percentile)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be > 0, got {tau}")))
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("percentile must be in (0, 100], got {p}")))
    }
}

/// `S = Z Zᵀ`, symmetrized exactly.
pub fn similarity_matrix(z: &Matrix) -> Matrix {
    let mut s = z.dot(&z.t());
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            s[[j, i]] = s[[i, j]];
        }
    }
    s
}

/// Nearest-rank `p`-th percentile of the strict upper triangle of `S`.
pub fn percentile_threshold(s: &Matrix, p: f64) -> Result<f64> {
    check_percentile(p)?;
    let n = s.nrows();
    if n < 2 {
        return Err(Error::invalid("percentile threshold needs at least 2 rows"));
    }
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            values.push(s[[i, j]]);
        }
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let rank = ((p * m as f64 / 100.0) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    Ok(values[rank - 1])
}

/// `A_ij = 1` iff `S_ij > θ` and `i ≠ j`.
pub fn adjacency(s: &Matrix, theta: f64) -> Matrix {
    let n = s.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && s[[i, j]] > theta {
            1.0
        } else {
            0.0
        }
    })
}

/// Similarity-weighted adjacency `max(S ⊙ A, 0)`.
pub fn soft_weights(s: &Matrix, a: &Matrix) -> Matrix {
    let mut w = s * a;
    w.mapv_inplace(|x| x.max(0.0));
    w
}

/// `L = I - D^{-1/2} W D^{-1/2}`; zero-degree nodes get `D^{-1/2} = 0`,
/// so their row and column of `L` are those of the identity.
pub fn normalized_laplacian(w: &Matrix) -> Result<Matrix> {
    Ok(laplacian_parts(w)?.0)
}

/// Laplacian together with the degree vector and `D^{-1/2}`.
pub(crate) fn laplacian_parts(w: &Matrix) -> Result<(Matrix, Array1<f64>, Array1<f64>)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::invalid("adjacency must be square"));
    }
    if w.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("adjacency has negative weights"));
    }
    let degrees = w.sum_axis(Axis(1));
    let inv_sqrt = degrees.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    let mut l = Array2::from_shape_fn((n, n), |(i, j)| -inv_sqrt[i] * w[[i, j]] * inv_sqrt[j]);
    for i in 0..n {
        l[[i, i]] += 1.0;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (l[[i, j]] + l[[j, i]]);
            l[[i, j]] = avg;
            l[[j, i]] = avg;
        }
    }
    Ok((l, degrees, inv_sqrt))
}

/// `‖L1 - L2‖_F²`.
pub fn spec_match_loss(l1: &Matrix, l2: &Matrix) -> f64 {
    crate::spectral::frobenius_dist_sq(l1, l2)
}

/// The similarity graph of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    pub similarity: Matrix,
    pub theta: f64,
    pub adjacency: Matrix,
    /// Weighted adjacency; present in soft mode only.
    pub weights: Option<Matrix>,
    /// Row sums of the matrix the Laplacian was built from.
    pub degrees: Array1<f64>,
    pub laplacian: Matrix,
}

impl ViewGraph {
    pub fn build(z: &Matrix, percentile: f64, mode: AdjacencyMode) -> Result<Self> {
        let similarity = similarity_matrix(z);
        let theta = percentile_threshold(&similarity, percentile)?;
        let adjacency = adjacency(&similarity, theta);
        let weights = match mode {
            AdjacencyMode::Binary => None,
            AdjacencyMode::Soft => Some(soft_weights(&similarity, &adjacency)),
        };
        let (laplacian, degrees, _) = laplacian_parts(weights.as_ref().unwrap_or(&adjacency))?;
        Ok(ViewGraph {
            similarity,
            theta,
            adjacency,
            weights,
            degrees,
            laplacian,
        })
    }

    pub fn n(&self) -> usize {
        self.similarity.nrows()
    }

    /// JSON dump with row-major arrays.
    pub fn to_json(&self) -> serde_json::Value {
        fn rows(m: &Matrix) -> Vec<Vec<f64>> {
            m.rows().into_iter().map(|r| r.to_vec()).collect()
        }
        serde_json::json!({
            "S": rows(&self.similarity),
            "theta": self.theta,
            "A": rows(&self.adjacency),
            "W": self.weights.as_ref().map(rows),
            "D": self.degrees.to_vec(),
            "L": rows(&self.laplacian),
        })
    }
}

/// Stacks the two views into `U = [Z1; Z2]` and returns `U Uᵀ`.
pub(crate) fn joint_similarity(z1: &Matrix, z2: &Matrix) -> Result<Matrix> {
    if z1.dim() != z2.dim() {
        return Err(Error::invalid(format!(
            "view shapes differ: {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    if z1.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let u = concatenate(Axis(0), &[z1.view(), z2.view()]).expect("same width");
    Ok(similarity_matrix(&u))
}

/// Loss of one anchor row of the joint similarity matrix given the value of
/// its positive similarity; all other similarities are read from `row`.
pub fn anchor_loss(row: &[f64], anchor: usize, positive: usize, s_pos: f64, tau: f64) -> f64 {
    let logits = row.iter().enumerate().filter(|&(c, _)| c != anchor).map(|(c, &s)| {
        if c == positive {
            s_pos / tau
        } else {
            s / tau
        }
    });
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - s_pos / tau
}

/// Per-anchor InfoNCE terms `l_i^(v)`, ordered view 1 then view 2.
///
/// `positive_override` replaces every positive-pair similarity (used for
/// the perfectly aligned reference loss).
pub fn info_nce_terms(
    z1: &Matrix,
    z2: &Matrix,
    tau: f64,
    positive_override: Option<f64>,
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let g = joint_similarity(z1, z2)?;
    let n = z1.nrows();
    Ok((0..2 * n)
        .map(|r| {
            let pos = (r + n) % (2 * n);
            let s_pos = positive_override.unwrap_or(g[[r, pos]]);
            anchor_loss(g.row(r).as_slice().expect("standard layout"), r, pos, s_pos, tau)
        })
        .collect())
}

/// `ℒ_C = Σ_v Σ_i l_i^(v)`.
pub fn info_nce(z1: &Matrix, z2: &Matrix, tau: f64) -> Result<f64> {
    Ok(info_nce_terms(z1, z2, tau, None)?.iter().sum())
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub contrastive: f64,
    pub spectral: f64,
    pub views: [ViewGraph; 2],
}

/// `ℒ = ℒ_C + β ℒ_G` with per-view thresholds.
pub fn total_loss(z1: &Matrix, z2: &Matrix, cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let contrastive = info_nce(z1, z2, cfg.tau)?;
    let v1 = ViewGraph::build(z1, cfg.percentile, cfg.adjacency)?;
    let v2 = ViewGraph::build(z2, cfg.percentile, cfg.adjacency)?;
    let spectral = spec_match_loss(&v1.laplacian, &v2.laplacian);
    Ok(TotalLoss {
        total: contrastive + cfg.beta * spectral,
        contrastive,
        spectral,
        views: [v1, v2],
    })
}
