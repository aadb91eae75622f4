//! Dense symmetric eigendecomposition and the spectral quantities built on
//! it: heat kernels, the spectral gap, the degree-weighted mean embedding
//! and the embedding/diffusion consistency constant.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Matrix;

/// Asymmetry tolerated by [`eigh`] (max absolute entry of `M - Mᵀ`).
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues at or below this are treated as zero.
pub const ZERO_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order and the matching orthonormal eigenvectors
/// (stored as columns).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `V f(Λ) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled = &self.eigenvectors * &self.eigenvalues.mapv(f);
        let mut out = scaled.dot(&self.eigenvectors.t());
        symmetrize(&mut out);
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_spectrum(|x| x)
    }
}

pub fn max_asymmetry(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

pub fn frobenius_norm(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius_dist_sq(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm is at most
/// `1e-12 * max(1, ‖M‖_F)`.
pub fn eigh(m: &Matrix) -> Result<EigenDecomposition> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("eigh input has non-finite entries"));
    }
    let asym = max_asymmetry(m.view());
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "eigh input is not symmetric (max |M - Mᵀ| = {asym:e})"
        )));
    }
    let mut a = m.clone();
    symmetrize(&mut a);
    let mut v: Matrix = Array2::eye(n);
    let tol = 1e-12 * frobenius_norm(a.view()).max(1.0);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let eigenvalues = order.iter().map(|&i| a[[i, i]]).collect();
    let eigenvectors = v.select(Axis(1), &order);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * a[[i, j]] * a[[i, j]];
        }
    }
    sum.sqrt()
}

// A <- Jᵀ A J, V <- V J with J the (p, q) Givens rotation [[c, s], [-s, c]].
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let (akp, akq) = (a[[k, p]], a[[k, q]]);
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let (apk, aqk) = (a[[p, k]], a[[q, k]]);
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
    a[[p, q]] = 0.0;
    a[[q, p]] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

/// Heat kernel `exp(-t_d L)` of a symmetric generator.
pub fn heat_kernel(l: &Matrix, t_d: f64) -> Result<Matrix> {
    if !(t_d > 0.0) {
        return Err(Error::invalid(format!("diffusion scale must be > 0, got {t_d}")));
    }
    Ok(eigh(l)?.map_spectrum(|x| (-t_d * x).exp()))
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &Matrix) -> Result<f64> {
    Ok(eigh(m)?
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs())))
}

/// Smallest eigenvalue strictly above `zero_tol`.
pub fn lambda2(l: &Matrix, zero_tol: f64) -> Result<f64> {
    lambda2_of(&eigh(l)?.eigenvalues, zero_tol)
}

pub fn lambda2_of(eigenvalues: &Array1<f64>, zero_tol: f64) -> Result<f64> {
    eigenvalues
        .iter()
        .copied()
        .find(|&x| x > zero_tol)
        .ok_or(Error::NoSpectralGap { zero_tol })
}

/// Number of eigenvalues at or below `zero_tol` in absolute value.
pub fn zero_multiplicity(eigenvalues: &Array1<f64>, zero_tol: f64) -> usize {
    eigenvalues.iter().filter(|x| x.abs() <= zero_tol).count()
}

/// `μ = Σ_i d_i z_i / Σ_k d_k` and `‖μ‖²`.
pub fn degree_weighted_mean(z: &Matrix, degrees: &Array1<f64>) -> Result<(Array1<f64>, f64)> {
    if z.nrows() != degrees.len() {
        return Err(Error::invalid("degree vector length differs from row count"));
    }
    let total: f64 = degrees.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGraph("all degrees are zero".into()));
    }
    let mu = degrees.dot(z) / total;
    let norm_sq = mu.dot(&mu);
    Ok((mu, norm_sq))
}

/// Denominators below this make the consistency constant undefined.
pub const DEGENERATE_DIFFUSION: f64 = 1e-12;

/// Tightest `c` with `Σ_i ‖z_i⁽¹⁾ - z_i⁽²⁾‖² ≤ c ‖P⁽¹⁾ - P⁽²⁾‖_F²` for this
/// batch.
pub fn estimate_c(z1: &Matrix, z2: &Matrix, p1: &Matrix, p2: &Matrix) -> Result<f64> {
    if z1.dim() != z2.dim() || p1.dim() != p2.dim() {
        return Err(Error::invalid("shape mismatch in estimate_c"));
    }
    let denom = frobenius_dist_sq(p1, p2);
    if denom <= DEGENERATE_DIFFUSION {
        return Err(Error::Degenerate(format!(
            "heat kernels coincide (‖P1 - P2‖_F² = {denom:e})"
        )));
    }
    Ok(frobenius_dist_sq(z1, z2) / denom)
}

/// Spectral quantities of one view graph.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub heat_kernel: Matrix,
    /// `None` when the Laplacian has no eigenvalue above [`ZERO_TOL`].
    pub lambda2: Option<f64>,
    pub mu: Array1<f64>,
    pub mu_norm_sq: f64,
    /// Consistency constant shared by the two views; `None` if degenerate.
    pub c_hat: Option<f64>,
}

/// Summaries of both views of a batch.
pub fn summarize_views(
    views: [(&Matrix, &Matrix, &Array1<f64>); 2],
    t_d: f64,
) -> Result<[SpectralSummary; 2]> {
    if !(t_d > 0.0) {
        return Err(Error::invalid(format!("diffusion scale must be > 0, got {t_d}")));
    }
    let mut out = Vec::with_capacity(2);
    for (l, z, degrees) in views {
        let eig = eigh(l)?;
        let heat_kernel = eig.map_spectrum(|x| (-t_d * x).exp());
        let (mu, mu_norm_sq) = degree_weighted_mean(z, degrees)?;
        out.push(SpectralSummary {
            heat_kernel,
            lambda2: lambda2_of(&eig.eigenvalues, ZERO_TOL).ok(),
            mu,
            mu_norm_sq,
            c_hat: None,
        });
    }
    let c = estimate_c(
        views[0].1,
        views[1].1,
        &out[0].heat_kernel,
        &out[1].heat_kernel,
    )
    .ok();
    for s in &mut out {
        s.c_hat = c;
    }
    let second = out.pop().expect("two summaries");
    let first = out.pop().expect("two summaries");
    Ok([first, second])
}
