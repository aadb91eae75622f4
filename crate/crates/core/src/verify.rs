//! Numerical checks of the inequalities linking the Laplacian mismatch
//! `ℒ_G` to the contrastive gap and to the uniformity loss.
//!
//! Every check produces a [`BoundReport`] holding both sides of one
//! inequality `lhs ≤ rhs`. Monte-Carlo checks fold a multiple of the
//! estimated standard error into their tolerance.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_view, AugmentPolicy};
use crate::encoder::{embed, normalize_rows, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{self, AdjacencyMode, ViewGraph};
use crate::metrics::uniformity_loss;
use crate::seed;
use crate::spectral::{self, eigh, frobenius_dist_sq, frobenius_norm, ZERO_TOL};
use crate::Matrix;

/// Tolerance for inequalities that hold exactly up to rounding.
pub const EXACT_TOL: f64 = 1e-9;
/// Base tolerance of the uniformity bound before Monte-Carlo slack.
pub const UNIFORMITY_TOL: f64 = 1e-6;
/// Number of standard errors allowed on Monte-Carlo estimates.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The check's precondition did not hold (for example a degenerate
    /// consistency constant).
    Skipped,
}

/// Parameters a report was produced under.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One checked inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub tolerance: f64,
    /// `slack ≥ -tolerance`.
    pub passed: bool,
    pub status: Status,
    pub context: BoundContext,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundReport {
    pub fn check(name: &str, lhs: f64, rhs: f64, tolerance: f64, context: BoundContext) -> Self {
        let slack = rhs - lhs;
        let passed = slack >= -tolerance;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            tolerance,
            passed,
            status: if passed { Status::Pass } else { Status::Fail },
            context,
            note: None,
        }
    }

    pub fn skipped(name: &str, context: BoundContext, note: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            lhs: 0.0,
            rhs: 0.0,
            slack: 0.0,
            tolerance: 0.0,
            passed: true,
            status: Status::Skipped,
            context,
            note: Some(note.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        write!(
            f,
            "{status} {}: lhs={:.6e} rhs={:.6e} slack={:.3e}",
            self.name, self.lhs, self.rhs, self.slack
        )?;
        if let Some(seed) = self.context.seed {
            write!(f, " seed={seed}")?;
        }
        if let Some(note) = &self.note {
            write!(f, " ({note})")?;
        }
        Ok(())
    }
}

/// `‖P⁽¹⁾ - P⁽²⁾‖_F ≤ t_d ‖L⁽¹⁾ - L⁽²⁾‖_F` with `P = exp(-t_d L)`.
pub fn verify_duhamel(l1: &Matrix, l2: &Matrix, t_d: f64, context: BoundContext) -> Result<BoundReport> {
    if l1.dim() != l2.dim() {
        return Err(Error::invalid("Laplacian shapes differ"));
    }
    let p1 = spectral::heat_kernel(l1, t_d)?;
    let p2 = spectral::heat_kernel(l2, t_d)?;
    let lhs = frobenius_norm((&p1 - &p2).view());
    let rhs = t_d * frobenius_norm((l1 - l2).view());
    Ok(BoundReport::check("duhamel", lhs, rhs, EXACT_TOL, context))
}

/// Contrastive gap to perfect alignment against the Laplacian mismatch:
/// `|ℒ_C - ℒ_C*| ≤ (t_d² ĉ / τ) ℒ_G`, with binary view graphs at
/// `percentile`.
///
/// `ℒ_C*` sets every positive-pair similarity to 1 and keeps all other
/// similarities. Reports are skipped when `ĉ` is undefined.
pub fn verify_contrastive_gap(
    z1: &Matrix,
    z2: &Matrix,
    tau: f64,
    t_d: f64,
    percentile: f64,
    context: BoundContext,
) -> Result<BoundReport> {
    const NAME: &str = "contrastive_gap";
    let v1 = ViewGraph::build(z1, percentile, AdjacencyMode::Binary)?;
    let v2 = ViewGraph::build(z2, percentile, AdjacencyMode::Binary)?;
    let p1 = spectral::heat_kernel(&v1.laplacian, t_d)?;
    let p2 = spectral::heat_kernel(&v2.laplacian, t_d)?;
    let c_hat = match spectral::estimate_c(z1, z2, &p1, &p2) {
        Ok(c) => c,
        Err(Error::Degenerate(msg)) => return Ok(BoundReport::skipped(NAME, context, msg)),
        Err(e) => return Err(e),
    };
    let lc: f64 = loss::info_nce_terms(z1, z2, tau, None)?.iter().sum();
    let lc_star: f64 = loss::info_nce_terms(z1, z2, tau, Some(1.0))?.iter().sum();
    let lg = loss::spec_match_loss(&v1.laplacian, &v2.laplacian);
    let rhs = t_d * t_d * c_hat / tau * lg;
    Ok(BoundReport::check(NAME, (lc - lc_star).abs(), rhs, EXACT_TOL, context)
        .with_note(format!("c_hat={c_hat:.6e}")))
}

/// Central-difference derivatives of every per-anchor loss with respect to
/// its positive similarity, at each similarity value of `grid`.
pub fn positive_similarity_derivatives(z1: &Matrix, z2: &Matrix, tau: f64, grid: &[f64]) -> Result<Vec<f64>> {
    const H: f64 = 1e-6;
    let g = loss::joint_similarity(z1, z2)?;
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
    }
    let n = z1.nrows();
    let mut out = Vec::with_capacity(2 * n * grid.len());
    for r in 0..2 * n {
        let row = g.row(r).to_vec();
        let pos = (r + n) % (2 * n);
        for &s in grid {
            let up = loss::anchor_loss(&row, r, pos, s + H, tau);
            let down = loss::anchor_loss(&row, r, pos, s - H, tau);
            out.push((up - down) / (2.0 * H));
        }
    }
    Ok(out)
}

/// `max |∂l_i/∂s_pos| ≤ 1/τ` over anchors and a grid of positive
/// similarities in `[-1, 1]`.
pub fn verify_lipschitz(z1: &Matrix, z2: &Matrix, tau: f64, grid: &[f64], context: BoundContext) -> Result<BoundReport> {
    let d = positive_similarity_derivatives(z1, z2, tau, grid)?;
    let lhs = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_signed = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundReport::check("lipschitz", lhs, 1.0 / tau, 1e-6, context)
        .with_note(format!("max signed derivative {max_signed:.3e}")))
}

/// `s(z⁽¹⁾, z⁽²⁾) = 1 - ½‖z⁽¹⁾ - z⁽²⁾‖²` on unit rows; lhs is the largest
/// deviation.
pub fn verify_cosine_identity(z1: &Matrix, z2: &Matrix, context: BoundContext) -> Result<BoundReport> {
    if z1.dim() != z2.dim() {
        return Err(Error::invalid("view shapes differ"));
    }
    let lhs = z1
        .rows()
        .into_iter()
        .zip(z2.rows())
        .map(|(a, b)| {
            let d = &a - &b;
            (a.dot(&b) - (1.0 - 0.5 * d.dot(&d))).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(BoundReport::check("cosine_identity", lhs, 0.0, 1e-12, context))
}

/// Second-smallest eigenvalue.
fn second_eigenvalue(m: &Matrix) -> Result<f64> {
    let eig = eigh(m)?;
    if eig.eigenvalues.len() < 2 {
        return Err(Error::invalid("need at least a 2x2 matrix"));
    }
    Ok(eig.eigenvalues[1])
}

/// `(λ₂ - λ̄₂)² ≤ ‖L - L̄‖_F²`, with both eigenvalues taken as the
/// second-smallest of their matrix.
pub fn verify_hoffman_wielandt(l: &Matrix, l_bar: &Matrix, context: BoundContext) -> Result<BoundReport> {
    let diff = second_eigenvalue(l)? - second_eigenvalue(l_bar)?;
    let rhs = frobenius_dist_sq(l, l_bar);
    Ok(BoundReport::check("hoffman_wielandt", diff * diff, rhs, EXACT_TOL, context))
}

/// `½ Σ_ij (A_ij / Σ_k d_k) ‖z_i - z_j‖² ≥ λ₂ (1 - ‖μ‖²)` for a connected
/// graph with (weighted) adjacency `a`. Reported as `rhs ≤ lhs_sum`.
pub fn verify_rayleigh_step(a: &Matrix, z: &Matrix, context: BoundContext) -> Result<BoundReport> {
    let n = a.nrows();
    if a.ncols() != n || z.nrows() != n {
        return Err(Error::invalid("adjacency and embeddings disagree in size"));
    }
    let (l, degrees, _) = loss::laplacian_parts(a)?;
    let eig = eigh(&l)?;
    if degrees.iter().any(|&d| d <= 0.0) || spectral::zero_multiplicity(&eig.eigenvalues, ZERO_TOL) != 1 {
        return Err(Error::DegenerateGraph("Rayleigh step needs a connected graph".into()));
    }
    let total: f64 = degrees.sum();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if a[[i, j]] != 0.0 {
                let d = &z.row(i) - &z.row(j);
                sum += a[[i, j]] / total * d.dot(&d);
            }
        }
    }
    let lam2 = spectral::lambda2_of(&eig.eigenvalues, ZERO_TOL)?;
    let (_, mu_sq) = spectral::degree_weighted_mean(z, &degrees)?;
    // Written as lambda2 (1 - |mu|^2) <= half the edge sum.
    Ok(BoundReport::check(
        "rayleigh_step",
        lam2 * (1.0 - mu_sq),
        0.5 * sum,
        EXACT_TOL,
        context,
    ))
}

/// Evenly spaced points on `[0, 4]`.
pub fn chord_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| 4.0 * i as f64 / (points - 1) as f64).collect(),
    }
}

/// `e^{-tx} ≤ 1 - ((1 - e^{-4t})/4) x` on the grid; lhs is the largest
/// value of `e^{-tx} - chord(x)`.
pub fn verify_chord_bound(t: f64, grid: &[f64], context: BoundContext) -> Result<BoundReport> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("t must be > 0, got {t}")));
    }
    let slope = (1.0 - (-4.0 * t).exp()) / 4.0;
    let lhs = grid
        .iter()
        .map(|&x| (-t * x).exp() - (1.0 - slope * x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundReport::check("chord_bound", lhs, 0.0, 1e-12, context))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two values).
fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    (sample_var(xs) / xs.len() as f64).sqrt()
}

/// One connected augmentation draw of an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleDraw {
    pub z: Matrix,
    pub view: ViewGraph,
    pub lambda2: f64,
    pub mu_norm_sq: f64,
}

/// Monte-Carlo statistics of the Laplacian distribution of one batch.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    /// `L̄`, the mean Laplacian over connected draws.
    pub mean_laplacian: Matrix,
    /// `E[ℒ_G]` as the mean of `‖L_k - L_l‖²` over all pairs `k < l`.
    pub expected_loss_g: f64,
    /// `ℒ_G` of disjoint draw pairs `(0,1), (2,3), …`: i.i.d. samples.
    pub pair_losses: Vec<f64>,
    /// Standard error of the pair-sample mean.
    pub loss_g_se: f64,
    /// Second-smallest eigenvalue of `L̄`.
    pub lambda2_bar: f64,
    pub lambda2_mean: f64,
    pub lambda2_var: f64,
    pub mean_mu_norm_sq: f64,
    pub mu_norm_sq_se: f64,
    pub samples: usize,
    pub discarded: usize,
    pub draws: Vec<EnsembleDraw>,
}

impl EnsembleStats {
    pub fn discard_rate(&self) -> f64 {
        self.discarded as f64 / (self.samples + self.discarded) as f64
    }

    /// `mean ‖L_k - L̄‖²`.
    pub fn mean_deviation_sq(&self) -> f64 {
        let devs: Vec<f64> = self
            .draws
            .iter()
            .map(|d| frobenius_dist_sq(&d.view.laplacian, &self.mean_laplacian))
            .collect();
        mean(&devs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub draws: usize,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            draws: 64,
            percentile: 80.0,
            seed: 0,
        }
    }
}

fn is_connected(view: &ViewGraph, eigenvalues: &Array1<f64>) -> bool {
    view.degrees.iter().all(|&d| d > 0.0) && spectral::zero_multiplicity(eigenvalues, ZERO_TOL) == 1
}

/// Statistics over pre-computed embedding draws, one unit-row matrix per
/// draw, using binary view graphs. Disconnected draws are discarded.
pub fn ensemble_from_embeddings(zs: Vec<Matrix>, percentile: f64) -> Result<EnsembleStats> {
    let built = zs
        .into_par_iter()
        .map(|z| {
            let view = ViewGraph::build(&z, percentile, AdjacencyMode::Binary)?;
            let eig = eigh(&view.laplacian)?;
            if !is_connected(&view, &eig.eigenvalues) {
                return Ok(None);
            }
            let lambda2 = spectral::lambda2_of(&eig.eigenvalues, ZERO_TOL)?;
            let (_, mu_norm_sq) = spectral::degree_weighted_mean(&z, &view.degrees)?;
            Ok(Some(EnsembleDraw {
                z,
                view,
                lambda2,
                mu_norm_sq,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = built.len();
    let draws: Vec<EnsembleDraw> = built.into_iter().flatten().collect();
    let m = draws.len();
    if m < 2 {
        return Err(Error::InsufficientSamples { got: m, need: 2 });
    }

    // Mean as first draw plus averaged deviations: exact when draws agree.
    let first = &draws[0].view.laplacian;
    let mut dev_sum = Array2::<f64>::zeros(first.dim());
    for d in &draws[1..] {
        dev_sum += &(&d.view.laplacian - first);
    }
    let mean_laplacian = first + &(dev_sum / m as f64);
    let lambda2_bar = second_eigenvalue(&mean_laplacian)?;

    let mut pair_sum = 0.0;
    for k in 0..m {
        for l in (k + 1)..m {
            pair_sum += frobenius_dist_sq(&draws[k].view.laplacian, &draws[l].view.laplacian);
        }
    }
    let expected_loss_g = pair_sum / (m * (m - 1) / 2) as f64;
    let pair_losses: Vec<f64> = draws
        .chunks_exact(2)
        .map(|p| frobenius_dist_sq(&p[0].view.laplacian, &p[1].view.laplacian))
        .collect();
    let loss_g_se = standard_error(&pair_losses);

    let lambdas: Vec<f64> = draws.iter().map(|d| d.lambda2).collect();
    let mus: Vec<f64> = draws.iter().map(|d| d.mu_norm_sq).collect();
    Ok(EnsembleStats {
        mean_laplacian,
        expected_loss_g,
        loss_g_se,
        pair_losses,
        lambda2_bar,
        lambda2_mean: mean(&lambdas),
        lambda2_var: sample_var(&lambdas),
        mean_mu_norm_sq: mean(&mus),
        mu_norm_sq_se: standard_error(&mus),
        samples: m,
        discarded: total - m,
        draws,
    })
}

/// Draws `cfg.draws` independent augmented views of `graphs`, encodes them
/// with frozen `params`, and summarizes the resulting Laplacians.
pub fn build_ensemble(
    graphs: &[Graph],
    policy: &AugmentPolicy,
    params: &EncoderParams,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats> {
    if graphs.len() < 2 {
        return Err(Error::invalid("an ensemble needs at least 2 graphs per batch"));
    }
    let zs = (0..cfg.draws)
        .into_par_iter()
        .map(|k| {
            let views = graphs
                .iter()
                .enumerate()
                .map(|(i, g)| sample_view(g, policy, &mut seed::derived_rng(cfg.seed, &[k as u64, i as u64])))
                .collect::<Result<Vec<_>>>()?;
            embed(params, &views)
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble_from_embeddings(zs, cfg.percentile)
}

/// `Var[λ₂] ≤ ½ E[ℒ_G]` with Monte-Carlo slack.
pub fn verify_lambda2_variance(stats: &EnsembleStats, context: BoundContext) -> BoundReport {
    let m = stats.samples as f64;
    let var_se = stats.lambda2_var * (2.0 / (m - 1.0)).sqrt();
    let sigma = (var_se * var_se + (0.5 * stats.loss_g_se).powi(2)).sqrt();
    BoundReport::check(
        "lambda2_variance",
        stats.lambda2_var,
        0.5 * stats.expected_loss_g,
        EXACT_TOL + MC_SIGMAS * sigma,
        context,
    )
}

/// `E[ℒ_G] = 2 E‖L - L̄‖²` for i.i.d. Laplacians, as a paired difference
/// over disjoint draws `(a, b)`:
/// `d = ‖L_a - L_b‖² - m/(m-1) (‖L_a - L̄‖² + ‖L_b - L̄‖²)`, which has mean
/// zero when the draws are i.i.d. Passes when `|mean d| ≤ 3 se(d)`.
pub fn verify_iid_identity(stats: &EnsembleStats, context: BoundContext) -> BoundReport {
    let m = stats.samples as f64;
    let dev = |d: &EnsembleDraw| frobenius_dist_sq(&d.view.laplacian, &stats.mean_laplacian) * m / (m - 1.0);
    let diffs: Vec<f64> = stats
        .draws
        .chunks_exact(2)
        .map(|p| frobenius_dist_sq(&p[0].view.laplacian, &p[1].view.laplacian) - dev(&p[0]) - dev(&p[1]))
        .collect();
    let pair_mean = mean(&stats.pair_losses);
    BoundReport::check(
        "iid_identity",
        mean(&diffs).abs(),
        MC_SIGMAS * standard_error(&diffs),
        EXACT_TOL,
        context,
    )
    .with_note(format!(
        "pair mean {pair_mean:.6e}, twice mean deviation {:.6e}",
        2.0 * stats.mean_deviation_sq()
    ))
}

/// Right-hand side of the uniformity bound.
pub fn uniformity_bound(t: f64, expected_loss_g: f64, mean_mu_norm_sq: f64, lambda2_bar: f64) -> f64 {
    let k = 1.0 - (-4.0 * t).exp();
    k / (2.0 * 2f64.sqrt()) * (1.5 - mean_mu_norm_sq) * expected_loss_g.sqrt()
        - k / 2.0 * lambda2_bar * (1.0 - mean_mu_norm_sq)
}

/// Mean per-draw uniformity against the uniformity bound, with slack
/// `1e-6 + 3σ` from a delta-method error on the estimated expectations.
pub fn verify_uniformity_bound(stats: &EnsembleStats, t: f64, context: BoundContext) -> Result<BoundReport> {
    let unif = stats
        .draws
        .iter()
        .map(|d| uniformity_loss(&d.z, t))
        .collect::<Result<Vec<_>>>()?;
    let lhs = mean(&unif);
    let (eg, mu) = (stats.expected_loss_g, stats.mean_mu_norm_sq);
    let rhs = uniformity_bound(t, eg, mu, stats.lambda2_bar);
    let k = 1.0 - (-4.0 * t).exp();
    let d_mu = -k / (2.0 * 2f64.sqrt()) * eg.sqrt() + k / 2.0 * stats.lambda2_bar;
    let d_g = if eg > 0.0 {
        k / (2.0 * 2f64.sqrt()) * (1.5 - mu) / (2.0 * eg.sqrt())
    } else {
        0.0
    };
    let sigma = ((d_mu * stats.mu_norm_sq_se).powi(2)
        + (d_g * stats.loss_g_se).powi(2)
        + standard_error(&unif).powi(2))
    .sqrt();
    Ok(BoundReport::check("uniformity_bound", lhs, rhs, UNIFORMITY_TOL + MC_SIGMAS * sigma, context)
        .with_note(format!("M={} discarded={}", stats.samples, stats.discarded)))
}

/// Settings of the default verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub duhamel_pairs: usize,
    pub duhamel_t_d: Vec<f64>,
    pub laplacian_n: usize,
    pub contrastive_gap_batches: usize,
    pub batch_n: usize,
    pub embed_dim: usize,
    pub taus: Vec<f64>,
    pub t_d: f64,
    pub percentile: f64,
    pub lipschitz_points: usize,
    pub chord_t: Vec<f64>,
    pub chord_points: usize,
    pub ensembles: usize,
    pub draws: usize,
    pub ensemble_batch: usize,
    pub ensemble_percentile: f64,
    pub t_unif: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duhamel_pairs: 200,
            duhamel_t_d: vec![0.5, 1.0, 2.0],
            laplacian_n: 16,
            contrastive_gap_batches: 100,
            batch_n: 32,
            embed_dim: 8,
            taus: vec![0.2, 0.5, 1.0],
            t_d: 1.0,
            percentile: 80.0,
            lipschitz_points: 21,
            chord_t: vec![0.5, 2.0],
            chord_points: 41,
            ensembles: 50,
            draws: 64,
            ensemble_batch: 16,
            ensemble_percentile: 30.0,
            t_unif: 2.0,
        }
    }
}

/// Random matrix with unit rows.
pub fn random_unit_rows<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Matrix {
    loop {
        let z = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        if let Ok(u) = normalize_rows(&z) {
            return u;
        }
    }
}

/// A second view correlated with `z1`: unit rows of `z1 + noise * ξ`.
pub fn perturbed_view<R: Rng + ?Sized>(z1: &Matrix, noise: f64, rng: &mut R) -> Matrix {
    loop {
        let xi = Array2::from_shape_fn(z1.dim(), |_| rng.random_range(-1.0..1.0));
        if let Ok(u) = normalize_rows(&(z1 + &(xi * noise))) {
            return u;
        }
    }
}

/// Checks that need no data: Duhamel, the contrastive-gap bound,
/// Lipschitz, cosine identity and chord bound on seeded random inputs.
pub fn analytic_suite(cfg: &HarnessConfig) -> Result<Vec<BoundReport>> {
    let mut reports = Vec::new();

    let duhamel = (0..cfg.duhamel_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::derived_rng(cfg.seed, &[0xD0, k as u64]);
            let t_d = cfg.duhamel_t_d[k % cfg.duhamel_t_d.len()];
            let z1 = random_unit_rows(cfg.laplacian_n, cfg.embed_dim, &mut rng);
            let z2 = random_unit_rows(cfg.laplacian_n, cfg.embed_dim, &mut rng);
            let l1 = ViewGraph::build(&z1, cfg.percentile, AdjacencyMode::Binary)?.laplacian;
            let l2 = ViewGraph::build(&z2, cfg.percentile, AdjacencyMode::Binary)?.laplacian;
            let ctx = BoundContext {
                t_d: Some(t_d),
                p: Some(cfg.percentile),
                n: Some(cfg.laplacian_n),
                seed: Some(k as u64),
                ..BoundContext::default()
            };
            verify_duhamel(&l1, &l2, t_d, ctx)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.extend(duhamel);

    let gap = (0..cfg.contrastive_gap_batches)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::derived_rng(cfg.seed, &[0x42, k as u64]);
            let tau = cfg.taus[k % cfg.taus.len()];
            let z1 = random_unit_rows(cfg.batch_n, cfg.embed_dim, &mut rng);
            let noise = rng.random_range(0.05..0.8);
            let z2 = perturbed_view(&z1, noise, &mut rng);
            let ctx = BoundContext {
                tau: Some(tau),
                t_d: Some(cfg.t_d),
                p: Some(cfg.percentile),
                n: Some(cfg.batch_n),
                seed: Some(k as u64),
                ..BoundContext::default()
            };
            verify_contrastive_gap(&z1, &z2, tau, cfg.t_d, cfg.percentile, ctx)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.extend(gap);

    let grid: Vec<f64> = (0..cfg.lipschitz_points)
        .map(|i| -1.0 + 2.0 * i as f64 / (cfg.lipschitz_points.max(2) - 1) as f64)
        .collect();
    for (k, &tau) in cfg.taus.iter().enumerate() {
        let mut rng = seed::derived_rng(cfg.seed, &[0x11, k as u64]);
        let z1 = random_unit_rows(cfg.batch_n, cfg.embed_dim, &mut rng);
        let z2 = perturbed_view(&z1, 0.3, &mut rng);
        let ctx = BoundContext {
            tau: Some(tau),
            n: Some(cfg.batch_n),
            seed: Some(k as u64),
            ..BoundContext::default()
        };
        reports.push(verify_lipschitz(&z1, &z2, tau, &grid, ctx.clone())?);
        reports.push(verify_cosine_identity(&z1, &z2, ctx)?);
    }

    let xs = chord_grid(cfg.chord_points);
    for &t in &cfg.chord_t {
        let ctx = BoundContext {
            t: Some(t),
            ..BoundContext::default()
        };
        reports.push(verify_chord_bound(t, &xs, ctx)?);
    }
    Ok(reports)
}

/// Ensemble checks over seeded batches of `graphs` encoded by frozen
/// `params`: Hoffman–Wielandt and Rayleigh on every draw (worst draw
/// reported), variance, i.i.d. identity and the uniformity bound per
/// ensemble.
pub fn ensemble_suite(
    cfg: &HarnessConfig,
    graphs: &[Graph],
    policy: &AugmentPolicy,
    params: &EncoderParams,
) -> Result<Vec<BoundReport>> {
    let batch = cfg.ensemble_batch.min(graphs.len());
    if batch < 2 {
        return Err(Error::invalid("ensemble batches need at least 2 graphs"));
    }
    let mut reports = Vec::new();
    for e in 0..cfg.ensembles {
        let mut rng = seed::derived_rng(cfg.seed, &[0xE5, e as u64]);
        let mut idx = rand::seq::index::sample(&mut rng, graphs.len(), batch).into_vec();
        idx.sort_unstable();
        let chosen: Vec<Graph> = idx.iter().map(|&i| graphs[i].clone()).collect();
        let ens_cfg = EnsembleConfig {
            draws: cfg.draws,
            percentile: cfg.ensemble_percentile,
            seed: seed::derive(cfg.seed, &[0xE6, e as u64]),
        };
        let ctx = BoundContext {
            t: Some(cfg.t_unif),
            p: Some(cfg.ensemble_percentile),
            n: Some(batch),
            seed: Some(e as u64),
            ..BoundContext::default()
        };
        let stats = match build_ensemble(&chosen, policy, params, &ens_cfg) {
            Ok(s) => s,
            Err(Error::InsufficientSamples { got, need }) => {
                reports.push(
                    BoundReport::check("ensemble_connectivity", need as f64, got as f64, 0.0, ctx)
                        .with_note("too few connected draws"),
                );
                continue;
            }
            Err(err) => return Err(err),
        };
        let mut hw = Vec::with_capacity(stats.samples);
        let mut ray = Vec::with_capacity(stats.samples);
        for d in &stats.draws {
            hw.push(verify_hoffman_wielandt(&d.view.laplacian, &stats.mean_laplacian, ctx.clone())?);
            ray.push(verify_rayleigh_step(&d.view.adjacency, &d.z, ctx.clone())?);
        }
        reports.push(worst(hw));
        reports.push(worst(ray));
        reports.push(verify_lambda2_variance(&stats, ctx.clone()));
        reports.push(verify_iid_identity(&stats, ctx.clone()));
        reports.push(verify_uniformity_bound(&stats, cfg.t_unif, ctx)?);
    }
    Ok(reports)
}

/// The report with the smallest slack, annotated with the group size.
fn worst(reports: Vec<BoundReport>) -> BoundReport {
    let count = reports.len();
    let failures = reports.iter().filter(|r| r.failed()).count();
    let worst = reports
        .into_iter()
        .min_by(|a, b| a.slack.total_cmp(&b.slack))
        .expect("at least one report");
    worst.with_note(format!("worst of {count} draws, {failures} failed"))
}

/// Per-name totals for display.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub name: String,
    pub count: usize,
    pub failed: usize,
    pub skipped: usize,
    pub min_slack: f64,
}

pub fn summarize(reports: &[BoundReport]) -> Vec<ReportSummary> {
    let mut out: Vec<ReportSummary> = Vec::new();
    for r in reports {
        let entry = match out.iter_mut().find(|s| s.name == r.name) {
            Some(s) => s,
            None => {
                out.push(ReportSummary {
                    name: r.name.clone(),
                    count: 0,
                    failed: 0,
                    skipped: 0,
                    min_slack: f64::INFINITY,
                });
                out.last_mut().expect("just pushed")
            }
        };
        entry.count += 1;
        match r.status {
            Status::Fail => entry.failed += 1,
            Status::Skipped => entry.skipped += 1,
            Status::Pass => {}
        }
        if r.status != Status::Skipped {
            entry.min_slack = entry.min_slack.min(r.slack);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ctx() -> BoundContext {
        BoundContext::default()
    }

    fn p3() -> Matrix {
        array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    }

    #[test]
    fn duhamel_examples() {
        let l = loss::normalized_laplacian(&p3()).unwrap();
        let r = verify_duhamel(&l, &l, 1.0, ctx()).unwrap();
        assert_eq!((r.lhs, r.rhs, r.status), (0.0, 0.0, Status::Pass));

        let n = 5;
        let zero = Array2::zeros((n, n));
        let eye = Array2::eye(n);
        let r = verify_duhamel(&zero, &eye, 1.0, ctx()).unwrap();
        let root_n = (n as f64).sqrt();
        assert!((r.lhs - root_n * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((r.rhs - root_n).abs() < 1e-12);
        assert!(r.passed);
    }

    #[test]
    fn contrastive_gap_identical_views_is_skipped() {
        let mut rng = seed::rng(1);
        let z = random_unit_rows(8, 4, &mut rng);
        let r = verify_contrastive_gap(&z, &z, 0.5, 1.0, 80.0, ctx()).unwrap();
        assert_eq!(r.status, Status::Skipped);
        assert!(!r.failed());
    }

    #[test]
    fn contrastive_gap_rhs_scales_with_inverse_tau() {
        let mut rng = seed::rng(2);
        let z1 = random_unit_rows(12, 4, &mut rng);
        let z2 = perturbed_view(&z1, 0.5, &mut rng);
        let a = verify_contrastive_gap(&z1, &z2, 0.5, 1.0, 80.0, ctx()).unwrap();
        let b = verify_contrastive_gap(&z1, &z2, 1.0, 1.0, 80.0, ctx()).unwrap();
        assert_eq!(a.status, Status::Pass);
        assert!((a.rhs - 2.0 * b.rhs).abs() <= 1e-12 * a.rhs);
    }

    #[test]
    fn contrastive_gap_gap_recomputed_by_hand() {
        // Per-anchor brute force of ℒ_C - ℒ_C*.
        let mut rng = seed::rng(3);
        let z1 = random_unit_rows(6, 3, &mut rng);
        let z2 = perturbed_view(&z1, 0.8, &mut rng);
        let tau = 0.5;
        let u = ndarray::concatenate(ndarray::Axis(0), &[z1.view(), z2.view()]).unwrap();
        let mut gap = 0.0;
        for r in 0..12 {
            let pos = (r + 6) % 12;
            let term = |sp: f64| {
                let mut den = 0.0;
                for c in 0..12 {
                    if c != r {
                        let s = if c == pos { sp } else { u.row(r).dot(&u.row(c)) };
                        den += (s / tau).exp();
                    }
                }
                -(sp / tau) + den.ln()
            };
            gap += term(u.row(r).dot(&u.row(pos))) - term(1.0);
        }
        let rep = verify_contrastive_gap(&z1, &z2, tau, 1.0, 80.0, ctx()).unwrap();
        assert_eq!(rep.status, Status::Pass);
        assert!((rep.lhs - gap.abs()).abs() < 1e-10);
    }

    #[test]
    fn lipschitz_derivatives_bounded_and_nonpositive() {
        let mut rng = seed::rng(4);
        let z1 = random_unit_rows(6, 3, &mut rng);
        let z2 = perturbed_view(&z1, 0.3, &mut rng);
        let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        for tau in [0.2, 0.5, 1.0] {
            let d = positive_similarity_derivatives(&z1, &z2, tau, &grid).unwrap();
            assert!(d.iter().all(|&x| x <= 1e-9));
            let r = verify_lipschitz(&z1, &z2, tau, &grid, ctx()).unwrap();
            assert!(r.passed && r.lhs <= 1.0 / tau + 1e-6);
            assert_eq!(r.rhs, 1.0 / tau);
        }
    }

    #[test]
    fn cosine_identity_on_unit_rows() {
        let mut rng = seed::rng(5);
        let z1 = random_unit_rows(10, 5, &mut rng);
        let z2 = random_unit_rows(10, 5, &mut rng);
        assert!(verify_cosine_identity(&z1, &z2, ctx()).unwrap().passed);
    }

    #[test]
    fn hoffman_wielandt_examples() {
        let l = Array2::from_diag(&array![0.0, 1.0, 2.0]);
        assert_eq!(verify_hoffman_wielandt(&l, &l, ctx()).unwrap().lhs, 0.0);
        let lb = Array2::from_diag(&array![0.0, 1.5, 2.0]);
        let r = verify_hoffman_wielandt(&l, &lb, ctx()).unwrap();
        assert!((r.lhs - 0.25).abs() < 1e-12 && (r.rhs - 0.25).abs() < 1e-12);
        assert!(r.passed);
    }

    #[test]
    fn rayleigh_examples() {
        let k2 = array![[0.0, 1.0], [1.0, 0.0]];
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let r = verify_rayleigh_step(&k2, &z, ctx()).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12);
        assert!(r.passed);

        let same = array![[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]];
        let r = verify_rayleigh_step(&p3(), &same, ctx()).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs == 0.0);

        let disconnected = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(
            verify_rayleigh_step(&disconnected, &same, ctx()),
            Err(Error::DegenerateGraph(_))
        ));
    }

    #[test]
    fn chord_examples() {
        let t = 2.0;
        let r = verify_chord_bound(t, &[0.0], ctx()).unwrap();
        assert_eq!(r.lhs, 0.0);
        let r = verify_chord_bound(t, &[4.0], ctx()).unwrap();
        assert!(r.lhs.abs() < 1e-15);
        let lhs = (-4.0f64).exp();
        let chord = 1.0 - (1.0 - (-8.0f64).exp()) / 2.0;
        assert!((lhs - 0.0183).abs() < 1e-4 && (chord - 0.5002).abs() < 1e-4);
        let r = verify_chord_bound(t, &[2.0], ctx()).unwrap();
        assert!((r.lhs - (lhs - chord)).abs() < 1e-15);
        let grid = chord_grid(41);
        assert_eq!(grid.len(), 41);
        assert_eq!((grid[0], grid[40]), (0.0, 4.0));
        for t in [0.5, 2.0] {
            assert!(verify_chord_bound(t, &grid, ctx()).unwrap().passed);
        }
    }

    fn connected_embedding(n: usize) -> Matrix {
        // Points spread on a circle: threshold graphs at p=50 are connected.
        Array2::from_shape_fn((n, 2), |(i, j)| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if j == 0 {
                a.cos()
            } else {
                a.sin()
            }
        })
    }

    #[test]
    fn deterministic_ensemble_is_exact() {
        let z = connected_embedding(8);
        let stats = ensemble_from_embeddings(vec![z.clone(); 6], 50.0).unwrap();
        assert_eq!(stats.samples, 6);
        let view = ViewGraph::build(&z, 50.0, AdjacencyMode::Binary).unwrap();
        assert_eq!(stats.mean_laplacian, view.laplacian);
        assert_eq!(stats.lambda2_var, 0.0);
        assert_eq!(stats.expected_loss_g, 0.0);
    }

    #[test]
    fn two_identical_draws_have_zero_expected_loss() {
        let z = connected_embedding(6);
        let stats = ensemble_from_embeddings(vec![z.clone(), z], 50.0).unwrap();
        assert_eq!(stats.expected_loss_g, 0.0);
    }

    #[test]
    fn disconnected_draws_are_discarded() {
        // Two tight clusters far apart: the thresholded graph splits.
        let z = normalize_rows(&array![[1.0, 0.0], [1.0, 0.01], [-1.0, 0.0], [-1.0, 0.01]]).unwrap();
        let err = ensemble_from_embeddings(vec![z.clone(), z], 60.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { got: 0, need: 2 }));
    }

    #[test]
    fn pair_estimator_identity_is_algebraic() {
        // Mean over all pairs equals 2 M/(M-1) times the mean deviation.
        let mut rng = seed::rng(6);
        let zs: Vec<Matrix> = (0..10).map(|_| random_unit_rows(10, 2, &mut rng)).collect();
        let stats = ensemble_from_embeddings(zs, 30.0).unwrap();
        let m = stats.samples as f64;
        let want = 2.0 * m / (m - 1.0) * stats.mean_deviation_sq();
        assert!((stats.expected_loss_g - want).abs() < 1e-10 * want.max(1.0));
    }

    #[test]
    fn iid_identity_passes_iid_and_catches_drift() {
        let mut rng = seed::rng(8);
        let zs: Vec<Matrix> = (0..40).map(|_| random_unit_rows(10, 2, &mut rng)).collect();
        let stats = ensemble_from_embeddings(zs, 30.0).unwrap();
        assert!(verify_iid_identity(&stats, ctx()).passed);

        // First half jitters around one configuration, second half around
        // another: paired draws agree far more than the pooled spread.
        let a = random_unit_rows(10, 2, &mut rng);
        let b = random_unit_rows(10, 2, &mut rng);
        let zs: Vec<Matrix> = (0..40)
            .map(|k| perturbed_view(if k < 20 { &a } else { &b }, 0.05, &mut rng))
            .collect();
        let stats = ensemble_from_embeddings(zs, 30.0).unwrap();
        let r = verify_iid_identity(&stats, ctx());
        assert!(!r.passed, "{r}");
    }

    #[test]
    fn uniformity_bound_examples() {
        // Deterministic draws: E[ℒ_G] = 0 leaves only the spectral-gap term.
        let z = connected_embedding(8);
        let stats = ensemble_from_embeddings(vec![z.clone(); 4], 50.0).unwrap();
        let t = 2.0;
        let r = verify_uniformity_bound(&stats, t, ctx()).unwrap();
        let want = -(1.0 - (-4.0 * t).exp()) / 2.0 * stats.lambda2_bar * (1.0 - stats.mean_mu_norm_sq);
        assert!((r.rhs - want).abs() < 1e-12);
        assert!(r.passed, "{r}");
        let tiny = verify_uniformity_bound(&stats, 1e-9, ctx()).unwrap();
        assert!(tiny.rhs.abs() < 1e-8 && tiny.passed);
    }

    #[test]
    fn report_serializes_with_status() {
        let r = BoundReport::check("x", 1.0, 2.0, 0.0, ctx());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["status"], "pass");
        assert_eq!(v["slack"], 1.0);
        let f = BoundReport::check("x", 2.0, 1.0, 0.5, ctx());
        assert!(f.failed() && !f.passed);
        let s = summarize(&[r, f]);
        assert_eq!((s[0].count, s[0].failed, s[0].min_slack), (2, 1, -1.0));
    }
}
