//! Central finite differences against the reverse-mode objective gradient.

use rand::Rng;

use super::{objective, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::LossConfig;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Coordinates sampled from each GIN layer and from the head.
    pub coords_per_group: usize,
    pub step: f64,
    /// Denominator floor of the relative error, so coordinates with a
    /// vanishing gradient are compared absolutely.
    pub floor: f64,
    /// Redraws allowed per coordinate when a probe crosses a kink.
    pub max_redraws: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            coords_per_group: 20,
            step: 1e-5,
            floor: 1e-6,
            max_redraws: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub tensor: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Samples coordinates per parameter group ("layer0", ..., "head") and
/// compares each analytic partial of the objective with a central
/// difference. A coordinate whose probes change the branch signature
/// (a ReLU pattern or adjacency mask) is redrawn.
pub fn gradient_check(
    params: &EncoderParams,
    views1: &[Graph],
    views2: &[Graph],
    loss_cfg: &LossConfig,
    cfg: &GradCheckConfig,
) -> Result<Vec<CoordCheck>> {
    let base = objective(params, views1, views2, loss_cfg)?;
    let analytic = base.grads.tensors();
    let names = params.tensor_names();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let group = name.split('.').next().expect("nonempty name").to_string();
        match groups.last_mut() {
            Some((g, members)) if *g == group => members.push(t),
            _ => groups.push((group, vec![t])),
        }
    }

    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.dim()).collect();
    let mut rng = seed::derived_rng(cfg.seed, &[0x6C4B]);
    let mut out = Vec::new();
    for (_, members) in &groups {
        let sizes: Vec<usize> = members.iter().map(|&t| shapes[t].0 * shapes[t].1).collect();
        let total: usize = sizes.iter().sum();
        for _ in 0..cfg.coords_per_group {
            let mut found = None;
            for _ in 0..=cfg.max_redraws {
                let mut flat = rng.random_range(0..total);
                let mut k = 0;
                while flat >= sizes[k] {
                    flat -= sizes[k];
                    k += 1;
                }
                let t = members[k];
                let (row, col) = (flat / shapes[t].1, flat % shapes[t].1);
                let probe = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()[t][[row, col]] += delta;
                    objective(&p, views1, views2, loss_cfg)
                };
                let (up, down) = (probe(cfg.step)?, probe(-cfg.step)?);
                if up.branch_signature != base.branch_signature
                    || down.branch_signature != base.branch_signature
                {
                    continue;
                }
                let numeric = (up.total - down.total) / (2.0 * cfg.step);
                let a = analytic[t][[row, col]];
                let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
                found = Some(CoordCheck {
                    tensor: names[t].clone(),
                    row,
                    col,
                    analytic: a,
                    numeric,
                    rel_err,
                });
                break;
            }
            out.push(found.ok_or_else(|| {
                Error::Degenerate(format!(
                    "no kink-free coordinate found in {} redraws",
                    cfg.max_redraws
                ))
            })?);
        }
    }
    Ok(out)
}
