//! GIN encoder with a projection head, trained by reverse-mode gradients.
//!
//! Each graph is encoded on its own [`Tape`], so forward passes over a batch
//! run in parallel. Readouts are then stacked on a batch-level tape that
//! holds the projection head and the loss. Backward runs the batch tape
//! first and feeds each readout gradient into the owning graph tape; the
//! per-graph gradients are reduced sequentially in batch order.

mod gin;
mod gradcheck;
mod params;
mod tape;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{self, AdjacencyMode, LossConfig};
use crate::Matrix;

pub use gin::{gin_forward, gin_readout, project, BoundParams};
pub use gradcheck::{gradient_check, CoordCheck, GradCheckConfig};
pub use params::{EncoderDims, EncoderParams, GinLayer, ProjectionHead};
pub use tape::{Grads, Tape, Var, MIN_ROW_NORM};

/// Tolerance on the unit norm of embedding rows.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Divides every row by its norm.
pub fn normalize_rows(z: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = tape.leaf(z.clone());
    let out = tape.normalize_rows(v)?;
    Ok(tape.value(out).clone())
}

struct GraphPass {
    tape: Tape,
    bound: BoundParams,
    readout: Var,
}

/// Recorded forward passes for a list of graphs.
pub struct GraphPasses {
    passes: Vec<GraphPass>,
}

impl GraphPasses {
    pub fn run(params: &EncoderParams, graphs: &[Graph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::invalid("no graphs to encode"));
        }
        let passes = graphs
            .par_iter()
            .map(|g| {
                let mut tape = Tape::new();
                let bound = BoundParams::bind(params, &mut tape);
                let readout = gin_readout(&mut tape, &bound, g)?;
                Ok(GraphPass {
                    tape,
                    bound,
                    readout,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { passes })
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    /// Readouts stacked as `N x H`.
    pub fn readouts(&self) -> Matrix {
        let width = self.passes[0].tape.value(self.passes[0].readout).ncols();
        let mut out = Array2::zeros((self.passes.len(), width));
        for (i, p) in self.passes.iter().enumerate() {
            out.row_mut(i).assign(&p.tape.value(p.readout).row(0));
        }
        out
    }

    /// Parameter gradients given the gradient of some scalar with respect
    /// to every readout row.
    pub fn backward(&self, params: &EncoderParams, readout_grads: &Matrix) -> Result<EncoderParams> {
        if readout_grads.nrows() != self.passes.len() {
            return Err(Error::invalid("one readout gradient row per graph expected"));
        }
        let parts = self
            .passes
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let seed = readout_grads.slice(s![i..i + 1, ..]).to_owned();
                let grads = p.tape.backward_from(p.readout, seed)?;
                Ok(p.bound.gradients(params, &grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = params.zeros_like();
        for g in &parts {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn hash_branches<H: Hasher>(&self, h: &mut H) {
        for p in &self.passes {
            p.tape.branch_signature().hash(h);
        }
    }
}

/// Sum readouts (`N x H`) without recording gradients.
pub fn readout_embeddings(params: &EncoderParams, graphs: &[Graph]) -> Result<Matrix> {
    Ok(GraphPasses::run(params, graphs)?.readouts())
}

/// Unit-norm projected embeddings (`N x d`).
pub fn embed(params: &EncoderParams, graphs: &[Graph]) -> Result<Matrix> {
    let r = readout_embeddings(params, graphs)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape);
    let vr = tape.leaf(r);
    let y = project(&mut tape, &bound, vr)?;
    let z = tape.normalize_rows(y)?;
    Ok(tape.value(z).clone())
}

/// Normalized embeddings of the two views of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub z1: Matrix,
    pub z2: Matrix,
}

impl ViewBatch {
    pub fn new(z1: Matrix, z2: Matrix) -> Result<Self> {
        if z1.dim() != z2.dim() {
            return Err(Error::Validation(format!(
                "view shapes differ: {:?} vs {:?}",
                z1.dim(),
                z2.dim()
            )));
        }
        for (v, z) in [&z1, &z2].into_iter().enumerate() {
            for (i, row) in z.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Validation(format!(
                        "view {} row {i} has norm {norm}",
                        v + 1
                    )));
                }
            }
        }
        Ok(Self { z1, z2 })
    }

    pub fn encode(params: &EncoderParams, views1: &[Graph], views2: &[Graph]) -> Result<Self> {
        if views1.len() != views2.len() {
            return Err(Error::invalid("views must have the same number of graphs"));
        }
        Self::new(embed(params, views1)?, embed(params, views2)?)
    }

    pub fn n(&self) -> usize {
        self.z1.nrows()
    }
}

/// Loss values and gradients for one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub contrastive: f64,
    pub spectral: f64,
    pub batch: ViewBatch,
    pub grads: EncoderParams,
    /// Hash of every piecewise branch taken (ReLU patterns, adjacency
    /// masks). Finite-difference checks are only meaningful between
    /// evaluations with equal signatures.
    pub branch_signature: u64,
}

/// Evaluates `ℒ = ℒ_C + β ℒ_G` for paired views and differentiates it.
///
/// In soft mode the threshold mask is a constant and gradients flow through
/// the similarity weights; in binary mode `ℒ_G` contributes no gradient.
pub fn objective(
    params: &EncoderParams,
    views1: &[Graph],
    views2: &[Graph],
    cfg: &LossConfig,
) -> Result<Objective> {
    cfg.validate()?;
    if views1.len() != views2.len() {
        return Err(Error::invalid("views must have the same number of graphs"));
    }
    let (p1, p2) = rayon::join(
        || GraphPasses::run(params, views1),
        || GraphPasses::run(params, views2),
    );
    let (p1, p2) = (p1?, p2?);

    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape);
    let r1 = tape.leaf(p1.readouts());
    let r2 = tape.leaf(p2.readouts());
    let y1 = project(&mut tape, &bound, r1)?;
    let y2 = project(&mut tape, &bound, r2)?;
    let z1 = tape.normalize_rows(y1)?;
    let z2 = tape.normalize_rows(y2)?;
    let lc = tape.info_nce(z1, z2, cfg.tau)?;

    let mut h = DefaultHasher::new();
    let mut laplacians = Vec::with_capacity(2);
    for z in [z1, z2] {
        let s = tape.gram(z);
        let theta = loss::percentile_threshold(tape.value(s), cfg.percentile)?;
        let mask = loss::adjacency(tape.value(s), theta);
        for m in mask.iter() {
            (*m > 0.0).hash(&mut h);
        }
        let w = match cfg.adjacency {
            AdjacencyMode::Soft => tape.masked_weights(s, mask)?,
            AdjacencyMode::Binary => tape.leaf(mask),
        };
        laplacians.push(tape.laplacian(w)?);
    }
    let lg = tape.sq_frob_diff(laplacians[0], laplacians[1])?;
    let total = tape.linear_combination(&[(lc, 1.0), (lg, cfg.beta)])?;

    let grads = tape.backward(total)?;
    let mut param_grads = bound.gradients(params, &grads);
    let zero = |v: Var| Array2::zeros(tape.value(v).dim());
    let g1 = grads.get(r1).cloned().unwrap_or_else(|| zero(r1));
    let g2 = grads.get(r2).cloned().unwrap_or_else(|| zero(r2));
    let (b1, b2) = rayon::join(|| p1.backward(params, &g1), || p2.backward(params, &g2));
    param_grads.add_assign(&b1?);
    param_grads.add_assign(&b2?);

    tape.branch_signature().hash(&mut h);
    p1.hash_branches(&mut h);
    p2.hash_branches(&mut h);

    Ok(Objective {
        total: tape.scalar_value(total),
        contrastive: tape.scalar_value(lc),
        spectral: tape.scalar_value(lg),
        batch: ViewBatch {
            z1: tape.value(z1).clone(),
            z2: tape.value(z2).clone(),
        },
        grads: param_grads,
        branch_signature: h.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{sample_views, AugmentPolicy, PolicyPreset};
    use crate::graph::{generate_sbm, SbmConfig};
    use ndarray::array;

    fn small_dims(in_dim: usize) -> EncoderDims {
        EncoderDims {
            in_dim,
            hidden: 6,
            layers: 2,
            out_dim: 5,
        }
    }

    fn batch(n: usize, seed: u64) -> (Vec<Graph>, Vec<Graph>) {
        let ds = generate_sbm(&SbmConfig {
            n_graphs: n,
            min_nodes: 6,
            max_nodes: 9,
            feature_dim: 4,
            seed,
            ..SbmConfig::default()
        })
        .unwrap();
        let policy = AugmentPolicy::preset(PolicyPreset::Biochem);
        let mut rng = crate::seed::rng(seed + 100);
        let mut v1 = Vec::new();
        let mut v2 = Vec::new();
        for g in ds.graphs() {
            let (a, b) = sample_views(g, &policy, &mut rng).unwrap();
            v1.push(a);
            v2.push(b);
        }
        (v1, v2)
    }

    #[test]
    fn normalize_rows_examples() {
        assert_eq!(normalize_rows(&array![[3.0, 4.0]]).unwrap(), array![[0.6, 0.8]]);
        let unit = array![[1.0, 0.0], [0.0, -1.0]];
        assert_eq!(normalize_rows(&unit).unwrap(), unit);
        assert!(matches!(
            normalize_rows(&array![[0.0, 0.0]]),
            Err(Error::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn objective_values_match_pure_loss() {
        let (v1, v2) = batch(6, 1);
        let params = EncoderParams::init(small_dims(4), 0).unwrap();
        for adjacency in [AdjacencyMode::Soft, AdjacencyMode::Binary] {
            let cfg = LossConfig {
                adjacency,
                ..LossConfig::default()
            };
            let obj = objective(&params, &v1, &v2, &cfg).unwrap();
            let vb = ViewBatch::encode(&params, &v1, &v2).unwrap();
            assert_eq!(obj.batch, vb);
            let pure = loss::total_loss(&vb.z1, &vb.z2, &cfg).unwrap();
            assert!((obj.total - pure.total).abs() < 1e-12);
            assert!((obj.contrastive - pure.contrastive).abs() < 1e-12);
            assert!((obj.spectral - pure.spectral).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_deterministic() {
        let (v1, v2) = batch(5, 2);
        let params = EncoderParams::init(small_dims(4), 3).unwrap();
        let cfg = LossConfig::default();
        let a = objective(&params, &v1, &v2, &cfg).unwrap();
        let b = objective(&params, &v1, &v2, &cfg).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.branch_signature, b.branch_signature);
    }

    #[test]
    fn binary_mode_spectral_term_has_no_gradient() {
        let (v1, v2) = batch(5, 4);
        let params = EncoderParams::init(small_dims(4), 1).unwrap();
        let with = |beta| {
            let cfg = LossConfig {
                beta,
                adjacency: AdjacencyMode::Binary,
                ..LossConfig::default()
            };
            objective(&params, &v1, &v2, &cfg).unwrap().grads
        };
        assert_eq!(with(0.0), with(3.0));
    }

    #[test]
    fn mismatched_views_rejected() {
        let (v1, v2) = batch(4, 5);
        let params = EncoderParams::init(small_dims(4), 1).unwrap();
        assert!(objective(&params, &v1, &v2[..3], &LossConfig::default()).is_err());
        assert!(matches!(
            ViewBatch::new(array![[1.0, 0.0]], array![[2.0, 0.0]]),
            Err(Error::Validation(_))
        ));
    }
}
