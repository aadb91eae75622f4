use std::sync::Arc;

use super::params::EncoderParams;
use super::tape::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Parameter leaves recorded on one tape, in [`EncoderParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    layers: usize,
}

struct LayerVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    eps: Var,
}

struct HeadVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl BoundParams {
    pub fn bind(params: &EncoderParams, tape: &mut Tape) -> Self {
        let vars = params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        Self {
            vars,
            layers: params.layers.len(),
        }
    }

    fn layer(&self, l: usize) -> LayerVars {
        let v = &self.vars[5 * l..5 * l + 5];
        LayerVars {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
            eps: v[4],
        }
    }

    fn head(&self) -> HeadVars {
        let v = &self.vars[5 * self.layers..];
        HeadVars {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        }
    }

    /// Collects gradients into a parameter-shaped value; untouched tensors
    /// get zeros.
    pub fn gradients(&self, params: &EncoderParams, grads: &Grads) -> EncoderParams {
        let mut out = params.zeros_like();
        for (slot, v) in out.tensors_mut().into_iter().zip(&self.vars) {
            if let Some(g) = grads.get(*v) {
                slot.assign(g);
            }
        }
        out
    }
}

/// Final-layer node embeddings summed over nodes (`1 x H`).
pub fn gin_readout(tape: &mut Tape, bound: &BoundParams, g: &Graph) -> Result<Var> {
    let neighbors = Arc::new(g.neighbor_lists());
    let mut h = tape.leaf(g.features().clone());
    for l in 0..bound.layers {
        let p = bound.layer(l);
        let expected = tape.value(p.w1).nrows();
        let got = tape.value(h).ncols();
        if got != expected {
            return Err(Error::invalid(format!(
                "layer {l} expects {expected} input features, graph has {got}"
            )));
        }
        let a = tape.gin_aggregate(h, p.eps, neighbors.clone())?;
        let m = tape.matmul(a, p.w1)?;
        let m = tape.add_row(m, p.b1)?;
        let m = tape.relu(m);
        let m = tape.matmul(m, p.w2)?;
        let m = tape.add_row(m, p.b2)?;
        h = tape.relu(m);
    }
    Ok(tape.sum_rows(h))
}

/// Projection head applied row-wise.
pub fn project(tape: &mut Tape, bound: &BoundParams, r: Var) -> Result<Var> {
    let p = bound.head();
    let m = tape.matmul(r, p.w1)?;
    let m = tape.add_row(m, p.b1)?;
    let m = tape.relu(m);
    let m = tape.matmul(m, p.w2)?;
    tape.add_row(m, p.b2)
}

/// Unnormalized graph embedding `g(READOUT(h^(L)))` as a `1 x d` row.
pub fn gin_forward(tape: &mut Tape, bound: &BoundParams, g: &Graph) -> Result<Var> {
    let r = gin_readout(tape, bound, g)?;
    project(tape, bound, r)
}
