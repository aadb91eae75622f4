//! Stochastic graph augmentations used to build the two contrastive views.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    NodeDrop,
    EdgePerturb,
    AttrMask,
    Subgraph,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::NodeDrop,
        Augmentation::EdgePerturb,
        Augmentation::AttrMask,
        Augmentation::Subgraph,
    ];

    pub fn apply<R: Rng + ?Sized>(self, g: &Graph, strength: f64, rng: &mut R) -> Result<Graph> {
        match self {
            Augmentation::NodeDrop => node_drop(g, strength, rng),
            Augmentation::EdgePerturb => edge_perturb(g, strength, rng),
            Augmentation::AttrMask => attr_mask(g, strength, rng),
            Augmentation::Subgraph => subgraph_sample(g, strength, rng),
        }
    }
}

/// Which operators a view may be drawn from, and how hard they perturb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    operators: Vec<Augmentation>,
    strength: f64,
}

impl AugmentPolicy {
    pub fn new(operators: impl IntoIterator<Item = Augmentation>, strength: f64) -> Result<Self> {
        let operators: Vec<_> = operators
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if operators.is_empty() {
            return Err(Error::invalid("augmentation policy needs an operator"));
        }
        check_strength(strength)?;
        Ok(AugmentPolicy {
            operators,
            strength,
        })
    }

    pub fn operators(&self) -> &[Augmentation] {
        &self.operators
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn with_strength(&self, strength: f64) -> Result<Self> {
        Self::new(self.operators.iter().copied(), strength)
    }

    pub fn preset(preset: PolicyPreset) -> Self {
        let ops: &[Augmentation] = match preset {
            PolicyPreset::Biochem => &[Augmentation::NodeDrop, Augmentation::Subgraph],
            PolicyPreset::SocialDense => &Augmentation::ALL,
            PolicyPreset::SocialSparse => &[
                Augmentation::NodeDrop,
                Augmentation::EdgePerturb,
                Augmentation::Subgraph,
            ],
        };
        Self::new(ops.iter().copied(), DEFAULT_STRENGTH).expect("presets are valid")
    }
}

pub const DEFAULT_STRENGTH: f64 = 0.2;

/// Operator sets per data regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyPreset {
    /// node dropping + subgraph sampling
    Biochem,
    /// all four operators
    SocialDense,
    /// everything except attribute masking
    SocialSparse,
}

impl FromStr for PolicyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biochem" => Ok(PolicyPreset::Biochem),
            "social-dense" => Ok(PolicyPreset::SocialDense),
            "social-sparse" => Ok(PolicyPreset::SocialSparse),
            other => Err(Error::invalid(format!("unknown policy preset {other:?}"))),
        }
    }
}

impl fmt::Display for PolicyPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyPreset::Biochem => "biochem",
            PolicyPreset::SocialDense => "social-dense",
            PolicyPreset::SocialSparse => "social-sparse",
        })
    }
}

fn check_strength(strength: f64) -> Result<()> {
    if (0.0..=1.0).contains(&strength) {
        Ok(())
    } else {
        Err(Error::invalid(format!("strength {strength} not in [0, 1]")))
    }
}

// Rounding guard: 0.2 * 10 must count as 2, not 1.9999999999999998.
const COUNT_EPS: f64 = 1e-9;

fn floor_count(strength: f64, n: usize) -> usize {
    (strength * n as f64 + COUNT_EPS).floor() as usize
}

fn ceil_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - COUNT_EPS).ceil().max(0.0) as usize).min(n)
}

/// Removes `floor(strength * n)` uniformly chosen nodes (at most `n - 1`)
/// together with their incident edges.
pub fn node_drop<R: Rng + ?Sized>(g: &Graph, strength: f64, rng: &mut R) -> Result<Graph> {
    check_strength(strength)?;
    let n = g.n_nodes();
    let k = floor_count(strength, n).min(n - 1);
    if k == 0 {
        return Ok(g.clone());
    }
    let dropped: BTreeSet<usize> = sample(rng, n, k).into_iter().collect();
    let keep: Vec<usize> = (0..n).filter(|i| !dropped.contains(i)).collect();
    g.induced_subgraph(&keep)
}

/// Applies `floor(strength * |E|)` edge edits; each is a fair coin between
/// deleting a uniform edge of the input graph and adding a uniform pair
/// absent from it. Edits never undo each other. When only one kind of edit
/// is possible it is used.
pub fn edge_perturb<R: Rng + ?Sized>(g: &Graph, strength: f64, rng: &mut R) -> Result<Graph> {
    check_strength(strength)?;
    let k = floor_count(strength, g.n_edges());
    if k == 0 {
        return Ok(g.clone());
    }
    let n = g.n_nodes();
    let max_edges = n * (n - 1) / 2;
    let original: BTreeSet<(usize, usize)> = g.edges().iter().copied().collect();
    let absent_total = max_edges - original.len();
    let mut kept: Vec<(usize, usize)> = g.edges().to_vec();
    let mut added: BTreeSet<(usize, usize)> = BTreeSet::new();
    for _ in 0..k {
        let can_delete = !kept.is_empty();
        let can_add = added.len() < absent_total;
        let delete = match (can_delete, can_add) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => rng.random_bool(0.5),
        };
        if delete {
            let idx = rng.random_range(0..kept.len());
            kept.swap_remove(idx);
        } else {
            let e = random_absent_pair(n, &original, &added, rng);
            added.insert(e);
        }
    }
    g.with_edges(kept.into_iter().chain(added))
}

fn random_absent_pair<R: Rng + ?Sized>(
    n: usize,
    original: &BTreeSet<(usize, usize)>,
    added: &BTreeSet<(usize, usize)>,
    rng: &mut R,
) -> (usize, usize) {
    let taken = |e: &(usize, usize)| original.contains(e) || added.contains(e);
    // Dense graphs: enumerate the complement instead of rejection sampling.
    if (original.len() + added.len()) * 2 > n * (n - 1) / 2 {
        let absent: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|e| !taken(e))
            .collect();
        return absent[rng.random_range(0..absent.len())];
    }
    loop {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if !taken(&e) {
            return e;
        }
    }
}

/// Zeroes the feature rows of `floor(strength * n)` uniformly chosen nodes.
pub fn attr_mask<R: Rng + ?Sized>(g: &Graph, strength: f64, rng: &mut R) -> Result<Graph> {
    check_strength(strength)?;
    let n = g.n_nodes();
    let k = floor_count(strength, n);
    if k == 0 {
        return Ok(g.clone());
    }
    let mut features = g.features().clone();
    for i in sample(rng, n, k) {
        features.row_mut(i).fill(0.0);
    }
    g.with_features(features)
}

/// Random-walk subgraph: starting from a uniform node, walks to uniform
/// neighbors until `ceil((1 - strength) * n)` distinct nodes are visited or
/// the walk stalls for `10 * n` consecutive steps without reaching a new
/// node, then returns the induced subgraph.
pub fn subgraph_sample<R: Rng + ?Sized>(g: &Graph, strength: f64, rng: &mut R) -> Result<Graph> {
    check_strength(strength)?;
    let n = g.n_nodes();
    let target = ceil_count(1.0 - strength, n).max(1);
    let adj = g.neighbor_lists();
    let mut current = rng.random_range(0..n);
    let mut visited = vec![false; n];
    visited[current] = true;
    let mut count = 1;
    let mut stalled = 0;
    while count < target && stalled < 10 * n {
        stalled += 1;
        let nbrs = &adj[current];
        if nbrs.is_empty() {
            continue;
        }
        current = nbrs[rng.random_range(0..nbrs.len())];
        if !visited[current] {
            visited[current] = true;
            count += 1;
            stalled = 0;
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| visited[i]).collect();
    g.induced_subgraph(&keep)
}

/// Draws two independent views; each picks one operator uniformly from the
/// policy and applies it at the policy strength.
pub fn sample_views<R: Rng + ?Sized>(
    g: &Graph,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(Graph, Graph)> {
    let first = sample_view(g, policy, rng)?;
    let second = sample_view(g, policy, rng)?;
    Ok((first, second))
}

pub fn sample_view<R: Rng + ?Sized>(g: &Graph, policy: &AugmentPolicy, rng: &mut R) -> Result<Graph> {
    let op = policy.operators[rng.random_range(0..policy.operators.len())];
    op.apply(g, policy.strength, rng)
}
