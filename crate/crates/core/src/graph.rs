//! Graphs, datasets, the synthetic stochastic-block-model generator and the
//! JSON dataset format.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::Matrix;

/// An undirected simple graph with node features.
///
/// Edges are kept as a sorted list of `(u, v)` pairs with `u < v`, which
/// fixes the iteration order of everything built on top of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    label: Option<usize>,
}

impl Graph {
    /// Builds a graph, canonicalizing edge orientation and order.
    ///
    /// Rejects self-loops, duplicate edges, out-of-range endpoints, empty
    /// node sets and feature matrices whose row count differs from
    /// `n_nodes`.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        label: Option<usize>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Validation("graph has no nodes".into()));
        }
        if features.nrows() != n_nodes {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                n_nodes
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite node feature".into()));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {u}")));
            }
            if !set.insert((u.min(v), u.max(v))) {
                return Err(Error::Validation(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Graph {
            n_nodes,
            edges: set.into_iter().collect(),
            features,
            label,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Neighbor lists, each sorted ascending.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> Matrix {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Same graph with a different feature matrix (same shape required).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::invalid("feature shape mismatch"));
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// Same node set and features with a replacement edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Graph::new(self.n_nodes, edges, self.features.clone(), self.label)
    }

    /// Subgraph induced by `keep`, reindexed in ascending original order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Self> {
        let mut nodes: Vec<usize> = keep.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        let mut new_index = vec![usize::MAX; self.n_nodes];
        for (i, &n) in nodes.iter().enumerate() {
            if n >= self.n_nodes {
                return Err(Error::invalid(format!("node {n} out of range")));
            }
            new_index[n] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| new_index[u] != usize::MAX && new_index[v] != usize::MAX)
            .map(|&(u, v)| (new_index[u], new_index[v]));
        let features = self.features.select(ndarray::Axis(0), &nodes);
        Graph::new(nodes.len(), edges, features, self.label)
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let mut features = Array2::zeros(self.features.dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(p).assign(&self.features.row(i));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        Graph::new(self.n_nodes, edges, features, self.label)
    }
}

/// An ordered, nonempty collection of graphs sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    graphs: Vec<Graph>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, graphs: Vec<Graph>) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::Validation("dataset has no graphs".into()));
        };
        let dim = first.feature_dim();
        if let Some((i, g)) = graphs
            .iter()
            .enumerate()
            .find(|(_, g)| g.feature_dim() != dim)
        {
            return Err(Error::Validation(format!(
                "graph {i} has feature dimension {}, expected {dim}",
                g.feature_dim()
            )));
        }
        Ok(Dataset {
            name: name.into(),
            seed,
            graphs,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.graphs
            .iter()
            .filter_map(Graph::label)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&DatasetFile::from(self))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    name: String,
    seed: u64,
    graphs: Vec<GraphRecord>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    label: Option<usize>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        let graphs = ds
            .graphs
            .iter()
            .map(|g| GraphRecord {
                n_nodes: g.n_nodes,
                edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
                features: g.features.rows().into_iter().map(|r| r.to_vec()).collect(),
                label: g.label,
            })
            .collect();
        DatasetFile {
            name: ds.name.clone(),
            seed: ds.seed,
            graphs,
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(file: DatasetFile) -> Result<Self> {
        let mut graphs = Vec::with_capacity(file.graphs.len());
        for (i, rec) in file.graphs.into_iter().enumerate() {
            let width = rec.features.first().map_or(0, Vec::len);
            if rec.features.iter().any(|r| r.len() != width) {
                return Err(Error::Validation(format!("graph {i}: ragged feature rows")));
            }
            let flat: Vec<f64> = rec.features.concat();
            let features = Array2::from_shape_vec((rec.features.len(), width), flat)
                .map_err(|e| Error::Validation(format!("graph {i}: {e}")))?;
            let g = Graph::new(
                rec.n_nodes,
                rec.edges.iter().map(|e| (e[0], e[1])),
                features,
                rec.label,
            )
            .map_err(|e| Error::Validation(format!("graph {i}: {e}")))?;
            graphs.push(g);
        }
        Dataset::new(file.name, file.seed, graphs)
    }
}

/// Parameters of the synthetic stochastic-block-model dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n_graphs: 200,
            min_nodes: 20,
            max_nodes: 30,
            p_in: 0.5,
            p_out: 0.05,
            n_classes: 2,
            feature_dim: 8,
            seed: 0,
        }
    }
}

const FEATURE_SIGMA: f64 = 0.5;
const FEATURE_CLAMP: f64 = 2.0;

/// Generates a labelled SBM dataset.
///
/// Graph `i` has class `i % n_classes`; a class-`c` graph has `c + 1`
/// contiguous blocks of (nearly) equal size, so the class is visible in the
/// community structure. Node features are Gaussian around the class's
/// coordinate axis (`sigma = 0.5`), clamped to `[-2, 2]`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Dataset> {
    if cfg.n_graphs == 0 || cfg.n_classes == 0 || cfg.feature_dim == 0 {
        return Err(Error::invalid(
            "n_graphs, n_classes and feature_dim must be positive",
        ));
    }
    if cfg.min_nodes == 0 || cfg.min_nodes > cfg.max_nodes {
        return Err(Error::invalid(format!(
            "empty node-count range [{}, {}]",
            cfg.min_nodes, cfg.max_nodes
        )));
    }
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::invalid(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={}, p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    let noise = Normal::new(0.0, FEATURE_SIGMA).expect("valid sigma");
    let graphs = (0..cfg.n_graphs)
        .map(|i| {
            let mut rng = seed::derived_rng(cfg.seed, &[0x5B4D, i as u64]);
            let class = i % cfg.n_classes;
            let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
            let blocks = (class + 1).min(n);
            let block_of = |k: usize| k * blocks / n;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if block_of(u) == block_of(v) {
                        cfg.p_in
                    } else {
                        cfg.p_out
                    };
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            let axis = class % cfg.feature_dim;
            let features = Array2::from_shape_fn((n, cfg.feature_dim), |(_, j)| {
                let mean = if j == axis { 1.0 } else { 0.0 };
                (mean + noise.sample(&mut rng)).clamp(-FEATURE_CLAMP, FEATURE_CLAMP)
            });
            Graph::new(n, edges, features, Some(class))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("sbm-{}c", cfg.n_classes), cfg.seed, graphs)
}
