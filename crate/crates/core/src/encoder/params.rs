use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::Matrix;

/// Encoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderDims {
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub out_dim: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            in_dim: 8,
            hidden: 32,
            layers: 3,
            out_dim: 32,
        }
    }
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.layers == 0 || self.out_dim == 0 {
            return Err(Error::invalid(format!("encoder dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One GIN layer: `h' = ReLU(MLP((1 + eps) h + Σ neighbors))` with a
/// two-layer MLP `ReLU(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GinLayer {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    /// 1x1.
    pub eps: Matrix,
}

/// Projection head `ReLU(r W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// All trainable tensors of the encoder. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims: EncoderDims,
    pub layers: Vec<GinLayer>,
    pub head: ProjectionHead,
}

fn uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

impl EncoderParams {
    /// Seeded uniform(±1/√fan_in) initialization with `eps = 0`.
    pub fn init(dims: EncoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = seed::derived_rng(seed, &[0xE4C0]);
        let h = dims.hidden;
        let layers = (0..dims.layers)
            .map(|l| {
                let fan_in = if l == 0 { dims.in_dim } else { h };
                GinLayer {
                    w1: uniform(fan_in, h, fan_in, &mut rng),
                    b1: uniform(1, h, fan_in, &mut rng),
                    w2: uniform(h, h, h, &mut rng),
                    b2: uniform(1, h, h, &mut rng),
                    eps: Array2::zeros((1, 1)),
                }
            })
            .collect();
        let head = ProjectionHead {
            w1: uniform(h, h, h, &mut rng),
            b1: uniform(1, h, h, &mut rng),
            w2: uniform(h, dims.out_dim, h, &mut rng),
            b2: uniform(1, dims.out_dim, h, &mut rng),
        };
        Ok(Self { dims, layers, head })
    }

    /// Assembles parameters from explicit tensors, checking every shape.
    pub fn from_parts(dims: EncoderDims, layers: Vec<GinLayer>, head: ProjectionHead) -> Result<Self> {
        let p = Self { dims, layers, head };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    /// Expected shape of every tensor, in [`tensors`](Self::tensors) order.
    pub fn expected_shapes(dims: &EncoderDims) -> Vec<(String, (usize, usize))> {
        let h = dims.hidden;
        let mut out = Vec::new();
        for l in 0..dims.layers {
            let fan_in = if l == 0 { dims.in_dim } else { h };
            out.push((format!("layer{l}.w1"), (fan_in, h)));
            out.push((format!("layer{l}.b1"), (1, h)));
            out.push((format!("layer{l}.w2"), (h, h)));
            out.push((format!("layer{l}.b2"), (1, h)));
            out.push((format!("layer{l}.eps"), (1, 1)));
        }
        out.push(("head.w1".into(), (h, h)));
        out.push(("head.b1".into(), (1, h)));
        out.push(("head.w2".into(), (h, dims.out_dim)));
        out.push(("head.b2".into(), (1, dims.out_dim)));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        Self::expected_shapes(&self.dims)
            .into_iter()
            .map(|(name, _)| name)
            .collect()
    }

    /// Every tensor in a fixed order: layers first, then the head.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([&l.w1, &l.b1, &l.w2, &l.b2, &l.eps]);
        }
        let h = &self.head;
        out.extend([&h.w1, &h.b1, &h.w2, &h.b2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend([&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2, &mut l.eps]);
        }
        let h = &mut self.head;
        out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Adds `other` into `self` tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.layers.len() != self.dims.layers {
            return Err(Error::Validation(format!(
                "expected {} layers, found {}",
                self.dims.layers,
                self.layers.len()
            )));
        }
        for ((name, shape), t) in Self::expected_shapes(&self.dims).iter().zip(self.tensors()) {
            if t.dim() != *shape {
                return Err(Error::Validation(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
            if !t.iter().all(|x| x.is_finite()) {
                return Err(Error::Validation(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            dims: self.dims,
            tensors: self
                .tensor_names()
                .into_iter()
                .zip(self.tensors())
                .map(|(name, t)| TensorRecord {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        file.dims.validate()?;
        let expected = Self::expected_shapes(&file.dims);
        if file.tensors.len() != expected.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, expected {}",
                file.tensors.len(),
                expected.len()
            )));
        }
        let mut mats = Vec::with_capacity(expected.len());
        for (rec, (name, shape)) in file.tensors.into_iter().zip(expected) {
            if rec.name != name || rec.shape != [shape.0, shape.1] {
                return Err(Error::Validation(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            let m = Array2::from_shape_vec(shape, rec.data)
                .map_err(|e| Error::Validation(format!("{name}: {e}")))?;
            mats.push(m);
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("count checked");
        let layers = (0..file.dims.layers)
            .map(|_| GinLayer {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                eps: next(),
            })
            .collect();
        let head = ProjectionHead {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        Self::from_parts(file.dims, layers, head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    dims: EncoderDims,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}
