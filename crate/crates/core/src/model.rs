//! Fully connected ReLU classifiers of graded capacity, plus the binary weight format.
//!
//! Weight file layout (all little-endian):
//!
//! ```text
//! magic   b"CKDW"
//! version u16 (= 1)
//! layers  u16
//! per layer: rows u32, cols u32, rows*cols f64 weights (row-major), cols f64 biases
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CkdError, Result};
use crate::matrix::{add_bias, add_bias_backward, matmul, relu, relu_backward, Matrix};

pub const WEIGHT_MAGIC: &[u8; 4] = b"CKDW";
pub const WEIGHT_VERSION: u16 = 1;

/// Layer widths from input to output; hidden layers use ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = MlpSpec { layer_widths };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(CkdError::invalid(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(CkdError::invalid(format!(
                "layer widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl fmt::Display for MlpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layer_widths.iter().map(|w| w.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// One affine layer: `y = x * weight + bias`, weight is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Same layout as [`ModelParams`]; used for gradients and optimizer velocity.
pub type ParamGrads = ModelParams;

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the features for layer 0).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    pre_activations: Vec<Matrix>,
}

impl ModelParams {
    /// Fan-in scaled Gaussian weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect();
                Layer {
                    weight: Matrix::from_raw(w[0], w[1], data),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(ModelParams {
            spec: spec.clone(),
            layers,
        })
    }

    /// All-zero parameters shaped like `spec`.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(ModelParams {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CkdError::invalid("a model needs at least one layer"));
        }
        let mut widths = vec![layers[0].weight.rows()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.rows() != *widths.last().unwrap() {
                return Err(CkdError::ShapeMismatch {
                    context: "ModelParams::from_layers",
                    expected: format!("layer {i} with {} input rows", widths.last().unwrap()),
                    actual: format!("{} rows", layer.weight.rows()),
                });
            }
            if layer.bias.len() != layer.weight.cols() {
                return Err(CkdError::ShapeMismatch {
                    context: "ModelParams::from_layers",
                    expected: format!("layer {i} bias of length {}", layer.weight.cols()),
                    actual: format!("length {}", layer.bias.len()),
                });
            }
            widths.push(layer.weight.cols());
        }
        let spec = MlpSpec::new(widths)?;
        let params = ModelParams { spec, layers };
        if !params.is_finite() {
            return Err(CkdError::invalid("model parameters must be finite"));
        }
        Ok(params)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Every parameter in layer order: weights row-major, then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(CkdError::ShapeMismatch {
                context: "ModelParams::from_flat",
                expected: format!("{} values", spec.param_count()),
                actual: format!("{} values", flat.len()),
            });
        }
        let mut params = ModelParams::zeros(spec)?;
        for (dst, src) in params.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(params)
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.spec.input_width() {
            return Err(CkdError::ShapeMismatch {
                context: "forward",
                expected: format!("{} input features", self.spec.input_width()),
                actual: format!("{}", features.cols()),
            });
        }
        Ok(())
    }

    /// Logits for every row of `features`.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        self.check_input(features)?;
        let mut x = features.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = add_bias(&matmul(&x, &layer.weight)?, &layer.bias)?;
            x = if i < last { relu(&z) } else { z };
        }
        Ok(x)
    }

    pub fn forward_cached(&self, features: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(features)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len() - 1),
        };
        let mut x = features.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = add_bias(&matmul(&x, &layer.weight)?, &layer.bias)?;
            cache.inputs.push(x);
            if i < last {
                x = relu(&z);
                cache.pre_activations.push(z);
            } else {
                x = z;
            }
        }
        Ok((x, cache))
    }

    /// Parameter gradients given `d loss / d logits` for the cached forward pass.
    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<ParamGrads> {
        let n = cache.inputs[0].rows();
        if upstream.shape() != (n, self.spec.output_width()) {
            return Err(CkdError::ShapeMismatch {
                context: "backward",
                expected: format!("{n}x{}", self.spec.output_width()),
                actual: format!("{}x{}", upstream.rows(), upstream.cols()),
            });
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            let weight_grad = matmul(&input.transpose(), &delta)?;
            let bias_grad = add_bias_backward(&delta);
            grads.push(Layer {
                weight: weight_grad,
                bias: bias_grad,
            });
            if i > 0 {
                let through = matmul(&delta, &self.layers[i].weight.transpose())?;
                delta = relu_backward(&cache.pre_activations[i - 1], &through)?;
            }
        }
        grads.reverse();
        Ok(ModelParams {
            spec: self.spec.clone(),
            layers: grads,
        })
    }

    /// Recomputes the forward pass on `features` and backpropagates `upstream`.
    pub fn backward(&self, features: &Matrix, upstream: &Matrix) -> Result<ParamGrads> {
        let (_, cache) = self.forward_cached(features)?;
        self.backward_cached(&cache, upstream)
    }

    // -----------------------------------------------------------------------
    // Serialization
    // -----------------------------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.param_count() + 8 * self.layers.len());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.weight.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.weight.cols() as u32).to_le_bytes());
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0, origin };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(CkdError::format(origin, "byte 0", "bad magic"));
        }
        let version = r.u16()?;
        if version != WEIGHT_VERSION {
            return Err(CkdError::format(
                origin,
                "byte 4",
                format!("unsupported version {version}"),
            ));
        }
        let count = r.u16()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weights = r.f64s(rows * cols)?;
            let bias = r.f64s(cols)?;
            layers.push(Layer {
                weight: Matrix::from_vec(rows, cols, weights)?,
                bias,
            });
        }
        if r.pos != bytes.len() {
            return Err(CkdError::format(
                origin,
                format!("byte {}", r.pos),
                "trailing bytes after last layer",
            ));
        }
        ModelParams::from_layers(layers)
            .map_err(|e| CkdError::format(origin, "layer table", format!("inconsistent layers: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| CkdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(CkdError::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| CkdError::io(path, e))?;
        ModelParams::from_bytes(&bytes, path)
    }

    /// Loads and checks the file against an expected architecture.
    pub fn load_expecting(path: impl AsRef<Path>, spec: &MlpSpec) -> Result<Self> {
        let path = path.as_ref();
        let params = ModelParams::load(path)?;
        if params.spec != *spec {
            return Err(CkdError::format(
                path,
                "layer table",
                format!("expected widths {spec}, found {}", params.spec),
            ));
        }
        Ok(params)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CkdError::format(
                self.origin,
                format!("byte {}", self.pos),
                format!(
                    "truncated file: wanted {n} more bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Classrooms
// ---------------------------------------------------------------------------

/// Student, teacher and an ordered list of peers sharing one output width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassroomSpec {
    pub student: MlpSpec,
    pub teacher: MlpSpec,
    #[serde(default)]
    pub peers: Vec<MlpSpec>,
}

impl ClassroomSpec {
    /// Student `[2,16,10]`, peers of width 24/32/48/64, teacher `[2,128,10]`.
    pub fn toy() -> Self {
        let mlp = |h: usize| MlpSpec {
            layer_widths: vec![2, h, 10],
        };
        ClassroomSpec {
            student: mlp(16),
            teacher: mlp(128),
            peers: [24, 32, 48, 64].into_iter().map(mlp).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        self.teacher.validate()?;
        let out = self.student.output_width();
        let input = self.student.input_width();
        for (name, spec) in std::iter::once(("teacher".to_string(), &self.teacher)).chain(
            self.peers
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("peer{}", i + 1), p)),
        ) {
            spec.validate()?;
            if spec.output_width() != out || spec.input_width() != input {
                return Err(CkdError::invalid(format!(
                    "{name} {spec} does not match student input/output widths {input}/{out}"
                )));
            }
        }
        Ok(())
    }

    pub fn mentor_count(&self) -> usize {
        self.peers.len() + 1
    }
}

/// One initialization seed per classroom model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassroomSeeds {
    pub student: u64,
    pub teacher: u64,
    pub peers: Vec<u64>,
}

/// Parameters for every classroom model.
#[derive(Debug, Clone, PartialEq)]
pub struct Classroom {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub peers: Vec<ModelParams>,
}

impl Classroom {
    pub fn mentor_count(&self) -> usize {
        self.peers.len() + 1
    }

    /// Parameter counts from student through peers to teacher.
    pub fn capacity_order(&self) -> Vec<usize> {
        std::iter::once(self.student.param_count())
            .chain(self.peers.iter().map(ModelParams::param_count))
            .chain(std::iter::once(self.teacher.param_count()))
            .collect()
    }
}

pub fn build_classroom(spec: &ClassroomSpec, seeds: &ClassroomSeeds) -> Result<Classroom> {
    spec.validate()?;
    if seeds.peers.len() != spec.peers.len() {
        return Err(CkdError::invalid(format!(
            "{} peer seeds for {} peers",
            seeds.peers.len(),
            spec.peers.len()
        )));
    }
    Ok(Classroom {
        student: ModelParams::init(&spec.student, seeds.student)?,
        teacher: ModelParams::init(&spec.teacher, seeds.teacher)?,
        peers: spec
            .peers
            .iter()
            .zip(&seeds.peers)
            .map(|(p, &s)| ModelParams::init(p, s))
            .collect::<Result<_>>()?,
    })
}
