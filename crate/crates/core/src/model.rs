//! Model descriptions: layer specifications, parameter sets and
//! deterministic initialization.
//!
//! A model is an ordered list of layers ending in a loss head. Layers are
//! the freezing granularity: a layer is either fully trainable or fully
//! frozen, never split internally.

use crate::error::{Error, Result};
use crate::tensor::{digest_tensors, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One layer of a sequential model.
///
/// `Residual` wraps a shape-preserving inner stack and is treated as a
/// single layer for partitioning and freezing. `SquaredError` and
/// `SoftmaxCrossEntropy` are loss heads and must appear exactly once, as
/// the final layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Linear {
        #[serde(rename = "in")]
        input: usize,
        #[serde(rename = "out")]
        output: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Relu,
    Gelu,
    LayerNorm {
        dim: usize,
    },
    Residual {
        layers: Vec<LayerSpec>,
    },
    Embedding {
        vocab: usize,
        dim: usize,
    },
    Attention {
        dim: usize,
    },
    SquaredError,
    SoftmaxCrossEntropy,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    /// Shapes of this layer's parameter tensors, in update order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Linear { input, output, bias } => {
                let mut shapes = vec![vec![*output, *input]];
                if *bias {
                    shapes.push(vec![*output]);
                }
                shapes
            }
            LayerSpec::LayerNorm { dim } => vec![vec![*dim], vec![*dim]],
            LayerSpec::Residual { layers } => {
                layers.iter().flat_map(|l| l.param_shapes()).collect()
            }
            LayerSpec::Embedding { vocab, dim } => vec![vec![*vocab, *dim]],
            // Query, key, value and output projections.
            LayerSpec::Attention { dim } => vec![vec![*dim, *dim]; 4],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub fn is_parameterized(&self) -> bool {
        self.param_count() > 0
    }

    pub fn is_head(&self) -> bool {
        matches!(self, LayerSpec::SquaredError | LayerSpec::SoftmaxCrossEntropy)
    }

    /// Feature width produced from an input of width `in_dim`, or an error
    /// if the widths do not compose. `None` widths (embedding inputs) are
    /// handled in [`ModelSpec::validate`].
    fn out_width(&self, in_dim: usize) -> Result<usize> {
        match self {
            LayerSpec::Linear { input, output, .. } => {
                if *input != in_dim {
                    return Err(Error::InvalidModel(format!(
                        "linear layer expects width {input}, got {in_dim}"
                    )));
                }
                Ok(*output)
            }
            LayerSpec::LayerNorm { dim } | LayerSpec::Attention { dim } => {
                if *dim != in_dim {
                    return Err(Error::InvalidModel(format!(
                        "layer expects width {dim}, got {in_dim}"
                    )));
                }
                Ok(in_dim)
            }
            LayerSpec::Residual { layers } => {
                let mut w = in_dim;
                for l in layers {
                    w = l.out_width(w)?;
                }
                if w != in_dim {
                    return Err(Error::InvalidModel(format!(
                        "residual inner stack maps width {in_dim} to {w}; must preserve width"
                    )));
                }
                Ok(in_dim)
            }
            LayerSpec::Embedding { dim, .. } => Ok(*dim),
            _ => Ok(in_dim),
        }
    }
}

/// Parameter initialization scheme. Only one scheme is defined:
/// Kaiming-uniform for matrix weights, N(0, 0.02) for embedding tables,
/// ones/zeros for layer-norm scale/shift, zeros for biases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Default,
}

/// An ordered stack of layers plus the seed that fixes its initial
/// parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            layers,
            seed,
            init: InitScheme::Default,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Indices of layers that own parameters.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        if !self.layers[n - 1].is_head() {
            return Err(Error::InvalidModel(
                "last layer must be a loss head (squared_error or softmax_cross_entropy)".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.is_head() && i != n - 1 {
                return Err(Error::InvalidModel(format!(
                    "loss head at position {i} must be the final layer"
                )));
            }
            if matches!(l, LayerSpec::Embedding { .. }) && i != 0 {
                return Err(Error::InvalidModel(
                    "embedding layer is only supported as the first layer".into(),
                ));
            }
            if let LayerSpec::Residual { layers } = l {
                if layers.iter().any(|il| {
                    il.is_head()
                        || matches!(il, LayerSpec::Embedding { .. } | LayerSpec::Residual { .. })
                }) {
                    return Err(Error::InvalidModel(
                        "residual inner layers cannot be heads, embeddings or nested residuals"
                            .into(),
                    ));
                }
            }
        }
        if self.param_count() == 0 {
            return Err(Error::InvalidModel(
                "model has no parameterized layer".into(),
            ));
        }
        // Width composition: an embedding (or the first linear layer) fixes
        // the feature width, everything after must agree.
        let mut width: Option<usize> = None;
        for l in &self.layers {
            width = match (width, l) {
                (None, LayerSpec::Embedding { dim, .. }) => Some(*dim),
                (None, LayerSpec::Linear { output, .. }) => Some(*output),
                (None, _) => None,
                (Some(w), l) => Some(l.out_width(w)?),
            };
        }
        Ok(())
    }

    /// Deterministically initializes all parameters from `self.seed`.
    pub fn init_params(&self) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let by_layer = self
            .layers
            .iter()
            .map(|l| init_layer(l, &mut rng))
            .collect();
        ParamSet { by_layer }
    }
}

fn init_layer(layer: &LayerSpec, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    match layer {
        LayerSpec::Linear { input, output, bias } => {
            let mut params = vec![kaiming_uniform(*output, *input, rng)];
            if *bias {
                params.push(Tensor::zeros(vec![*output]));
            }
            params
        }
        LayerSpec::LayerNorm { dim } => {
            vec![Tensor::filled(vec![*dim], 1.0), Tensor::zeros(vec![*dim])]
        }
        LayerSpec::Residual { layers } => layers.iter().flat_map(|l| init_layer(l, rng)).collect(),
        LayerSpec::Embedding { vocab, dim } => {
            let data = (0..vocab * dim).map(|_| 0.02 * normal(rng)).collect();
            vec![Tensor::new(vec![*vocab, *dim], data).expect("embedding init")]
        }
        LayerSpec::Attention { dim } => (0..4).map(|_| kaiming_uniform(*dim, *dim, rng)).collect(),
        _ => vec![],
    }
}

fn kaiming_uniform(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / inp as f64).sqrt();
    let data = (0..out * inp)
        .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound)
        .collect();
    Tensor::new(vec![out, inp], data).expect("kaiming init")
}

/// Standard normal draw via Box-Muller; keeps the dependency surface small
/// and the byte stream of the seeded generator fully under our control.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// All parameter tensors of a model, indexed by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    by_layer: Vec<Vec<Tensor>>,
}

impl ParamSet {
    pub fn layer(&self, i: usize) -> &[Tensor] {
        &self.by_layer[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [Tensor] {
        &mut self.by_layer[i]
    }

    pub fn layer_count(&self) -> usize {
        self.by_layer.len()
    }

    /// Total floats held by all parameters.
    pub fn float_units(&self) -> u64 {
        self.by_layer
            .iter()
            .flatten()
            .map(|t| t.numel() as u64)
            .sum()
    }

    /// Digest of the parameters of the given layer indices, in index order.
    pub fn digest_layers(&self, layers: impl IntoIterator<Item = usize>) -> [u8; 32] {
        digest_tensors(layers.into_iter().flat_map(|i| self.by_layer[i].iter()))
    }
}
