use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
}

/// Shape of a fully-connected network: `input_dim` inputs, `hidden_layers`
/// ELU layers of `hidden_width` units, and a linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the row-major `fan_out × fan_in` weight block.
    pub weights: usize,
    /// Offset of the `fan_out` biases, directly after the weights.
    pub bias: usize,
}

impl NetworkSpec {
    /// Time-input network with ELU hidden layers.
    pub fn new(hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Self {
        Self {
            input_dim: 1,
            hidden_layers,
            hidden_width,
            output_dim,
            activation: Activation::Elu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 1 {
            return Err(Error::Shape(format!(
                "networks take the scalar time as their only input, got input_dim {}",
                self.input_dim
            )));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::Shape(format!("all network dimensions must be at least 1: {self:?}")));
        }
        Ok(())
    }

    /// Affine layers in evaluation order. Canonical parameter order is
    /// layer-major; inside a layer the row-major weights come first, then the
    /// biases.
    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(self.input_dim);
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let layout = LayerLayout {
                    fan_in,
                    fan_out,
                    weights: offset,
                    bias: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                layout
            })
            .collect()
    }
}

/// Number of trainable parameters of `spec`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let w = spec.hidden_width;
    (spec.input_dim * w + w) + (spec.hidden_layers - 1) * (w * w + w) + (w * spec.output_dim + spec.output_dim)
}

/// Flat parameters of one network in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn new(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected = param_count(&spec);
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameters supplied, spec needs {expected}",
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        Self::new(spec, vec![0.0; param_count(&spec)])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// He-normal initialization: weights drawn from `N(0, 2 / fan_in)`, biases
/// zero.
///
/// The generator is ChaCha8 seeded with `seed` via `seed_from_u64` on stream
/// 0; normals come from `rand_distr::StandardNormal` and are consumed in
/// canonical parameter order. The output is identical on every platform.
pub fn he_init(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    he_init_stream(spec, seed, 0)
}

/// [`he_init`] on ChaCha stream `stream`, so several networks can share one
/// seed without sharing draws.
pub fn he_init_stream(spec: &NetworkSpec, seed: u64, stream: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut values = vec![0.0; param_count(spec)];
    for layer in spec.layers() {
        let std = (2.0 / layer.fan_in as f64).sqrt();
        for w in &mut values[layer.weights..layer.bias] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = std * z;
        }
    }
    NetworkParams::new(*spec, values)
}
