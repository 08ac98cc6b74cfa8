use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Slope [`LEAKY_SLOPE`] for negative inputs.
    LeakyRelu,
    Tanh,
    Logistic,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] =
        [Activation::Relu, Activation::LeakyRelu, Activation::Tanh, Activation::Logistic, Activation::Identity];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Logistic => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative given pre-activation `z` and output `a = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    /// True for piecewise-linear activations with a kink at zero.
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv3x3,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Dense, fan_in, fan_out, activation }
    }

    pub fn conv3x3(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Conv3x3, fan_in, fan_out, activation }
    }

    /// A parameter-free elementwise layer over `width` features/channels.
    pub fn activation(width: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Activation, fan_in: width, fan_out: width, activation }
    }

    pub fn has_params(&self) -> bool {
        self.kind != LayerKind::Activation
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_out, self.fan_in],
            LayerKind::Conv3x3 => vec![self.fan_out, self.fan_in * 9],
            LayerKind::Activation => vec![0],
        }
    }

    /// Glorot-uniform bound, with receptive-field-scaled fans for convolutions.
    pub fn init_bound(&self) -> f64 {
        let (fi, fo) = match self.kind {
            LayerKind::Conv3x3 => (self.fan_in * 9, self.fan_out * 9),
            _ => (self.fan_in, self.fan_out),
        };
        (6.0 / (fi + fo) as f64).sqrt()
    }

    pub(crate) fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
        if specs.is_empty() {
            return Err(invalid!("network needs at least one layer"));
        }
        for pair in specs.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(invalid!(
                    "layer chain broken: fan_out {} followed by fan_in {}",
                    pair[0].fan_out,
                    pair[1].fan_in
                ));
            }
            if (pair[0].kind == LayerKind::Dense && pair[1].kind == LayerKind::Conv3x3)
                || (pair[0].kind == LayerKind::Conv3x3 && pair[1].kind == LayerKind::Dense)
            {
                return Err(invalid!("cannot mix dense and conv3x3 layers in one chain"));
            }
        }
        for s in specs {
            if s.fan_in == 0 || s.fan_out == 0 {
                return Err(invalid!("layer widths must be nonzero"));
            }
            if s.kind == LayerKind::Activation && s.fan_in != s.fan_out {
                return Err(invalid!("activation layer must preserve width"));
            }
        }
        Ok(())
    }
}
