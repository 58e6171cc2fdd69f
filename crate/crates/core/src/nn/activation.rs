use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::tensor::Tensor;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Leaky,
    Mish,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Leaky => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Mish => mish(x),
            Activation::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Leaky => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Mish => mish_derivative(x),
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Leaky => "leaky",
            Activation::Mish => "mish",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leaky" => Ok(Activation::Leaky),
            "mish" => Ok(Activation::Mish),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_derivative(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Elementwise activation.
pub fn activate(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Linear => x.clone(),
        _ => x.map(|v| kind.apply(v)),
    }
}

/// Multiplies `upstream` by the activation derivative evaluated at the pre-activation `z`.
pub fn activate_backward(z: &Tensor, upstream: &Tensor, kind: Activation) -> Tensor {
    if kind == Activation::Linear {
        return upstream.clone();
    }
    let mut out = upstream.clone();
    for (g, &zi) in out.data_mut().iter_mut().zip(z.data()) {
        *g *= kind.derivative(zi);
    }
    out
}
