use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Default negative slope of [`Activation::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
/// Default saturation scale of [`Activation::Elu`].
pub const ELU_ALPHA: f64 = 1.0;
/// Initial per-channel slope of [`Activation::Prelu`].
pub const PRELU_INIT: f64 = 0.25;

/// Elementwise nonlinearities. `Prelu` carries a learned per-channel slope
/// that lives in the model's parameter registry.
///
/// Parses from `relu`, `lrelu`, `prelu`, `softplus`, `gelu`, `silu`, `elu`;
/// `lrelu:<slope>` and `elu:<alpha>` override the default constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Prelu,
    Softplus,
    Gelu,
    Silu,
    Elu(f64),
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Relu,
        Activation::LeakyRelu(LEAKY_RELU_SLOPE),
        Activation::Prelu,
        Activation::Softplus,
        Activation::Gelu,
        Activation::Silu,
        Activation::Elu(ELU_ALPHA),
    ];

    /// Forward value. `Prelu` uses its initial slope here; the graph op
    /// supplies the learned slope.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => leaky(x, a),
            Activation::Prelu => leaky(x, PRELU_INIT),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Silu => x * sigmoid(x),
            Activation::Elu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x.exp_m1()
                }
            }
        }
    }

    /// Derivative with respect to the input. Kinks take the right-hand value
    /// at zero for `Relu` and the left-hand value for the leaky variants.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => leaky_slope(x, a),
            Activation::Prelu => leaky_slope(x, PRELU_INIT),
            Activation::Softplus => sigmoid(x),
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Elu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a * x.exp()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "lrelu",
            Activation::Prelu => "prelu",
            Activation::Softplus => "softplus",
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Elu(_) => "elu",
        }
    }

    /// Whether the function is non-differentiable at the origin.
    pub fn has_kink(self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::LeakyRelu(_) | Activation::Prelu
        )
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub(crate) fn leaky_slope(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Activation::LeakyRelu(a) if a != LEAKY_RELU_SLOPE => write!(f, "lrelu:{a}"),
            Activation::Elu(a) if a != ELU_ALPHA => write!(f, "elu:{a}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad activation parameter in `{s}`")))?;
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite activation parameter in `{s}`")));
                }
                (n, Some(v))
            }
            None => (s, None),
        };
        let act = match (name.to_ascii_lowercase().as_str(), param) {
            ("relu", None) => Activation::Relu,
            ("lrelu", p) => Activation::LeakyRelu(p.unwrap_or(LEAKY_RELU_SLOPE)),
            ("prelu", None) => Activation::Prelu,
            ("softplus", None) => Activation::Softplus,
            ("gelu", None) => Activation::Gelu,
            ("silu", None) => Activation::Silu,
            ("elu", p) => Activation::Elu(p.unwrap_or(ELU_ALPHA)),
            _ => return Err(Error::InvalidArgument(format!("unknown activation `{s}`"))),
        };
        Ok(act)
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}
