// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use super::{DataType, Rational};

/// Rounding mode of a [`Op::Quant`] node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    RoundHalfUp,
    Floor,
}

impl Rounding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rounding::RoundHalfUp => "ROUND_HALF_UP",
            Rounding::Floor => "FLOOR",
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Rounding::RoundHalfUp => (x + 0.5).floor(),
            Rounding::Floor => x.floor(),
        }
    }

    pub fn apply_exact(&self, x: Rational) -> i64 {
        match self {
            Rounding::RoundHalfUp => (x + Rational::new(1, 2)).floor().to_integer(),
            Rounding::Floor => x.floor().to_integer(),
        }
    }
}

impl FromStr for Rounding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ROUND_HALF_UP" => Ok(Rounding::RoundHalfUp),
            "FLOOR" => Ok(Rounding::Floor),
            _ => Err(format!("unknown rounding mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvAttrs {
    pub kernel: u32,
    pub stride: u32,
    /// Zero padding `[begin, end]` applied to both spatial axes.
    pub pads: [u32; 2],
    pub fused_relu: bool,
    pub accumulator: Option<DataType>,
    pub reuse_factor: u32,
}

impl ConvAttrs {
    pub fn new(kernel: u32, stride: u32) -> Self {
        ConvAttrs { kernel, stride, pads: [0, 0], fused_relu: false, accumulator: None, reuse_factor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseAttrs {
    pub fused_relu: bool,
    pub accumulator: Option<DataType>,
    pub reuse_factor: u32,
}

impl Default for DenseAttrs {
    fn default() -> Self {
        DenseAttrs { fused_relu: false, accumulator: None, reuse_factor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormAttrs {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolAttrs {
    pub kernel: u32,
    pub stride: u32,
}

/// `quantize(x) = clamp(round(x / scale + zero_point), dtype.min, dtype.max)`;
/// the node emits the dequantized value `(q - zero_point) * scale`.
/// BIPOLAR quantizes by sign, with zero mapping to +1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantAttrs {
    pub scale: Rational,
    pub zero_point: i64,
    pub dtype: DataType,
    pub rounding: Rounding,
}

/// `y = out_scale * #{i : x >= T[c][i]} + out_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiThresholdAttrs {
    pub out_scale: Rational,
    pub out_bias: Rational,
    pub out_dtype: DataType,
}

/// Operator and its attributes. The op set is closed.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// inputs: `[x, weight, bias?]`, weight `[m, n, k, k]`.
    Conv2D(ConvAttrs),
    /// inputs: `[x, weight, bias?]`, weight `[m, n]`.
    Dense(DenseAttrs),
    /// inputs: `[x, gamma, beta, mean, var]`.
    BatchNorm(BatchNormAttrs),
    Relu,
    MaxPool2D(PoolAttrs),
    AvgPool2D(PoolAttrs),
    Add,
    Quant(QuantAttrs),
    /// inputs: `[x, thresholds]`, thresholds `[C, L]` sorted per row.
    MultiThreshold(MultiThresholdAttrs),
    Softmax,
    ArgMax,
    Flatten,
}

/// Attribute-free discriminant of [`Op`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv2D,
    Dense,
    BatchNorm,
    Relu,
    MaxPool2D,
    AvgPool2D,
    Add,
    Quant,
    MultiThreshold,
    Softmax,
    ArgMax,
    Flatten,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2D,
        OpKind::Dense,
        OpKind::BatchNorm,
        OpKind::Relu,
        OpKind::MaxPool2D,
        OpKind::AvgPool2D,
        OpKind::Add,
        OpKind::Quant,
        OpKind::MultiThreshold,
        OpKind::Softmax,
        OpKind::ArgMax,
        OpKind::Flatten,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::Dense => "Dense",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::Relu => "ReLU",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::AvgPool2D => "AvgPool2D",
            OpKind::Add => "Add",
            OpKind::Quant => "Quant",
            OpKind::MultiThreshold => "MultiThreshold",
            OpKind::Softmax => "Softmax",
            OpKind::ArgMax => "ArgMax",
            OpKind::Flatten => "Flatten",
        }
    }

    /// Documented attribute names.
    pub fn attr_names(&self) -> &'static [&'static str] {
        match self {
            OpKind::Conv2D => &["kernel", "stride", "pads", "fused_relu", "accumulator", "reuse_factor"],
            OpKind::Dense => &["fused_relu", "accumulator", "reuse_factor"],
            OpKind::BatchNorm => &["epsilon"],
            OpKind::MaxPool2D | OpKind::AvgPool2D => &["kernel", "stride"],
            OpKind::Quant => &["scale", "zero_point", "dtype", "rounding"],
            OpKind::MultiThreshold => &["out_scale", "out_bias", "out_dtype"],
            OpKind::Relu | OpKind::Add | OpKind::Softmax | OpKind::ArgMax | OpKind::Flatten => &[],
        }
    }

    /// Allowed input arity `(min, max)`.
    pub fn arity(&self) -> (usize, usize) {
        match self {
            OpKind::Conv2D | OpKind::Dense => (2, 3),
            OpKind::BatchNorm => (5, 5),
            OpKind::Add | OpKind::MultiThreshold => (2, 2),
            _ => (1, 1),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Conv2D(_) => OpKind::Conv2D,
            Op::Dense(_) => OpKind::Dense,
            Op::BatchNorm(_) => OpKind::BatchNorm,
            Op::Relu => OpKind::Relu,
            Op::MaxPool2D(_) => OpKind::MaxPool2D,
            Op::AvgPool2D(_) => OpKind::AvgPool2D,
            Op::Add => OpKind::Add,
            Op::Quant(_) => OpKind::Quant,
            Op::MultiThreshold(_) => OpKind::MultiThreshold,
            Op::Softmax => OpKind::Softmax,
            Op::ArgMax => OpKind::ArgMax,
            Op::Flatten => OpKind::Flatten,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Op::Conv2D(_) | Op::Dense(_))
    }

    pub fn fused_relu(&self) -> bool {
        match self {
            Op::Conv2D(a) => a.fused_relu,
            Op::Dense(a) => a.fused_relu,
            _ => false,
        }
    }

    pub fn accumulator(&self) -> Option<DataType> {
        match self {
            Op::Conv2D(a) => a.accumulator,
            Op::Dense(a) => a.accumulator,
            _ => None,
        }
    }

    pub fn reuse_factor(&self) -> u32 {
        match self {
            Op::Conv2D(a) => a.reuse_factor,
            Op::Dense(a) => a.reuse_factor,
            _ => 1,
        }
    }

    /// Square kernel size of a linear op; dense layers count as `k = 1`.
    pub fn kernel(&self) -> u32 {
        match self {
            Op::Conv2D(a) => a.kernel,
            _ => 1,
        }
    }

    pub(crate) fn set_accumulator(&mut self, dt: Option<DataType>) {
        match self {
            Op::Conv2D(a) => a.accumulator = dt,
            Op::Dense(a) => a.accumulator = dt,
            _ => {}
        }
    }

    pub(crate) fn set_fused_relu(&mut self, v: bool) {
        match self {
            Op::Conv2D(a) => a.fused_relu = v,
            Op::Dense(a) => a.fused_relu = v,
            _ => {}
        }
    }

    pub fn set_reuse_factor(&mut self, rf: u32) {
        match self {
            Op::Conv2D(a) => a.reuse_factor = rf,
            Op::Dense(a) => a.reuse_factor = rf,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Node {
    pub fn new(name: impl Into<String>, op: Op, inputs: &[&str], outputs: &[&str]) -> Self {
        Node {
            name: name.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn output(&self) -> &str {
        &self.outputs[0]
    }
}
