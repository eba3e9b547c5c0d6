// SPDX-License-Identifier: Apache-2.0

//! Quantized graph intermediate representation.
//!
//! A [`Model`] is a DAG of typed operator [`Node`]s over named tensors. Tensors
//! are either graph inputs, constant initializers, or node outputs. Every
//! non-float tensor is dyadic: its values are integer mantissas scaled by a
//! power of two fixed by its [`DataType`].

mod datatype;
mod format;
mod infer;
mod model;
mod node;
mod tensor;
mod validate;

pub use datatype::{DataType, ParseDataTypeError};
pub(crate) use datatype::power_of_two_exponent;
pub use format::{format_rational, parse_model, parse_rational, parse_tensor_map, serialize_model, serialize_tensor_map};
pub use infer::{infer_types, TensorInfo, TypeMap};
pub(crate) use infer::{acc_layout, linear_channel_ranges, quant_output_dtype};
pub use model::{Flow, Model, ParamCount, ValueInfo};
pub use node::{
    BatchNormAttrs, ConvAttrs, DenseAttrs, MultiThresholdAttrs, Node, Op, OpKind, PoolAttrs, QuantAttrs, Rounding,
};
pub use tensor::{Tensor, TensorData};
pub use validate::{validate, Diagnostic};

/// Exact rational used for scales, biases and thresholds.
pub type Rational = num_rational::Ratio<i64>;

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation failed: {}", render(.0))]
    Validation(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}
