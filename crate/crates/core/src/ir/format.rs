// SPDX-License-Identifier: Apache-2.0

//! Structured-text (JSON) model schema.
//!
//! ```text
//! {
//!   "name": "...", "flow": "hls4ml" | "finn", "notes": "...",
//!   "inputs": [{"name": "x", "shape": [1, 490], "dtype": "INT8"}],
//!   "outputs": ["y"],
//!   "initializers": {"w": {"shape": [256, 490], "dtype": "INT3", "data": [...]}},
//!   "nodes": [{"op": "Dense", "name": "fc0", "inputs": ["x", "w"], "outputs": ["h"], "attrs": {}}]
//! }
//! ```
//!
//! Integer-domain payloads are literal integers (mantissas for FIXED types).
//! Rational attributes are integers or strings such as `"1/64"`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use super::{
    BatchNormAttrs, ConvAttrs, DataType, DenseAttrs, Diagnostic, Flow, IrError, Model, MultiThresholdAttrs, Node,
    Op, OpKind, PoolAttrs, QuantAttrs, Rational, Rounding, Tensor, TensorData, ValueInfo,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    flow: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    notes: String,
    inputs: Vec<ValueInfoDoc>,
    outputs: Vec<String>,
    #[serde(default)]
    initializers: Map<String, Value>,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueInfoDoc {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    shape: Vec<usize>,
    dtype: String,
    data: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    op: String,
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default)]
    attrs: Map<String, Value>,
}

fn schema(msg: impl Into<String>) -> IrError {
    IrError::Schema(msg.into())
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<Model, IrError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let flow: Flow = doc.flow.parse().map_err(schema)?;
    let mut model = Model::new(doc.name, flow);
    model.notes = doc.notes;
    for vi in doc.inputs {
        let dtype = vi.dtype.parse().map_err(|e: super::ParseDataTypeError| schema(format!("input `{}`: {e}", vi.name)))?;
        model.inputs.push(ValueInfo { name: vi.name, shape: vi.shape, dtype });
    }
    model.outputs = doc.outputs;
    for (name, v) in doc.initializers {
        let t = tensor_from_value(v).map_err(|e| schema(format!("initializer `{name}`: {e}")))?;
        model.initializers.insert(name, t);
    }
    let mut unknown = Vec::new();
    for nd in doc.nodes {
        let kind: OpKind = nd.op.parse().map_err(|e| schema(format!("node `{}`: {e}", nd.name)))?;
        for key in nd.attrs.keys() {
            if !kind.attr_names().contains(&key.as_str()) {
                unknown.push(Diagnostic::node(&nd.name, "unknown-attribute", format!("{kind} has no attribute `{key}`")));
            }
        }
        let op = op_from_attrs(kind, &nd.attrs).map_err(|e| schema(format!("node `{}`: {e}", nd.name)))?;
        model.nodes.push(Node { name: nd.name, op, inputs: nd.inputs, outputs: nd.outputs });
    }
    if !unknown.is_empty() {
        return Err(IrError::Validation(unknown));
    }
    model.validated()
}

/// Serializes a model. Nodes keep their order, initializers are sorted by
/// name.
pub fn serialize_model(model: &Model) -> String {
    let doc = ModelDoc {
        name: model.name.clone(),
        flow: model.flow.to_string(),
        notes: model.notes.clone(),
        inputs: model
            .inputs
            .iter()
            .map(|vi| ValueInfoDoc { name: vi.name.clone(), shape: vi.shape.clone(), dtype: vi.dtype.to_string() })
            .collect(),
        outputs: model.outputs.clone(),
        initializers: model.initializers.iter().map(|(k, t)| (k.clone(), tensor_to_value(t))).collect(),
        nodes: model
            .nodes
            .iter()
            .map(|n| NodeDoc {
                op: n.op.kind().to_string(),
                name: n.name.clone(),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                attrs: attrs_of(&n.op),
            })
            .collect(),
    };
    let value = serde_json::to_value(doc).expect("model document serializes");
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    out.push('\n');
    out
}

/// Parses a `{name: tensor}` map in the initializer encoding.
pub fn parse_tensor_map(text: &str) -> Result<BTreeMap<String, Tensor>, IrError> {
    let map: Map<String, Value> = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    map.into_iter()
        .map(|(k, v)| {
            let t = tensor_from_value(v).map_err(|e| schema(format!("tensor `{k}`: {e}")))?;
            t.check().map_err(|e| schema(format!("tensor `{k}`: {e}")))?;
            Ok((k, t))
        })
        .collect()
}

pub fn serialize_tensor_map(map: &BTreeMap<String, Tensor>) -> String {
    let value = Value::Object(map.iter().map(|(k, t)| (k.clone(), tensor_to_value(t))).collect());
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    out.push('\n');
    out
}

fn tensor_from_value(v: Value) -> Result<Tensor, String> {
    let doc: TensorDoc = serde_json::from_value(v).map_err(|e| e.to_string())?;
    let dtype: DataType = doc.dtype.parse().map_err(|e: super::ParseDataTypeError| e.to_string())?;
    let data = if dtype.is_float() {
        TensorData::Float(
            doc.data
                .iter()
                .map(|x| x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| format!("non-numeric element {x}")))
                .collect::<Result<_, _>>()?,
        )
    } else {
        TensorData::Int(
            doc.data
                .iter()
                .map(|x| x.as_i64().ok_or_else(|| format!("{dtype} payload requires literal integers, got {x}")))
                .collect::<Result<_, _>>()?,
        )
    };
    Ok(Tensor { shape: doc.shape, dtype, data })
}

fn tensor_to_value(t: &Tensor) -> Value {
    let data = match &t.data {
        TensorData::Int(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::Float(v) => v.iter().map(|&x| Number::from_f64(x).map_or(Value::Null, Value::Number)).collect(),
    };
    serde_json::to_value(TensorDoc { shape: t.shape.clone(), dtype: t.dtype.to_string(), data }).unwrap()
}

/// Formats a rational as an integer or `"p/q"` string.
pub fn format_rational(r: &Rational) -> Value {
    if r.is_integer() {
        Value::from(r.to_integer())
    } else {
        Value::String(format!("{}/{}", r.numer(), r.denom()))
    }
}

/// Parses an integer, an exactly representable float, `"p/q"`, or a
/// decimal string such as `"0.125"`.
pub fn parse_rational(v: &Value) -> Result<Rational, String> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Rational::from_integer(i))
            } else {
                let f = n.as_f64().ok_or("bad number")?;
                Rational::approximate_float(f)
                    .filter(|r| *r.numer() as f64 / *r.denom() as f64 == f)
                    .ok_or_else(|| format!("{f} is not representable as a rational"))
            }
        }
        Value::String(s) => parse_rational_str(s),
        other => Err(format!("expected rational, got {other}")),
    }
}

fn parse_rational_str(s: &str) -> Result<Rational, String> {
    let err = || format!("invalid rational `{s}`");
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| err())?;
        let q: i64 = q.trim().parse().map_err(|_| err())?;
        if q == 0 {
            return Err(err());
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let num: i64 = digits.parse().map_err(|_| err())?;
        let den = 10i64.checked_pow(frac.len() as u32).ok_or_else(err)?;
        let r = Rational::new(num, den);
        return Ok(if neg { -r } else { r });
    }
    s.trim().parse::<i64>().map(Rational::from_integer).map_err(|_| err())
}

fn op_from_attrs(kind: OpKind, attrs: &Map<String, Value>) -> Result<Op, String> {
    let uint = |key: &str, default: Option<u32>| -> Result<u32, String> {
        match attrs.get(key) {
            Some(v) => v
                .as_u64()
                .and_then(|x| u32::try_from(x).ok())
                .ok_or_else(|| format!("attribute `{key}` must be a non-negative integer")),
            None => default.ok_or_else(|| format!("missing attribute `{key}`")),
        }
    };
    let flag = |key: &str| -> Result<bool, String> {
        match attrs.get(key) {
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(format!("attribute `{key}` must be a boolean")),
            None => Ok(false),
        }
    };
    let dtype = |key: &str| -> Result<Option<DataType>, String> {
        match attrs.get(key) {
            Some(Value::String(s)) => s.parse().map(Some).map_err(|e: super::ParseDataTypeError| e.to_string()),
            Some(Value::Null) | None => Ok(None),
            Some(_) => Err(format!("attribute `{key}` must be a datatype string")),
        }
    };
    let rational = |key: &str, default: Option<Rational>| -> Result<Rational, String> {
        match attrs.get(key) {
            Some(v) => parse_rational(v).map_err(|e| format!("attribute `{key}`: {e}")),
            None => default.ok_or_else(|| format!("missing attribute `{key}`")),
        }
    };
    Ok(match kind {
        OpKind::Conv2D => {
            let pads = match attrs.get("pads") {
                None => [0, 0],
                Some(Value::Array(a)) if a.len() == 2 => {
                    let p: Option<Vec<u32>> = a.iter().map(|x| x.as_u64().map(|v| v as u32)).collect();
                    let p = p.ok_or("attribute `pads` must hold integers")?;
                    [p[0], p[1]]
                }
                Some(_) => return Err("attribute `pads` must be [begin, end]".into()),
            };
            Op::Conv2D(ConvAttrs {
                kernel: uint("kernel", None)?,
                stride: uint("stride", Some(1))?,
                pads,
                fused_relu: flag("fused_relu")?,
                accumulator: dtype("accumulator")?,
                reuse_factor: uint("reuse_factor", Some(1))?,
            })
        }
        OpKind::Dense => Op::Dense(DenseAttrs {
            fused_relu: flag("fused_relu")?,
            accumulator: dtype("accumulator")?,
            reuse_factor: uint("reuse_factor", Some(1))?,
        }),
        OpKind::BatchNorm => Op::BatchNorm(BatchNormAttrs {
            epsilon: match attrs.get("epsilon") {
                Some(v) => v.as_f64().ok_or("attribute `epsilon` must be a number")?,
                None => 1e-5,
            },
        }),
        OpKind::MaxPool2D | OpKind::AvgPool2D => {
            let kernel = uint("kernel", None)?;
            let p = PoolAttrs { kernel, stride: uint("stride", Some(kernel))? };
            if kind == OpKind::MaxPool2D {
                Op::MaxPool2D(p)
            } else {
                Op::AvgPool2D(p)
            }
        }
        OpKind::Quant => Op::Quant(QuantAttrs {
            scale: rational("scale", None)?,
            zero_point: match attrs.get("zero_point") {
                Some(v) => v.as_i64().ok_or("attribute `zero_point` must be an integer")?,
                None => 0,
            },
            dtype: dtype("dtype")?.ok_or("missing attribute `dtype`")?,
            rounding: match attrs.get("rounding") {
                Some(Value::String(s)) => s.parse()?,
                Some(_) => return Err("attribute `rounding` must be a string".into()),
                None => Rounding::default(),
            },
        }),
        OpKind::MultiThreshold => Op::MultiThreshold(MultiThresholdAttrs {
            out_scale: rational("out_scale", Some(Rational::from_integer(1)))?,
            out_bias: rational("out_bias", Some(Rational::from_integer(0)))?,
            out_dtype: dtype("out_dtype")?.ok_or("missing attribute `out_dtype`")?,
        }),
        OpKind::Relu => Op::Relu,
        OpKind::Add => Op::Add,
        OpKind::Softmax => Op::Softmax,
        OpKind::ArgMax => Op::ArgMax,
        OpKind::Flatten => Op::Flatten,
    })
}

fn attrs_of(op: &Op) -> Map<String, Value> {
    let mut m = Map::new();
    let linear = |m: &mut Map<String, Value>, fused: bool, acc: Option<DataType>, rf: u32| {
        m.insert("fused_relu".into(), fused.into());
        if let Some(acc) = acc {
            m.insert("accumulator".into(), acc.to_string().into());
        }
        m.insert("reuse_factor".into(), rf.into());
    };
    match op {
        Op::Conv2D(a) => {
            m.insert("kernel".into(), a.kernel.into());
            m.insert("stride".into(), a.stride.into());
            m.insert("pads".into(), Value::from(a.pads.to_vec()));
            linear(&mut m, a.fused_relu, a.accumulator, a.reuse_factor);
        }
        Op::Dense(a) => linear(&mut m, a.fused_relu, a.accumulator, a.reuse_factor),
        Op::BatchNorm(a) => {
            m.insert("epsilon".into(), Number::from_f64(a.epsilon).map_or(Value::Null, Value::Number));
        }
        Op::MaxPool2D(p) | Op::AvgPool2D(p) => {
            m.insert("kernel".into(), p.kernel.into());
            m.insert("stride".into(), p.stride.into());
        }
        Op::Quant(q) => {
            m.insert("scale".into(), format_rational(&q.scale));
            m.insert("zero_point".into(), q.zero_point.into());
            m.insert("dtype".into(), q.dtype.to_string().into());
            m.insert("rounding".into(), q.rounding.as_str().into());
        }
        Op::MultiThreshold(a) => {
            m.insert("out_scale".into(), format_rational(&a.out_scale));
            m.insert("out_bias".into(), format_rational(&a.out_bias));
            m.insert("out_dtype".into(), a.out_dtype.to_string().into());
        }
        Op::Relu | Op::Add | Op::Softmax | Op::ArgMax | Op::Flatten => {}
    }
    m
}

/// Indented output with scalar arrays kept on one line.
fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, val)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(val, indent + 1, out);
                if i + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) if items.iter().any(|x| x.is_object() || x.is_array()) => {
            out.push_str("[\n");
            for (i, val) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(val, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}
