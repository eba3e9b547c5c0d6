// SPDX-License-Identifier: Apache-2.0

//! Shape and datatype inference.

use std::collections::BTreeMap;

use super::{power_of_two_exponent, DataType, Diagnostic, Model, Node, Op, Rational, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub shape: Vec<usize>,
    pub dtype: DataType,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Size of the channel axis (axis 1).
    pub fn channels(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Spatial positions per channel (1 for flat tensors).
    pub fn positions(&self) -> usize {
        self.shape.iter().skip(2).product()
    }
}

pub type TypeMap = BTreeMap<String, TensorInfo>;

/// Infers the shape and dtype of every tensor. Nodes whose inputs are
/// unknown are skipped silently; structural errors are reported by
/// [`super::validate`].
pub fn infer_types(model: &Model) -> (TypeMap, Vec<Diagnostic>) {
    let mut types = TypeMap::new();
    let mut diags = Vec::new();
    for vi in &model.inputs {
        types.insert(vi.name.clone(), TensorInfo { shape: vi.shape.clone(), dtype: vi.dtype });
    }
    for (name, t) in &model.initializers {
        types.insert(name.clone(), TensorInfo { shape: t.shape.clone(), dtype: t.dtype });
    }
    let order = model.topo_order().unwrap_or_else(|| (0..model.nodes.len()).collect());
    for i in order {
        let node = &model.nodes[i];
        let ins: Option<Vec<&TensorInfo>> = node.inputs.iter().map(|t| types.get(t)).collect();
        let Some(ins) = ins else { continue };
        if node.outputs.len() != 1 {
            continue;
        }
        match infer_node(model, node, &ins) {
            Ok(info) => {
                types.insert(node.outputs[0].clone(), info);
            }
            Err((rule, msg)) => diags.push(Diagnostic::node(&node.name, rule, msg)),
        }
    }
    (types, diags)
}

type InferResult = Result<TensorInfo, (&'static str, String)>;

fn shape_err(msg: String) -> (&'static str, String) {
    ("shape", msg)
}

fn infer_node(model: &Model, node: &Node, ins: &[&TensorInfo]) -> InferResult {
    let x = ins[0];
    match &node.op {
        Op::Conv2D(a) => {
            let w = ins[1];
            if x.shape.len() != 4 || x.shape[0] != 1 {
                return Err(shape_err(format!("Conv2D input must be [1, C, H, W], got {:?}", x.shape)));
            }
            let k = a.kernel as usize;
            if w.shape.len() != 4 || w.shape[1] != x.shape[1] || w.shape[2] != k || w.shape[3] != k {
                return Err(shape_err(format!(
                    "Conv2D weight {:?} incompatible with input {:?} and kernel {k}",
                    w.shape, x.shape
                )));
            }
            let m = w.shape[0];
            check_bias(ins, m)?;
            let stride = a.stride.max(1) as usize;
            let pad = (a.pads[0] + a.pads[1]) as usize;
            let (h, wd) = (x.shape[2] + pad, x.shape[3] + pad);
            if h < k || wd < k {
                return Err(shape_err(format!("kernel {k} larger than padded input {h}x{wd}")));
            }
            let shape = vec![1, m, (h - k) / stride + 1, (wd - k) / stride + 1];
            let dtype = linear_dtype(model, node, ins)?;
            Ok(TensorInfo { shape, dtype })
        }
        Op::Dense(_) => {
            let w = ins[1];
            if x.shape.len() != 2 || x.shape[0] != 1 {
                return Err(shape_err(format!("Dense input must be [1, N], got {:?}", x.shape)));
            }
            if w.shape.len() != 2 || w.shape[1] != x.shape[1] {
                return Err(shape_err(format!(
                    "Dense weight {:?} incompatible with input {:?}",
                    w.shape, x.shape
                )));
            }
            let m = w.shape[0];
            check_bias(ins, m)?;
            let dtype = linear_dtype(model, node, ins)?;
            Ok(TensorInfo { shape: vec![1, m], dtype })
        }
        Op::BatchNorm(_) => {
            let c = x.channels();
            for p in &ins[1..] {
                if p.shape != [c] {
                    return Err(shape_err(format!("BatchNorm parameter shape {:?}, expected [{c}]", p.shape)));
                }
            }
            Ok(TensorInfo { shape: x.shape.clone(), dtype: DataType::Float32 })
        }
        Op::Relu | Op::Quant(_) | Op::Softmax => {
            let dtype = match &node.op {
                Op::Relu => x.dtype,
                Op::Quant(q) => quant_output_dtype(q.scale, q.zero_point, q.dtype),
                _ => DataType::Float32,
            };
            if matches!(node.op, Op::Softmax) && x.shape.len() != 2 {
                return Err(shape_err(format!("Softmax input must be [1, N], got {:?}", x.shape)));
            }
            Ok(TensorInfo { shape: x.shape.clone(), dtype })
        }
        Op::MaxPool2D(p) | Op::AvgPool2D(p) => {
            if x.shape.len() != 4 {
                return Err(shape_err(format!("pooling input must be [1, C, H, W], got {:?}", x.shape)));
            }
            let (k, s) = (p.kernel as usize, p.stride.max(1) as usize);
            if x.shape[2] < k || x.shape[3] < k {
                return Err(shape_err(format!("pool kernel {k} larger than input {:?}", x.shape)));
            }
            let shape = vec![1, x.shape[1], (x.shape[2] - k) / s + 1, (x.shape[3] - k) / s + 1];
            let dtype = if matches!(node.op, Op::MaxPool2D(_)) { x.dtype } else { DataType::Float32 };
            Ok(TensorInfo { shape, dtype })
        }
        Op::Add => {
            let y = ins[1];
            if x.shape != y.shape {
                return Err(shape_err(format!("Add operand shapes differ: {:?} vs {:?}", x.shape, y.shape)));
            }
            Ok(TensorInfo { shape: x.shape.clone(), dtype: add_dtype(x.dtype, y.dtype) })
        }
        Op::MultiThreshold(a) => {
            let t = ins[1];
            let c = x.channels();
            if t.shape.len() != 2 || !(t.shape[0] == c || t.shape[0] == 1) {
                return Err(shape_err(format!(
                    "thresholds shape {:?} incompatible with {c} channels",
                    t.shape
                )));
            }
            Ok(TensorInfo { shape: x.shape.clone(), dtype: a.out_dtype })
        }
        Op::ArgMax => {
            if x.shape.len() != 2 {
                return Err(shape_err(format!("ArgMax input must be [1, N], got {:?}", x.shape)));
            }
            Ok(TensorInfo { shape: vec![1, 1], dtype: DataType::int(32) })
        }
        Op::Flatten => Ok(TensorInfo { shape: vec![1, x.numel()], dtype: x.dtype }),
    }
}

fn check_bias(ins: &[&TensorInfo], m: usize) -> Result<(), (&'static str, String)> {
    match ins.get(2) {
        Some(b) if b.shape != [m] => Err(shape_err(format!("bias shape {:?}, expected [{m}]", b.shape))),
        _ => Ok(()),
    }
}

/// Dtype produced by a Quant node: dyadic scales give INT/FIXED outputs,
/// anything else is FLOAT32.
pub(crate) fn quant_output_dtype(scale: Rational, zero_point: i64, dtype: DataType) -> DataType {
    if dtype == DataType::Bipolar && zero_point == 0 && scale == Rational::from_integer(1) {
        return DataType::Bipolar;
    }
    let (Some(e), Some((qlo, qhi))) = (power_of_two_exponent(&scale), dtype.mantissa_range()) else {
        return DataType::Float32;
    };
    let (lo, hi) = (qlo - zero_point, qhi - zero_point);
    let unsigned = !dtype.signed();
    if e >= 0 {
        DataType::covering(lo << e, hi << e, 0, unsigned)
    } else {
        DataType::covering(lo, hi, (-e) as u32, unsigned)
    }
}

fn add_dtype(a: DataType, b: DataType) -> DataType {
    let (Some((alo, ahi)), Some((blo, bhi))) = (a.mantissa_range(), b.mantissa_range()) else {
        return DataType::Float32;
    };
    let f = a.frac_bits().max(b.frac_bits());
    let (sa, sb) = (f - a.frac_bits(), f - b.frac_bits());
    let lo = (alo << sa) + (blo << sb);
    let hi = (ahi << sa) + (bhi << sb);
    DataType::covering(lo, hi, f, !a.signed() && !b.signed())
}

/// Fixed-point layout of a linear node's accumulator: total fractional bits
/// and the left shifts applied to products and bias to align them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AccLayout {
    pub frac: u32,
    pub product_shift: u32,
    pub bias_shift: u32,
}

pub(crate) fn acc_layout(x: DataType, w: DataType, bias: Option<DataType>) -> AccLayout {
    let pf = x.frac_bits() + w.frac_bits();
    let bf = bias.map_or(0, |b| b.frac_bits());
    let frac = pf.max(bf);
    AccLayout { frac, product_shift: frac - pf, bias_shift: frac - bf }
}

/// Per-output-channel worst-case accumulator mantissa range of a linear
/// layer: `sum_i min(w_i*x_lo, w_i*x_hi)` to `sum_i max(...)`, plus bias.
///
/// `weights` is row-major `[m, fan_in]` of mantissas.
pub(crate) fn linear_channel_ranges(
    weights: &[i64],
    m: usize,
    x_range: (i64, i64),
    bias: Option<&[i64]>,
    layout: AccLayout,
) -> Vec<(i128, i128)> {
    let fan_in = weights.len().checked_div(m).unwrap_or(0);
    let (xlo, xhi) = (x_range.0 as i128, x_range.1 as i128);
    (0..m)
        .map(|c| {
            let row = &weights[c * fan_in..(c + 1) * fan_in];
            let (mut lo, mut hi) = (0i128, 0i128);
            for &w in row {
                let (a, b) = (w as i128 * xlo, w as i128 * xhi);
                lo += a.min(b);
                hi += a.max(b);
            }
            lo <<= layout.product_shift;
            hi <<= layout.product_shift;
            if let Some(b) = bias {
                let bv = (b[c] as i128) << layout.bias_shift;
                lo += bv;
                hi += bv;
            }
            (lo, hi)
        })
        .collect()
}

fn linear_dtype(model: &Model, node: &Node, ins: &[&TensorInfo]) -> Result<DataType, (&'static str, String)> {
    let (x, w) = (ins[0].dtype, ins[1].dtype);
    let b = ins.get(2).map(|t| t.dtype);
    let any_float = x.is_float() || w.is_float() || b.is_some_and(|b| b.is_float());
    if let Some(acc) = node.op.accumulator() {
        if acc.is_float() || any_float {
            return Err(("accumulator", "accumulator type requires integer operands and type".into()));
        }
        let layout = acc_layout(x, w, b);
        if acc.frac_bits() != layout.frac {
            return Err((
                "accumulator",
                format!("accumulator {acc} must have {} fractional bits", layout.frac),
            ));
        }
        return Ok(acc);
    }
    if any_float {
        return Ok(DataType::Float32);
    }
    let layout = acc_layout(x, w, b);
    let x_range = x.mantissa_range().unwrap();
    let m = ins[1].shape[0];
    let weights = model.initializers.get(&node.inputs[1]).and_then(Tensor::mantissas);
    let bias = node.inputs.get(2).and_then(|n| model.initializers.get(n)).and_then(Tensor::mantissas);
    let ranges = match weights {
        Some(wv) => linear_channel_ranges(wv, m, x_range, bias, layout),
        None => {
            // Non-constant weights: bound by the dtype extremes.
            let fan_in = ins[1].numel() / m.max(1);
            let (wlo, whi) = w.mantissa_range().unwrap();
            let ext = [wlo as i128 * x_range.0 as i128, wlo as i128 * x_range.1 as i128, whi as i128 * x_range.0 as i128, whi as i128 * x_range.1 as i128];
            let lo = ext.iter().min().unwrap() * fan_in as i128;
            let hi = ext.iter().max().unwrap() * fan_in as i128;
            let (blo, bhi) = b.and_then(|b| b.mantissa_range()).map_or((0, 0), |(a, c)| (a as i128, c as i128));
            vec![((lo << layout.product_shift) + (blo << layout.bias_shift), (hi << layout.product_shift) + (bhi << layout.bias_shift))]
        }
    };
    let mut lo = ranges.iter().map(|r| r.0).min().unwrap_or(0);
    let mut hi = ranges.iter().map(|r| r.1).max().unwrap_or(0);
    if node.op.fused_relu() {
        lo = lo.max(0);
        hi = hi.max(0);
    }
    const LIMIT: i128 = 1 << 62;
    if lo < -LIMIT || hi > LIMIT {
        return Ok(DataType::Float32);
    }
    Ok(DataType::signed_covering(lo as i64, hi as i64, layout.frac))
}
