// SPDX-License-Identifier: Apache-2.0

//! Reference interpreter.
//!
//! Two backends share one graph walk. [`Mode::Float`] evaluates every tensor
//! in f64. [`Mode::ExactInt`] carries integer mantissas in the inferred
//! dtype of each edge and accumulates in i128, so any graph without float
//! edges is evaluated exactly.

pub mod kernels;
mod verify;

pub use verify::{verify, Counterexample, Tolerance, Verdict, VerifyError, RELATIVE_TOLERANCE};

use std::collections::BTreeMap;

use rand::Rng;

use crate::ir::{
    acc_layout, DataType, IrError, Model, Node, Op, Rational, Tensor, TensorData, TensorInfo, TypeMap,
};
use kernels::{Window, rational_to_f64};

/// Named tensors fed to or produced by a run.
pub type ExecValue = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Float,
    ExactInt,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(Mode::Float),
            "exact" | "exact-int" => Ok(Mode::ExactInt),
            _ => Err(format!("unknown mode `{s}` (float|exact)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("input `{name}`: {message}")]
    BadInput { name: String, message: String },
    #[error("overflow in node `{node}`: value {value} does not fit {dtype}")]
    Overflow { node: String, value: i128, dtype: DataType },
    #[error("node `{node}` cannot run in exact mode: {message}")]
    Dtype { node: String, message: String },
    #[error("argmax of an empty vector")]
    EmptyInput,
}

/// Index of the largest element, lowest index on ties.
pub fn argmax(v: &[f64]) -> Result<usize, ExecError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i).ok_or(ExecError::EmptyInput)
}

/// Runs `model` and returns its declared outputs.
pub fn run(model: &Model, inputs: &ExecValue, mode: Mode) -> Result<ExecValue, ExecError> {
    let all = run_all(model, inputs, mode)?;
    Ok(model.outputs.iter().map(|o| (o.clone(), all[o].clone())).collect())
}

/// Runs `model` and returns every tensor, initializers included.
pub fn run_all(model: &Model, inputs: &ExecValue, mode: Mode) -> Result<ExecValue, ExecError> {
    let types = model.types()?;
    let mut env = ExecValue::new();
    for vi in &model.inputs {
        let t = inputs.get(&vi.name).ok_or_else(|| ExecError::MissingInput(vi.name.clone()))?;
        env.insert(vi.name.clone(), admit_input(&vi.name, t, &vi.shape, vi.dtype, mode)?);
    }
    for (name, t) in &model.initializers {
        let v = match mode {
            Mode::Float => Tensor::float(t.shape.clone(), t.to_f64()),
            Mode::ExactInt => t.clone(),
        };
        env.insert(name.clone(), v);
    }
    let order = model.topo_order().expect("validated model is a DAG");
    for i in order {
        let node = &model.nodes[i];
        let out = match mode {
            Mode::Float => float_node(node, &env, &types)?,
            Mode::ExactInt => exact_node(node, &env, &types)?,
        };
        env.insert(node.output().to_string(), out);
    }
    Ok(env)
}

fn admit_input(name: &str, t: &Tensor, shape: &[usize], dtype: DataType, mode: Mode) -> Result<Tensor, ExecError> {
    let bad = |message: String| ExecError::BadInput { name: name.to_string(), message };
    if t.shape != shape {
        return Err(bad(format!("shape {:?}, expected {:?}", t.shape, shape)));
    }
    if t.data.len() != t.numel() {
        return Err(bad(format!("{} values for shape {:?}", t.data.len(), t.shape)));
    }
    match mode {
        Mode::Float => Ok(Tensor::float(t.shape.clone(), t.to_f64())),
        Mode::ExactInt => {
            if dtype.is_float() {
                // Float graph inputs are allowed when only quantizers read them.
                return Ok(Tensor::float(t.shape.clone(), t.to_f64()));
            }
            let m = match &t.data {
                TensorData::Int(v) if t.dtype == dtype => v.clone(),
                _ => to_mantissas(&t.to_f64(), dtype).map_err(bad)?,
            };
            if let Some(x) = m.iter().find(|&&x| !dtype.contains_mantissa(x)) {
                return Err(bad(format!("value {} outside {dtype}", dtype.mantissa_value(*x))));
            }
            Ok(Tensor::int(t.shape.clone(), dtype, m))
        }
    }
}

/// Converts exact real values to mantissas of `dtype`.
fn to_mantissas(v: &[f64], dtype: DataType) -> Result<Vec<i64>, String> {
    let scale = (1u64 << dtype.frac_bits()) as f64;
    v.iter()
        .map(|&x| {
            let m = x * scale;
            if m.fract() != 0.0 || !m.is_finite() {
                Err(format!("value {x} is not representable in {dtype}"))
            } else {
                Ok(m as i64)
            }
        })
        .collect()
}

fn window(x: &TensorInfo, out: &TensorInfo, kernel: u32, stride: u32, pad_begin: u32) -> Window {
    Window {
        channels: x.shape[1],
        height: x.shape[2],
        width: x.shape[3],
        kernel: kernel as usize,
        stride: stride as usize,
        pad_begin: pad_begin as usize,
        out_h: out.shape[2],
        out_w: out.shape[3],
    }
}

/// Per-element channel index of a `[1, C, ...]` tensor.
fn channel_of(info: &TensorInfo, idx: usize) -> usize {
    let per = info.positions().max(1);
    (idx / per) % info.channels().max(1)
}

fn float_node(node: &Node, env: &ExecValue, types: &TypeMap) -> Result<Tensor, ExecError> {
    let xin = |i: usize| env[&node.inputs[i]].to_f64();
    let info = |i: usize| &types[&node.inputs[i]];
    let out_info = &types[node.output()];
    let x = xin(0);
    let y: Vec<f64> = match &node.op {
        Op::Conv2D(a) => {
            let w = xin(1);
            let m = out_info.shape[1];
            let g = window(info(0), out_info, a.kernel, a.stride, a.pads[0]);
            let mut acc = kernels::conv2d(&x, &w, m, g);
            add_bias_f64(&mut acc, node.inputs.get(2).map(|b| env[b].to_f64()), g.out_h * g.out_w);
            if a.fused_relu {
                acc.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acc
        }
        Op::Dense(a) => {
            let w = xin(1);
            let mut acc = kernels::dense(&x, &w, out_info.shape[1]);
            add_bias_f64(&mut acc, node.inputs.get(2).map(|b| env[b].to_f64()), 1);
            if a.fused_relu {
                acc.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acc
        }
        Op::BatchNorm(a) => {
            let (g, b, mu, var) = (xin(1), xin(2), xin(3), xin(4));
            let xi = info(0);
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = channel_of(xi, i);
                    kernels::batchnorm(v, g[c], b[c], mu[c], var[c], a.epsilon)
                })
                .collect()
        }
        Op::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        Op::MaxPool2D(p) => kernels::pool(&x, window(info(0), out_info, p.kernel, p.stride, 0), f64::max),
        Op::AvgPool2D(p) => {
            let n = (p.kernel * p.kernel) as f64;
            let s = kernels::pool(&x, window(info(0), out_info, p.kernel, p.stride, 0), |a, b| a + b);
            s.into_iter().map(|v| v / n).collect()
        }
        Op::Add => x.iter().zip(xin(1)).map(|(a, b)| a + b).collect(),
        Op::Quant(q) => x.iter().map(|&v| kernels::dequant(kernels::quant_level(v, q), q)).collect(),
        Op::MultiThreshold(a) => {
            let t = &env[&node.inputs[1]];
            let (rows, levels) = (t.shape[0], t.shape[1]);
            let tv = t.to_f64();
            let (os, ob) = (rational_to_f64(&a.out_scale), rational_to_f64(&a.out_bias));
            let xi = info(0);
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let r = if rows == 1 { 0 } else { channel_of(xi, i) };
                    let count = tv[r * levels..(r + 1) * levels].iter().filter(|&&th| v >= th).count();
                    os * count as f64 + ob
                })
                .collect()
        }
        Op::Softmax => kernels::softmax(&x),
        Op::ArgMax => vec![argmax(&x)? as f64],
        Op::Flatten => x,
    };
    Ok(Tensor::float(out_info.shape.clone(), y))
}

fn add_bias_f64(acc: &mut [f64], bias: Option<Vec<f64>>, per_channel: usize) {
    if let Some(b) = bias {
        for (i, v) in acc.iter_mut().enumerate() {
            *v += b[i / per_channel];
        }
    }
}

fn exact_node(node: &Node, env: &ExecValue, types: &TypeMap) -> Result<Tensor, ExecError> {
    let out_info = &types[node.output()];
    let dtype_err = |message: String| ExecError::Dtype { node: node.name.clone(), message };
    let mant = |i: usize| -> Result<&[i64], ExecError> {
        let name = &node.inputs[i];
        env[name].mantissas().ok_or_else(|| dtype_err(format!("input `{name}` is FLOAT32")))
    };
    let info = |i: usize| &types[&node.inputs[i]];
    let in_dtype = |i: usize| env[&node.inputs[i]].dtype;

    let y: Vec<i64> = match &node.op {
        Op::Conv2D(_) | Op::Dense(_) => {
            let (x, w) = (mant(0)?, mant(1)?);
            let bias = match node.inputs.get(2) {
                Some(_) => Some(mant(2)?),
                None => None,
            };
            let layout = acc_layout(in_dtype(0), in_dtype(1), node.inputs.get(2).map(|_| in_dtype(2)));
            let m = out_info.shape[1];
            let (acc, per_channel) = match &node.op {
                Op::Conv2D(a) => {
                    let g = window(info(0), out_info, a.kernel, a.stride, a.pads[0]);
                    (kernels::conv2d(x, w, m, g), g.out_h * g.out_w)
                }
                _ => (kernels::dense(x, w, m), 1),
            };
            let acc_dt = node.op.accumulator();
            let mut out = Vec::with_capacity(acc.len());
            for (i, a) in acc.into_iter().enumerate() {
                let mut v = a << layout.product_shift;
                if let Some(b) = bias {
                    v += (b[i / per_channel] as i128) << layout.bias_shift;
                }
                if let Some(dt) = acc_dt {
                    check_fits(node, v, dt)?;
                }
                if node.op.fused_relu() {
                    v = v.max(0);
                }
                check_fits(node, v, out_info.dtype)?;
                out.push(v as i64);
            }
            out
        }
        Op::Relu => {
            let x = mant(0)?;
            x.iter().map(|&v| v.max(0)).collect()
        }
        Op::MaxPool2D(p) => kernels::pool(mant(0)?, window(info(0), out_info, p.kernel, p.stride, 0), i64::max),
        Op::Add => {
            let (a, b) = (mant(0)?, mant(1)?);
            let f = out_info.dtype.frac_bits();
            let (sa, sb) = (f - in_dtype(0).frac_bits(), f - in_dtype(1).frac_bits());
            let mut out = Vec::with_capacity(a.len());
            for (x, y) in a.iter().zip(b) {
                let v = ((*x as i128) << sa) + ((*y as i128) << sb);
                check_fits(node, v, out_info.dtype)?;
                out.push(v as i64);
            }
            out
        }
        Op::Quant(q) => {
            let x = &env[&node.inputs[0]];
            let vals: Vec<Rational> = match &x.data {
                TensorData::Int(v) => v.iter().map(|&m| x.dtype.mantissa_value(m)).collect(),
                TensorData::Float(v) => {
                    // Only graph inputs may be float here; admitted values are exact dyadics.
                    v.iter()
                        .map(|&f| Rational::approximate_float(f).ok_or_else(|| dtype_err(format!("non-finite input {f}"))))
                        .collect::<Result<_, _>>()?
                }
            };
            if out_info.dtype.is_float() {
                return Err(dtype_err("quantizer scale is not a power of two".into()));
            }
            let unit = Rational::from_integer(1i64 << out_info.dtype.frac_bits());
            vals.into_iter()
                .map(|v| {
                    let level = kernels::quant_level_exact(v, q);
                    let real = Rational::from_integer(level - q.zero_point) * q.scale;
                    (real * unit).to_integer()
                })
                .collect()
        }
        Op::MultiThreshold(a) => {
            let x = mant(0)?;
            let t = &env[&node.inputs[1]];
            let tm = t.mantissas().ok_or_else(|| dtype_err("thresholds are FLOAT32".into()))?;
            let (rows, levels) = (t.shape[0], t.shape[1]);
            let (fx, ft) = (in_dtype(0).frac_bits(), t.dtype.frac_bits());
            let f = fx.max(ft);
            if out_info.dtype.is_float() {
                return Err(dtype_err("FLOAT32 output".into()));
            }
            let unit = Rational::from_integer(1i64 << out_info.dtype.frac_bits());
            let level_out: Vec<i64> = (0..=levels as i64)
                .map(|c| ((a.out_scale * Rational::from_integer(c) + a.out_bias) * unit).to_integer())
                .collect();
            let xi = info(0);
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let r = if rows == 1 { 0 } else { channel_of(xi, i) };
                    let xv = (v as i128) << (f - fx);
                    let count = tm[r * levels..(r + 1) * levels]
                        .iter()
                        .filter(|&&th| xv >= (th as i128) << (f - ft))
                        .count();
                    level_out[count]
                })
                .collect()
        }
        Op::ArgMax => {
            // Mantissas share one dtype, so they order like the values.
            let x = mant(0)?;
            let mut best: Option<(usize, i64)> = None;
            for (i, &m) in x.iter().enumerate() {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((i, m));
                }
            }
            vec![best.ok_or(ExecError::EmptyInput)?.0 as i64]
        }
        Op::Flatten => mant(0)?.to_vec(),
        Op::BatchNorm(_) | Op::AvgPool2D(_) | Op::Softmax => {
            return Err(dtype_err(format!("{} produces FLOAT32", node.op.kind())));
        }
    };
    Ok(Tensor::int(out_info.shape.clone(), out_info.dtype, y))
}

fn check_fits(node: &Node, v: i128, dtype: DataType) -> Result<(), ExecError> {
    let ok = i64::try_from(v).is_ok_and(|m| dtype.contains_mantissa(m));
    if ok {
        Ok(())
    } else {
        Err(ExecError::Overflow { node: node.name.clone(), value: v, dtype })
    }
}

/// Uniformly random inputs for every graph input. Non-float inputs are
/// drawn over their whole dtype domain, float inputs from [-1, 1).
pub fn random_inputs(model: &Model, rng: &mut impl Rng) -> ExecValue {
    model
        .inputs
        .iter()
        .map(|vi| {
            let n: usize = vi.shape.iter().product();
            let t = match vi.dtype.mantissa_range() {
                Some((lo, hi)) if vi.dtype != DataType::Bipolar => {
                    Tensor::int(vi.shape.clone(), vi.dtype, (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
                }
                Some(_) => Tensor::int(vi.shape.clone(), vi.dtype, (0..n).map(|_| if rng.gen() { 1 } else { -1 }).collect()),
                None => Tensor::float(vi.shape.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            };
            (vi.name.clone(), t)
        })
        .collect()
}

/// Largest absolute elementwise difference between the real values of two
/// tensors, or `None` if shapes differ.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Option<f64> {
    if a.shape != b.shape {
        return None;
    }
    Some(a.to_f64().iter().zip(b.to_f64()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}
