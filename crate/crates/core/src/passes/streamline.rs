// SPDX-License-Identifier: Apache-2.0

//! `Linear -> [BatchNorm] -> [ReLU] -> Quant` to
//! `IntegerLinear -> MultiThreshold`.
//!
//! The composed chain is a monotone function of the integer accumulator.
//! Each threshold is the smallest accumulator value reaching the next
//! quantization level, found by bisection over the accumulator's worst-case
//! range while evaluating the chain with the same f64 kernels as the float
//! backend. For integer weights this makes the rewrite bit-exact.

use super::{fresh_name, single_use, PassError, PassId, PassReport};
use crate::exec::kernels;
use crate::ir::{
    acc_layout, linear_channel_ranges, quant_output_dtype, DataType, Model, MultiThresholdAttrs, Node, Op,
    QuantAttrs, Rational, Tensor,
};

/// Largest integer scale tried when re-integerizing float weights.
const MAX_WEIGHT_LEVELS: i64 = 1 << 16;
const INTEGER_TOLERANCE: f64 = 1e-6;

struct Pattern {
    linear: usize,
    bn: Option<usize>,
    relu: Option<usize>,
    quant: usize,
}

pub fn streamline(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::Streamline, m);
    let mut out = m.clone();
    while let Some(p) = find_pattern(&out) {
        let q = out.nodes[p.quant].clone();
        let lin_name = out.nodes[p.linear].name.clone();
        let thresholds = rewrite(&mut out, &p)?;
        let mut gone: Vec<usize> = [p.bn, p.relu, Some(p.quant)].into_iter().flatten().collect();
        gone.sort_unstable_by(|a, b| b.cmp(a));
        report.removed += gone.len();
        for i in gone {
            out.nodes.remove(i);
        }
        let li = out.nodes.iter().position(|n| n.name == lin_name).unwrap();
        let lin_out = out.nodes[li].output().to_string();
        let Op::Quant(qa) = &q.op else { unreachable!() };
        let tname = fresh_name(&out, &format!("{}.thresholds", q.name));
        out.add_initializer(&tname, thresholds);
        let mt = Node::new(q.name.clone(), Op::MultiThreshold(mt_attrs(qa)), &[&lin_out, &tname], &[q.output()]);
        out.nodes.insert(li + 1, mt);
        report.added += 1;
        report.rewritten += 1;
    }
    out.prune_initializers();
    out.sort_nodes();
    if let Some(edge) = out.float_edges()?.first() {
        let producer = out.nodes.iter().find(|n| n.outputs.iter().any(|o| o == edge));
        let node = producer.map_or(edge.clone(), |n| n.name.clone());
        let kind = producer.map_or("graph input".to_string(), |n| n.op.kind().to_string());
        return Err(PassError::NotStreamlinable {
            node,
            reason: format!("FLOAT32 tensor `{edge}` ({kind}) does not match Linear -> [BatchNorm] -> [ReLU] -> Quant"),
        });
    }
    let report = report.finish(&out);
    Ok((out, report))
}

/// Output scale, bias and dtype reproducing the quantizer's dequantized
/// levels from a threshold count.
fn mt_attrs(q: &QuantAttrs) -> MultiThresholdAttrs {
    if q.dtype == DataType::Bipolar {
        // Levels {-1, +1}: count 0 -> -1, count 1 -> +1, times scale.
        return MultiThresholdAttrs {
            out_scale: q.scale * Rational::from_integer(2),
            out_bias: -q.scale,
            out_dtype: quant_output_dtype(q.scale, 0, DataType::Bipolar),
        };
    }
    let (qlo, _) = q.dtype.mantissa_range().unwrap();
    MultiThresholdAttrs {
        out_scale: q.scale,
        out_bias: q.scale * Rational::from_integer(qlo - q.zero_point),
        out_dtype: quant_output_dtype(q.scale, q.zero_point, q.dtype),
    }
}

fn find_pattern(m: &Model) -> Option<Pattern> {
    let producers = m.producers();
    let is_input = |t: &str| m.inputs.iter().any(|i| i.name == t);
    for (qi, q) in m.nodes.iter().enumerate() {
        if !matches!(q.op, Op::Quant(_)) || is_input(&q.inputs[0]) {
            continue;
        }
        let mut cur = *producers.get(q.inputs[0].as_str())?;
        let mut relu = None;
        let mut bn = None;
        let step = |i: usize| -> Option<usize> {
            let t = &m.nodes[i].inputs[0];
            if !single_use(m, m.nodes[i].output()) {
                return None;
            }
            producers.get(t.as_str()).copied()
        };
        if matches!(m.nodes[cur].op, Op::Relu) {
            relu = Some(cur);
            let Some(next) = step(cur) else { continue };
            cur = next;
        }
        if matches!(m.nodes[cur].op, Op::BatchNorm(_)) {
            bn = Some(cur);
            let Some(next) = step(cur) else { continue };
            cur = next;
        }
        let lin = &m.nodes[cur];
        if !lin.op.is_linear() || !single_use(m, lin.output()) {
            continue;
        }
        if !lin.inputs[1..].iter().all(|t| m.initializers.contains_key(t)) {
            continue;
        }
        if bn.is_some_and(|b| !m.nodes[b].inputs[1..].iter().all(|t| m.initializers.contains_key(t))) {
            continue;
        }
        let Ok(types) = m.types() else { return None };
        if types[&lin.inputs[0]].dtype.is_float() {
            continue;
        }
        if let Op::Quant(qa) = &q.op {
            if quant_output_dtype(qa.scale, qa.zero_point, qa.dtype).is_float() {
                continue;
            }
        }
        return Some(Pattern { linear: cur, bn, relu, quant: qi });
    }
    None
}

/// Integer weight rows and the real scale of each row.
struct IntWeights {
    mantissas: Vec<i64>,
    row_scale: Vec<f64>,
    frac: u32,
}

fn integerize(w: &Tensor, node: &str) -> Result<IntWeights, PassError> {
    let m = w.shape[0];
    let per = w.numel() / m.max(1);
    if let Some(mant) = w.mantissas() {
        let unit = w.dtype.mantissa_to_f64(1);
        return Ok(IntWeights { mantissas: mant.to_vec(), row_scale: vec![unit; m], frac: w.dtype.frac_bits() });
    }
    let vals = w.to_f64();
    let mut mantissas = Vec::with_capacity(vals.len());
    let mut row_scale = Vec::with_capacity(m);
    for c in 0..m {
        let row = &vals[c * per..(c + 1) * per];
        let peak = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if peak == 0.0 {
            mantissas.extend(std::iter::repeat_n(0, per));
            row_scale.push(1.0);
            continue;
        }
        let found = (1..=MAX_WEIGHT_LEVELS).find_map(|k| {
            let s = peak / k as f64;
            let ints: Option<Vec<i64>> = row
                .iter()
                .map(|v| {
                    let r = v / s;
                    ((r - r.round()).abs() <= INTEGER_TOLERANCE).then_some(r.round() as i64)
                })
                .collect();
            ints.map(|i| (s, i))
        });
        let Some((s, ints)) = found else {
            return Err(PassError::NotStreamlinable {
                node: node.to_string(),
                reason: format!("weight row {c} is not an integer multiple of a common scale"),
            });
        };
        mantissas.extend(ints);
        row_scale.push(s);
    }
    Ok(IntWeights { mantissas, row_scale, frac: 0 })
}

/// Narrowest dtype for weight mantissas with `frac` fractional bits.
fn weight_dtype(mant: &[i64], frac: u32) -> DataType {
    if frac == 0 && !mant.is_empty() && mant.iter().all(|&v| v == 1 || v == -1) {
        return DataType::Bipolar;
    }
    let lo = mant.iter().copied().min().unwrap_or(0).min(-1);
    let hi = mant.iter().copied().max().unwrap_or(0);
    DataType::signed_covering(lo, hi, frac)
}

/// Rewrites the linear node in place and returns the `[C, L]` thresholds.
fn rewrite(m: &mut Model, p: &Pattern) -> Result<Tensor, PassError> {
    let types = m.types()?;
    let lin = m.nodes[p.linear].clone();
    let Op::Quant(q) = m.nodes[p.quant].op.clone() else { unreachable!() };
    let x_dtype = types[&lin.inputs[0]].dtype;
    let w = m.initializers[&lin.inputs[1]].clone();
    let channels = w.shape[0];
    let per = w.numel() / channels.max(1);
    let mut iw = integerize(&w, &lin.name)?;
    let bias: Vec<f64> = match lin.inputs.get(2) {
        Some(b) => m.initializers[b].to_f64(),
        None => vec![0.0; channels],
    };
    let bn = p.bn.map(|b| {
        let n = &m.nodes[b];
        let eps = match &n.op {
            Op::BatchNorm(a) => a.epsilon,
            _ => unreachable!(),
        };
        let v: Vec<Vec<f64>> = (1..5).map(|i| m.initializers[&n.inputs[i]].to_f64()).collect();
        (v, eps)
    });
    let relu = p.relu.is_some() || lin.op.fused_relu();
    let x_unit = x_dtype.mantissa_to_f64(1);

    // Orient every channel so the chain is non-decreasing in the accumulator.
    let mut negate = vec![false; channels];
    for (c, neg) in negate.iter_mut().enumerate() {
        let gamma = bn.as_ref().map_or(1.0, |(v, _)| v[0][c]);
        if gamma < 0.0 {
            *neg = true;
            for v in &mut iw.mantissas[c * per..(c + 1) * per] {
                *v = -*v;
            }
        }
    }
    let wdt = weight_dtype(&iw.mantissas, iw.frac);
    let layout = acc_layout(x_dtype, wdt, None);
    let ranges = linear_channel_ranges(&iw.mantissas, channels, x_dtype.mantissa_range().unwrap(), None, layout);

    let levels = match q.dtype {
        DataType::Bipolar => 1usize,
        dt => {
            let (lo, hi) = dt.mantissa_range().unwrap();
            (hi - lo) as usize
        }
    };
    let (qlo, _) = q.dtype.mantissa_range().unwrap();
    let mut thresholds = Vec::with_capacity(channels * levels);
    for c in 0..channels {
        let sign = if negate[c] { -1.0 } else { 1.0 };
        let row_scale = iw.row_scale[c] * x_unit;
        let chain = |acc: i64| -> i64 {
            // Same operation order as the float backend: dot product, then bias.
            let mut z = (sign * acc as f64) * row_scale + bias[c];
            if let Some((v, eps)) = &bn {
                z = kernels::batchnorm(z, v[0][c], v[1][c], v[2][c], v[3][c], *eps);
            }
            if relu {
                z = z.max(0.0);
            }
            kernels::quant_level(z, &q)
        };
        let (lo, hi) = (ranges[c].0 as i64, ranges[c].1 as i64);
        for j in 1..=levels as i64 {
            let target = if q.dtype == DataType::Bipolar { 1 } else { qlo + j };
            thresholds.push(first_reaching(lo, hi, target, &chain));
        }
    }
    let t_lo = thresholds.iter().copied().min().unwrap_or(0);
    let t_hi = thresholds.iter().copied().max().unwrap_or(0);
    let tdt = DataType::signed_covering(t_lo.min(-1), t_hi, layout.frac);
    let thresholds = Tensor::int(vec![channels, levels], tdt, thresholds);

    let wname = fresh_name(m, &format!("{}.weight_int", lin.name));
    m.add_initializer(&wname, Tensor::int(w.shape.clone(), wdt, iw.mantissas));
    let node = &mut m.nodes[p.linear];
    node.inputs = vec![lin.inputs[0].clone(), wname];
    node.op.set_fused_relu(false);
    node.op.set_accumulator(None);
    Ok(thresholds)
}

/// Smallest accumulator value in `[lo, hi]` whose level reaches `target`,
/// or `hi + 1` if none does. `level` must be non-decreasing.
fn first_reaching(lo: i64, hi: i64, target: i64, level: &impl Fn(i64) -> i64) -> i64 {
    let (mut a, mut b) = (lo, hi + 1);
    while a < b {
        let mid = a + (b - a) / 2;
        if level(mid) >= target {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    a
}
