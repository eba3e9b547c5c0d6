// SPDX-License-Identifier: Apache-2.0

use super::{bypass_node, fresh_name, single_use, PassError, PassId, PassReport};
use crate::ir::{acc_layout, linear_channel_ranges, DataType, Model, Op, Rational, Tensor};

/// Removes each standalone ReLU whose producer can absorb it:
///
/// - Dense/Conv2D get `fused_relu`;
/// - a signed Quant with zero point 0 narrows `INTb` to `UINT(b-1)`;
/// - a MultiThreshold whose level 0 maps to a non-positive value drops the
///   thresholds below zero output.
pub fn merge_relu(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::MergeRelu, m);
    let mut out = m.clone();
    loop {
        let producers = out.producers();
        let hit = out.nodes.iter().enumerate().find_map(|(ri, r)| {
            if !matches!(r.op, Op::Relu) {
                return None;
            }
            let &pi = producers.get(r.inputs[0].as_str())?;
            (single_use(&out, &r.inputs[0]) && absorb(&out, pi).is_some()).then_some((ri, pi))
        });
        let Some((ri, pi)) = hit else { break };
        let (op, thresholds) = absorb(&out, pi).unwrap();
        if let Some((name, t)) = thresholds {
            let fresh = fresh_name(&out, &name);
            out.add_initializer(&fresh, t);
            out.nodes[pi].inputs[1] = fresh;
        }
        out.nodes[pi].op = op;
        bypass_node(&mut out, ri);
        report.removed += 1;
        report.rewritten += 1;
    }
    out.prune_initializers();
    let report = report.finish(&out);
    Ok((out, report))
}

type Absorbed = (Op, Option<(String, Tensor)>);

/// The producer's op with a ReLU folded in, plus a replacement thresholds
/// tensor for MultiThreshold.
fn absorb(m: &Model, pi: usize) -> Option<Absorbed> {
    let node = &m.nodes[pi];
    match &node.op {
        Op::Dense(_) | Op::Conv2D(_) => {
            let mut op = node.op.clone();
            op.set_fused_relu(true);
            Some((op, None))
        }
        Op::Quant(q) => match q.dtype {
            DataType::Int { bits, signed: true } if bits >= 2 && q.zero_point == 0 => {
                let mut q = q.clone();
                q.dtype = DataType::uint(bits - 1);
                Some((Op::Quant(q), None))
            }
            _ => None,
        },
        Op::MultiThreshold(a) => {
            let zero = Rational::from_integer(0);
            if a.out_scale <= zero || a.out_bias > zero {
                return None;
            }
            // Levels below c0 map to negative values and clamp to zero.
            let c0 = -a.out_bias / a.out_scale;
            if !c0.is_integer() {
                return None;
            }
            let c0 = c0.to_integer() as usize;
            let t = m.initializers.get(&node.inputs[1])?;
            let (rows, levels) = (t.shape[0], t.shape[1]);
            if c0 > levels {
                return None;
            }
            let mant = t.mantissas()?;
            let kept: Vec<i64> = (0..rows).flat_map(|r| mant[r * levels + c0..(r + 1) * levels].iter().copied()).collect();
            let top = a.out_scale * Rational::from_integer((levels - c0) as i64);
            let out_dtype = dyadic_covering(zero, top)?;
            let mut a = a.clone();
            a.out_bias = zero;
            a.out_dtype = out_dtype;
            let tensor = Tensor::int(vec![rows, levels - c0], t.dtype, kept);
            Some((Op::MultiThreshold(a), Some((format!("{}.thresholds", node.name), tensor))))
        }
        _ => None,
    }
}

/// Narrowest INT/FIXED type holding `lo` and `hi`, when both are dyadic.
fn dyadic_covering(lo: Rational, hi: Rational) -> Option<DataType> {
    let frac = [lo, hi].iter().map(|r| crate::ir::power_of_two_exponent(&Rational::from_integer(*r.denom())).unwrap_or(99)).max()?;
    if frac > 30 {
        return None;
    }
    let unit = Rational::from_integer(1i64 << frac);
    let (l, h) = ((lo * unit).to_integer(), (hi * unit).to_integer());
    Some(DataType::covering(l, h, frac as u32, true))
}

/// Replaces a terminal Softmax with ArgMax.
pub fn remove_softmax(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::RemoveSoftmax, m);
    let idx = m
        .nodes
        .iter()
        .position(|n| {
            matches!(n.op, Op::Softmax)
                && m.outputs.iter().any(|o| o == n.output())
                && !m.nodes.iter().any(|c| c.inputs.iter().any(|t| t == n.output()))
        })
        .ok_or(PassError::PatternNotFound { pass: PassId::RemoveSoftmax })?;
    let mut out = m.clone();
    out.nodes[idx].op = Op::ArgMax;
    report.rewritten = 1;
    let report = report.finish(&out);
    Ok((out, report))
}

/// Sets each integer linear layer's accumulator to the narrowest signed
/// type covering its worst-case per-channel dot product (bias included,
/// before any fused ReLU).
pub fn minimize_accumulators(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::MinAccum, m);
    let mut out = m.clone();
    let types = m.types()?;
    for node in &mut out.nodes {
        if !node.op.is_linear() {
            continue;
        }
        let dt = |i: usize| node.inputs.get(i).map(|t| types[t].dtype);
        let (x, w, b) = (dt(0).unwrap(), dt(1).unwrap(), dt(2));
        if x.is_float() || w.is_float() || b.is_some_and(|b| b.is_float()) {
            continue;
        }
        let Some(wm) = m.initializers.get(&node.inputs[1]).and_then(Tensor::mantissas) else { continue };
        let bias = node.inputs.get(2).and_then(|t| m.initializers.get(t)).and_then(Tensor::mantissas);
        if node.inputs.len() > 2 && bias.is_none() {
            continue;
        }
        let layout = acc_layout(x, w, b);
        let channels = types[&node.inputs[1]].shape[0];
        let ranges = linear_channel_ranges(wm, channels, x.mantissa_range().unwrap(), bias, layout);
        let lo = ranges.iter().map(|r| r.0).min().unwrap_or(0);
        let hi = ranges.iter().map(|r| r.1).max().unwrap_or(0);
        let (Ok(lo), Ok(hi)) = (i64::try_from(lo), i64::try_from(hi)) else { continue };
        let acc = DataType::signed_covering(lo, hi, layout.frac);
        if acc.bits() > 32 {
            continue;
        }
        if node.op.accumulator() != Some(acc) {
            node.op.set_accumulator(Some(acc));
            report.rewritten += 1;
        }
    }
    let report = report.finish(&out);
    Ok((out, report))
}
