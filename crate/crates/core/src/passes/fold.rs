// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use super::{fresh_name, single_use, PassError, PassId, PassReport};
use crate::exec::{run_all, ExecValue, Mode};
use crate::ir::{Model, Op, Tensor};

/// Evaluates every node whose inputs are all constant and replaces it with
/// an initializer. Integer results are computed exactly.
pub fn constant_fold(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::ConstantFold, m);
    let mut out = m.clone();
    let order = m.topo_order().ok_or_else(|| PassError::Ir(crate::ir::IrError::Schema("not a DAG".into())))?;
    let mut constant: BTreeSet<String> = m.initializers.keys().cloned().collect();
    let mut folded = Vec::new();
    for i in order {
        let node = &m.nodes[i];
        if !node.inputs.iter().all(|t| constant.contains(t)) {
            continue;
        }
        let mut sub = Model::new("fold", m.flow);
        for t in &node.inputs {
            sub.add_initializer(t, out.initializers[t].clone());
        }
        sub.add_node(node.clone());
        sub.outputs.push(node.output().to_string());
        let types = sub.types()?;
        let exact = !types[node.output()].dtype.is_float() && node.inputs.iter().all(|t| !types[t].dtype.is_float());
        let mode = if exact { Mode::ExactInt } else { Mode::Float };
        let mut vals = run_all(&sub, &ExecValue::new(), mode)?;
        let t: Tensor = vals.remove(node.output()).expect("node output");
        out.add_initializer(node.output(), t);
        constant.insert(node.output().to_string());
        folded.push(node.name.clone());
    }
    out.nodes.retain(|n| !folded.contains(&n.name));
    out.prune_initializers();
    report.removed = folded.len();
    let report = report.finish(&out);
    Ok((out, report))
}

/// Folds each `Dense/Conv2D -> BatchNorm` pair into the linear layer:
/// `k' = v * k`, `b' = v * (b - mean) + beta` with
/// `v = gamma / sqrt(var + eps)`. A graph without the pattern is returned
/// unchanged with an empty report.
pub fn fold_bn(m: &Model) -> Result<(Model, PassReport), PassError> {
    let mut report = PassReport::new(PassId::FoldBn, m);
    let mut out = m.clone();
    loop {
        let producers = out.producers();
        let hit = out.nodes.iter().enumerate().find_map(|(bi, bn)| {
            let Op::BatchNorm(attrs) = &bn.op else { return None };
            let &li = producers.get(bn.inputs[0].as_str())?;
            let lin = &out.nodes[li];
            let params_const = bn.inputs[1..].iter().all(|t| out.initializers.contains_key(t));
            let weights_const = lin.inputs[1..].iter().all(|t| out.initializers.contains_key(t));
            (lin.op.is_linear() && !lin.op.fused_relu() && single_use(&out, &bn.inputs[0]) && params_const && weights_const)
                .then_some((li, bi, attrs.epsilon))
        });
        let Some((li, bi, eps)) = hit else { break };
        let bn = out.nodes[bi].clone();
        let lin = out.nodes[li].clone();
        let p = |i: usize| out.initializers[&bn.inputs[i]].to_f64();
        let (gamma, beta, mean, var) = (p(1), p(2), p(3), p(4));
        let w = out.initializers[&lin.inputs[1]].clone();
        let m_out = w.shape[0];
        let per = w.numel() / m_out.max(1);
        let v: Vec<f64> = (0..m_out).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
        let wv = w.to_f64();
        let wf: Vec<f64> = wv.iter().enumerate().map(|(i, &x)| v[i / per] * x).collect();
        let b0 = match lin.inputs.get(2) {
            Some(b) => out.initializers[b].to_f64(),
            None => vec![0.0; m_out],
        };
        let bf: Vec<f64> = (0..m_out).map(|c| v[c] * (b0[c] - mean[c]) + beta[c]).collect();

        let wname = fresh_name(&out, &format!("{}.weight_folded", lin.name));
        out.add_initializer(&wname, Tensor::float(w.shape.clone(), wf));
        let bname = fresh_name(&out, &format!("{}.bias_folded", lin.name));
        out.add_initializer(&bname, Tensor::float(vec![m_out], bf));

        let node = &mut out.nodes[li];
        node.inputs.truncate(1);
        node.inputs.push(wname);
        node.inputs.push(bname);
        node.outputs[0] = bn.output().to_string();
        node.op.set_accumulator(None);
        out.nodes.remove(bi);
        report.removed += 1;
        report.rewritten += 1;
    }
    out.prune_initializers();
    let report = report.finish(&out);
    Ok((out, report))
}
