// SPDX-License-Identifier: Apache-2.0

//! Inference-cost metrics: bit operations, weight memory, FLOPs and the
//! normalized cost against a baseline model.

use std::fmt;

use serde::Serialize;

use crate::ir::{infer_types, IrError, Model, Op};

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("bops_layer: {0} must be at least 1")]
    Domain(&'static str),
    #[error("node `{node}`: {what} has no fixed-width dtype (FLOAT32)")]
    MissingAnnotation { node: String, what: &'static str },
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Bit operations of one linear layer:
/// `m * n * k^2 * (b_a*b_w + b_a + b_w + log2(n*k^2)) * out_positions`.
pub fn bops_layer(m: i64, n: i64, k: i64, b_a: i64, b_w: i64, out_positions: i64) -> Result<f64, CostError> {
    for (v, name) in [(m, "m"), (n, "n"), (k, "k"), (b_a, "b_a"), (b_w, "b_w"), (out_positions, "out_positions")] {
        if v < 1 {
            return Err(CostError::Domain(name));
        }
    }
    let (m, n, k, ba, bw, p) = (m as f64, n as f64, k as f64, b_a as f64, b_w as f64, out_positions as f64);
    let fan_in = n * k * k;
    Ok(m * fan_in * (ba * bw + ba + bw + fan_in.log2()) * p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub node: String,
    pub bops: f64,
    pub wm_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub bops: f64,
    pub wm_bits: u64,
    pub flops: u64,
    pub params: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_c: Option<f64>,
    pub layers: Vec<LayerCost>,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bops: {}", self.bops)?;
        writeln!(f, "wm_bits: {}", self.wm_bits)?;
        writeln!(f, "flops: {}", self.flops)?;
        writeln!(f, "params: {}", self.params)?;
        if let Some(c) = self.cost_c {
            writeln!(f, "cost_c: {c}")?;
        }
        for l in &self.layers {
            writeln!(f, "  {:<24} bops {:>16.1}  wm_bits {:>10}", l.node, l.bops, l.wm_bits)?;
        }
        Ok(())
    }
}

/// Per-layer and total BOPs and weight memory. Dense layers use `k = 1`;
/// convolutions multiply by output positions. Activation bits are those
/// of the layer's input tensor.
pub fn model_cost(m: &Model, baseline: Option<&Model>) -> Result<CostReport, CostError> {
    let types = m.types()?;
    let mut layers = Vec::new();
    for node in &m.nodes {
        if !node.op.is_linear() {
            continue;
        }
        let x = &types[&node.inputs[0]];
        let w = &types[&node.inputs[1]];
        let missing = |what| CostError::MissingAnnotation { node: node.name.clone(), what };
        if w.dtype.is_float() {
            return Err(missing("weight"));
        }
        if x.dtype.is_float() {
            return Err(missing("input activation"));
        }
        let out = &types[node.output()];
        let (mo, n) = (w.shape[0] as i64, w.shape[1] as i64);
        let k = node.op.kernel() as i64;
        let positions = match node.op {
            Op::Conv2D(_) => out.positions() as i64,
            _ => 1,
        };
        let bits = |d: crate::ir::DataType| d.bits() as i64;
        let bops = bops_layer(mo, n, k, bits(x.dtype), bits(w.dtype), positions)?;
        let elems = w.numel() as u64 + node.inputs.get(2).map_or(0, |b| types[b].numel() as u64);
        layers.push(LayerCost { node: node.name.clone(), bops, wm_bits: elems * w.dtype.bits() as u64 });
    }
    let bops = layers.iter().map(|l| l.bops).sum();
    let wm_bits = layers.iter().map(|l| l.wm_bits).sum();
    let cost_c = match baseline {
        Some(b) => {
            let r = model_cost(b, None)?;
            Some(0.5 * (bops / r.bops + wm_bits as f64 / r.wm_bits as f64))
        }
        None => None,
    };
    Ok(CostReport { bops, wm_bits, flops: flops(m), params: m.count_params().params, cost_c, layers })
}

/// Floating-point operation count. One MAC is two FLOPs; bias adds,
/// fused ReLUs and elementwise ops cost one per output element; pooling
/// costs `k^2` per output; ArgMax one per input element.
pub fn flops(m: &Model) -> u64 {
    let (types, _) = infer_types(m);
    let mut total = 0u64;
    for node in &m.nodes {
        let (Some(x), Some(out)) = (node.inputs.first().and_then(|t| types.get(t)), types.get(node.output())) else {
            continue;
        };
        let out_n = out.numel() as u64;
        total += match &node.op {
            Op::Conv2D(_) | Op::Dense(_) => {
                let w = &types[&node.inputs[1]];
                let fan_in = (w.numel() / w.shape[0].max(1)) as u64;
                let mut f = 2 * fan_in * out_n;
                if node.inputs.len() > 2 {
                    f += out_n;
                }
                if node.op.fused_relu() {
                    f += out_n;
                }
                f
            }
            Op::MaxPool2D(p) | Op::AvgPool2D(p) => out_n * (p.kernel as u64).pow(2),
            Op::ArgMax => x.numel() as u64,
            Op::Flatten => 0,
            Op::BatchNorm(_) | Op::Relu | Op::Add | Op::Quant(_) | Op::MultiThreshold(_) | Op::Softmax => out_n,
        };
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{DataType, DenseAttrs, Flow, Node, Tensor};
    use crate::zoo::{build, ZooId, ZooSpec};

    #[test]
    fn bops_examples() {
        assert_eq!(bops_layer(512, 256, 1, 1, 1, 1).unwrap(), 1_441_792.0);
        assert_eq!(bops_layer(1, 1, 1, 1, 1, 1).unwrap(), 3.0);
        let conv = bops_layer(64, 3, 3, 8, 1, 900).unwrap();
        assert!((conv - 1728.0 * (17.0 + 27f64.log2()) * 900.0).abs() < 1e-6);
        assert!(matches!(bops_layer(0, 1, 1, 1, 1, 1), Err(CostError::Domain("m"))));
        assert!(matches!(bops_layer(1, 1, 1, 1, -2, 1), Err(CostError::Domain("b_w"))));
    }

    #[test]
    fn flops_small_cases() {
        let mut m = Model::new("f", Flow::Hls4ml);
        assert_eq!(flops(&m), 0);
        m.add_input("x", vec![1, 4], DataType::int(4));
        m.add_initializer("w", Tensor::int(vec![3, 4], DataType::int(4), vec![0; 12]));
        m.add_node(Node::new("fc", Op::Dense(DenseAttrs::default()), &["x", "w"], &["y"]));
        m.outputs.push("y".into());
        assert_eq!(flops(&m), 24);
    }

    #[test]
    fn zoo_costs() {
        let cnv = build(&ZooSpec::new(ZooId::CnvW1A1)).unwrap();
        let r = model_cost(&cnv, Some(&cnv)).unwrap();
        assert_eq!(r.wm_bits, 1_542_848);
        assert_eq!(r.cost_c, Some(1.0));
        let kws = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
        assert_eq!(model_cost(&kws, None).unwrap().wm_bits, 778_752);
        let ic = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
        let f = flops(&ic) as f64;
        assert!((12.8e6 / 2.0..=12.8e6 * 2.0).contains(&f), "{f}");
    }

    #[test]
    fn float_weights_are_missing_annotation() {
        let kws = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
        let (folded, _) = crate::passes::fold_bn(&kws).unwrap();
        assert!(matches!(model_cost(&folded, None), Err(CostError::MissingAnnotation { .. })));
    }
}
