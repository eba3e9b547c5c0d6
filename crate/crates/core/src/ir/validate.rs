// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{infer_types, DataType, Model, Op, Rational};

/// A violated invariant. `subject` is the offending node or tensor name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub subject: String,
    pub rule: &'static str,
    pub message: String,
}

impl Diagnostic {
    pub(crate) fn node(subject: &str, rule: &'static str, message: impl Into<String>) -> Self {
        Diagnostic { subject: subject.to_string(), rule, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.subject, self.rule, self.message)
    }
}

/// Checks every structural and typing invariant. Empty iff the model is
/// valid.
pub fn validate(model: &Model) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut node_names = HashSet::new();
    for n in &model.nodes {
        if !node_names.insert(n.name.as_str()) {
            diags.push(Diagnostic::node(&n.name, "unique-node-name", "duplicate node name"));
        }
    }

    // Where each tensor comes from.
    let mut sources: HashMap<&str, usize> = HashMap::new();
    for vi in &model.inputs {
        *sources.entry(vi.name.as_str()).or_default() += 1;
        if let Err(e) = vi.dtype.check() {
            diags.push(Diagnostic::node(&vi.name, "dtype", e));
        }
    }
    for (name, t) in &model.initializers {
        *sources.entry(name.as_str()).or_default() += 1;
        if let Err(e) = t.dtype.check().and_then(|_| t.check()) {
            diags.push(Diagnostic::node(name, "tensor-domain", e));
        }
    }
    for n in &model.nodes {
        for o in &n.outputs {
            *sources.entry(o.as_str()).or_default() += 1;
        }
    }
    let mut dup: Vec<&str> = sources.iter().filter(|(_, &c)| c > 1).map(|(k, _)| *k).collect();
    dup.sort_unstable();
    for t in dup {
        diags.push(Diagnostic::node(t, "single-producer", "tensor is defined more than once"));
    }

    for n in &model.nodes {
        let kind = n.op.kind();
        let (lo, hi) = kind.arity();
        if n.inputs.len() < lo || n.inputs.len() > hi {
            diags.push(Diagnostic::node(&n.name, "arity", format!("{kind} takes {lo}..={hi} inputs, got {}", n.inputs.len())));
        }
        if n.outputs.len() != 1 {
            diags.push(Diagnostic::node(&n.name, "arity", format!("{kind} has exactly one output, got {}", n.outputs.len())));
        }
        for t in &n.inputs {
            if !sources.contains_key(t.as_str()) {
                diags.push(Diagnostic::node(t, "dangling-tensor", format!("input of node `{}` is never defined", n.name)));
            }
        }
        check_attrs(model, n, &mut diags);
    }
    for o in &model.outputs {
        if !sources.contains_key(o.as_str()) {
            diags.push(Diagnostic::node(o, "dangling-tensor", "graph output is never defined"));
        }
    }
    if model.topo_order().is_none() {
        diags.push(Diagnostic::node(&model.name, "dag", "not a DAG"));
    }
    if !diags.is_empty() {
        return diags;
    }
    let (_, type_diags) = infer_types(model);
    diags.extend(type_diags);
    diags
}

fn check_attrs(model: &Model, n: &super::Node, diags: &mut Vec<Diagnostic>) {
    let name = n.name.as_str();
    let positive = |v: u32, rule: &'static str, what: &str, diags: &mut Vec<Diagnostic>| {
        if v < 1 {
            diags.push(Diagnostic::node(name, rule, format!("{what} must be at least 1")));
        }
    };
    match &n.op {
        Op::Conv2D(a) => {
            positive(a.kernel, "kernel≥1", "kernel", diags);
            positive(a.stride, "stride≥1", "stride", diags);
            positive(a.reuse_factor, "reuse_factor≥1", "reuse_factor", diags);
        }
        Op::Dense(a) => positive(a.reuse_factor, "reuse_factor≥1", "reuse_factor", diags),
        Op::MaxPool2D(p) | Op::AvgPool2D(p) => {
            positive(p.kernel, "kernel≥1", "kernel", diags);
            positive(p.stride, "stride≥1", "stride", diags);
        }
        Op::BatchNorm(a) => {
            if a.epsilon.is_nan() || a.epsilon <= 0.0 {
                diags.push(Diagnostic::node(name, "epsilon>0", "epsilon must be positive"));
            }
            let var = n.inputs.get(4).and_then(|t| model.initializers.get(t));
            if var.is_some_and(|v| v.to_f64().iter().any(|&x| x.is_nan() || x < 0.0)) {
                diags.push(Diagnostic::node(name, "variance≥0", "moving variance must be non-negative"));
            }
        }
        Op::Quant(q) => {
            if q.scale <= Rational::from_integer(0) {
                diags.push(Diagnostic::node(name, "scale>0", "scale must be positive"));
            }
            if !matches!(q.dtype, DataType::Int { .. } | DataType::Bipolar) {
                diags.push(Diagnostic::node(name, "quant-dtype", format!("quantizer dtype must be INT/UINT/BIPOLAR, got {}", q.dtype)));
            }
        }
        Op::MultiThreshold(a) => {
            let Some(t) = n.inputs.get(1).and_then(|t| model.initializers.get(t)) else {
                return;
            };
            let rows = t.shape.first().copied().unwrap_or(0);
            let levels = t.shape.get(1).copied().unwrap_or(0);
            let vals = t.to_f64();
            for r in 0..rows {
                let row = &vals[r * levels..(r + 1) * levels];
                if row.windows(2).any(|w| w[0] > w[1]) {
                    diags.push(Diagnostic::node(name, "thresholds-sorted", format!("threshold row {r} is not non-decreasing")));
                    break;
                }
            }
            let bits = a.out_dtype.bits();
            if bits < 63 && (levels as u128 + 1) > (1u128 << bits) {
                diags.push(Diagnostic::node(
                    name,
                    "threshold-levels",
                    format!("{} output levels exceed {}", levels + 1, a.out_dtype),
                ));
            } else if !a.out_dtype.is_float() {
                let step = Rational::from_integer(1) / Rational::from_integer(1i64 << a.out_dtype.frac_bits());
                for c in [0, levels as i64] {
                    let y = a.out_scale * Rational::from_integer(c) + a.out_bias;
                    let m = y / step;
                    if !m.is_integer() || !a.out_dtype.contains_mantissa(m.to_integer()) {
                        diags.push(Diagnostic::node(name, "threshold-levels", format!("level {y} not representable in {}", a.out_dtype)));
                        break;
                    }
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ConvAttrs, DenseAttrs, Flow, Node, Tensor};

    fn dense_model() -> Model {
        let mut m = Model::new("t", Flow::Hls4ml);
        m.add_input("x", vec![1, 4], DataType::int(8));
        m.add_initializer("w", Tensor::int(vec![3, 4], DataType::int(4), vec![1; 12]));
        m.add_initializer("b", Tensor::int(vec![3], DataType::int(4), vec![0; 3]));
        m.add_node(Node::new("fc", Op::Dense(DenseAttrs::default()), &["x", "w", "b"], &["y"]));
        m.outputs.push("y".into());
        m
    }

    #[test]
    fn valid_model_has_no_diagnostics() {
        assert_eq!(validate(&dense_model()), vec![]);
    }

    #[test]
    fn dangling_tensor_is_named() {
        let mut m = dense_model();
        m.nodes[0].inputs[0] = "ghost".into();
        let diags = validate(&m);
        assert!(diags.iter().any(|d| d.subject == "ghost" && d.rule == "dangling-tensor"), "{diags:?}");
    }

    #[test]
    fn zero_stride_conv() {
        let mut m = Model::new("t", Flow::Hls4ml);
        m.add_input("x", vec![1, 1, 4, 4], DataType::int(8));
        m.add_initializer("w", Tensor::int(vec![1, 1, 1, 1], DataType::int(4), vec![1]));
        m.add_node(Node::new("c", Op::Conv2D(ConvAttrs::new(1, 0)), &["x", "w"], &["y"]));
        m.outputs.push("y".into());
        let diags = validate(&m);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].rule, "stride≥1");
        assert_eq!(diags[0].subject, "c");
    }

    #[test]
    fn cycle_is_reported() {
        let mut m = Model::new("t", Flow::Hls4ml);
        m.add_node(Node::new("a", Op::Relu, &["v"], &["u"]));
        m.add_node(Node::new("b", Op::Relu, &["u"], &["v"]));
        m.outputs.push("u".into());
        let diags = validate(&m);
        assert!(diags.iter().any(|d| d.message == "not a DAG"), "{diags:?}");
    }

    #[test]
    fn out_of_domain_initializer() {
        let mut m = dense_model();
        m.initializers.get_mut("w").unwrap().data = crate::ir::TensorData::Int(vec![9; 12]);
        let diags = validate(&m);
        assert_eq!(diags[0].rule, "tensor-domain");
        assert_eq!(diags[0].subject, "w");
    }

    #[test]
    fn shape_mismatch() {
        let mut m = dense_model();
        m.inputs[0].shape = vec![1, 5];
        let diags = validate(&m);
        assert_eq!(diags[0].rule, "shape");
    }
}
