// SPDX-License-Identifier: Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::exec::{random_inputs, run, run_all, ExecValue, Mode};
use crate::ir::{
    BatchNormAttrs, DataType, DenseAttrs, Flow, Node, Op, QuantAttrs, Rational, Rounding, Tensor,
};
use crate::fixtures::toy_layer;
use crate::zoo::{build, ZooId, ZooSpec};

fn dense(name: &str, x: &str, w: &str, b: Option<&str>, out: &str) -> Node {
    let mut ins = vec![x, w];
    ins.extend(b);
    Node::new(name, Op::Dense(DenseAttrs::default()), &ins, &[out])
}

fn bn_params(m: &mut Model, prefix: &str, g: Vec<f64>, b: Vec<f64>, mu: Vec<f64>, var: Vec<f64>) -> Vec<String> {
    let n = g.len();
    let mut names = vec![];
    for (s, v) in [("g", g), ("b", b), ("mu", mu), ("var", var)] {
        let name = format!("{prefix}.{s}");
        m.add_initializer(&name, Tensor::float(vec![n], v));
        names.push(name);
    }
    names
}

fn bn_node(name: &str, x: &str, p: &[String], out: &str, eps: f64) -> Node {
    let ins: Vec<&str> = std::iter::once(x).chain(p.iter().map(String::as_str)).collect();
    Node::new(name, Op::BatchNorm(BatchNormAttrs { epsilon: eps }), &ins, &[out])
}

fn single(name: &str, v: f64) -> ExecValue {
    [(name.to_string(), Tensor::float(vec![1, 1], vec![v]))].into()
}

#[test]
fn constant_fold_relu_of_constant() {
    let mut m = Model::new("cf", Flow::Finn);
    m.add_initializer("c", Tensor::int(vec![1, 2], DataType::int(4), vec![-2, 5]));
    m.add_node(Node::new("r", Op::Relu, &["c"], &["y"]));
    m.outputs.push("y".into());
    let (out, rep) = constant_fold(&m).unwrap();
    assert!(out.nodes.is_empty());
    assert_eq!(out.initializers["y"].mantissas().unwrap(), &[0, 5]);
    assert_eq!(rep.removed, 1);
}

#[test]
fn constant_fold_without_constants_is_identity() {
    let m = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
    let (out, rep) = constant_fold(&m).unwrap();
    assert_eq!(out, m);
    assert_eq!(rep.changes(), 0);
}

#[test]
fn fold_bn_identity_is_exact() {
    let eps = 1e-5;
    let mut m = Model::new("id", Flow::Hls4ml);
    m.add_input("x", vec![1, 1], DataType::Float32);
    m.add_initializer("w", Tensor::float(vec![1, 1], vec![2.0]));
    m.add_initializer("b", Tensor::float(vec![1], vec![1.0]));
    m.add_node(dense("fc", "x", "w", Some("b"), "z"));
    let p = bn_params(&mut m, "bn", vec![1.0], vec![0.0], vec![0.0], vec![1.0 - eps]);
    m.add_node(bn_node("bn", "z", &p, "y", eps));
    m.outputs.push("y".into());
    let (f, rep) = fold_bn(&m).unwrap();
    assert_eq!(rep.removed, 1);
    assert_eq!(f.nodes.len(), 1);
    for x in [-3.0, 0.0, 0.5, 7.25] {
        let a = run(&m, &single("x", x), Mode::Float).unwrap()["y"].to_f64();
        let b = run(&f, &single("x", x), Mode::Float).unwrap()["y"].to_f64();
        assert_eq!(a, b);
    }
}

#[test]
fn fold_bn_reference_example() {
    let eps = 1e-5;
    let mut m = Model::new("ex", Flow::Hls4ml);
    m.add_input("x", vec![1, 1], DataType::Float32);
    m.add_initializer("w", Tensor::float(vec![1, 1], vec![2.0]));
    m.add_initializer("b", Tensor::float(vec![1], vec![1.0]));
    m.add_node(dense("fc", "x", "w", Some("b"), "z"));
    let p = bn_params(&mut m, "bn", vec![2.0], vec![0.5], vec![3.0], vec![4.0]);
    m.add_node(bn_node("bn", "z", &p, "y", eps));
    m.outputs.push("y".into());
    let (f, _) = fold_bn(&m).unwrap();
    let got = run(&f, &single("x", 5.0), Mode::Float).unwrap()["y"].to_f64()[0];
    // Independent: BN(Dense(5)) = 2 * (11 - 3) / sqrt(4 + eps) + 0.5.
    let want = 2.0 * (11.0 - 3.0) / (4.0f64 + eps).sqrt() + 0.5;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn fold_bn_on_kws_within_tolerance() {
    let m = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
    let (f, rep) = fold_bn(&m).unwrap();
    assert_eq!(rep.removed, 3);
    // Compare pre-quantizer values so rounding boundaries do not amplify
    // the tiny float reassociation error.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let inp = random_inputs(&m, &mut rng);
        let a = run_all(&m, &inp, Mode::Float).unwrap();
        let b = run_all(&f, &inp, Mode::Float).unwrap();
        for t in ["bn1", "bn2", "bn3"] {
            for (x, y) in a[t].to_f64().iter().zip(b[t].to_f64()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{t}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn streamline_toy_layer_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let m = toy_layer(&mut rng, 4);
        let (s, rep) = streamline(&m).unwrap();
        assert_eq!(rep.added, 1);
        assert!(s.float_edges().unwrap().is_empty());
        for x in -128..=127 {
            let inp: ExecValue = [("x".to_string(), Tensor::int(vec![1, 1], DataType::int(8), vec![x]))].into();
            let want = run(&m, &inp, Mode::Float).unwrap()["y"].to_f64();
            let got = run(&s, &inp, Mode::ExactInt).unwrap()["y"].to_f64();
            assert_eq!(got, want, "x = {x}");
        }
    }
}

#[test]
fn streamline_sign_activation_has_zero_threshold() {
    let mut m = Model::new("sign", Flow::Finn);
    m.add_input("x", vec![1, 4], DataType::Bipolar);
    m.add_initializer("w", Tensor::int(vec![2, 4], DataType::Bipolar, vec![1, -1, 1, 1, -1, -1, 1, -1]));
    m.add_node(dense("fc", "x", "w", None, "z"));
    let q = QuantAttrs { scale: Rational::from_integer(1), zero_point: 0, dtype: DataType::Bipolar, rounding: Rounding::RoundHalfUp };
    m.add_node(Node::new("q", Op::Quant(q), &["z"], &["y"]));
    m.outputs.push("y".into());
    let (s, _) = streamline(&m).unwrap();
    let mt = s.node("q").unwrap();
    assert!(matches!(mt.op, Op::MultiThreshold(_)));
    let t = &s.initializers[&mt.inputs[1]];
    assert_eq!(t.shape, vec![2, 1]);
    assert_eq!(t.mantissas().unwrap(), &[0, 0]);
}

#[test]
fn streamline_rejects_unsupported_op() {
    let mut m = Model::new("bad", Flow::Finn);
    m.add_input("x", vec![1, 2], DataType::int(4));
    m.add_initializer("w", Tensor::int(vec![2, 2], DataType::int(4), vec![1, 2, 3, 4]));
    m.add_node(dense("fc", "x", "w", None, "z"));
    m.add_node(Node::new("sm", Op::Softmax, &["z"], &["y"]));
    m.outputs.push("y".into());
    match streamline(&m) {
        Err(PassError::NotStreamlinable { node, .. }) => assert_eq!(node, "sm"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cnv_eighth_streamlined_argmax_agrees() {
    let m = build(&ZooSpec::scaled(ZooId::CnvW1A1, Rational::new(1, 8))).unwrap();
    let (s, _) = streamline(&m).unwrap();
    assert!(s.float_edges().unwrap().is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let inp = random_inputs(&m, &mut rng);
        let a = run(&m, &inp, Mode::Float).unwrap();
        let b = run(&s, &inp, Mode::ExactInt).unwrap();
        assert_eq!(a["argmax"].to_f64(), b["argmax"].to_f64());
    }
}

#[test]
fn merge_relu_dense_chain() {
    let mut m = Model::new("mr", Flow::Hls4ml);
    m.add_input("x", vec![1, 2], DataType::int(4));
    m.add_initializer("w1", Tensor::int(vec![2, 2], DataType::int(4), vec![1, -2, 3, -4]));
    m.add_initializer("w2", Tensor::int(vec![1, 2], DataType::int(4), vec![1, 1]));
    m.add_node(dense("fc1", "x", "w1", None, "a"));
    m.add_node(Node::new("relu", Op::Relu, &["a"], &["r"]));
    m.add_node(dense("fc2", "r", "w2", None, "y"));
    m.outputs.push("y".into());
    let (out, rep) = merge_relu(&m).unwrap();
    assert_eq!(out.nodes.len(), 2);
    assert!(out.nodes[0].op.fused_relu());
    assert_eq!(rep.removed, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let inp = random_inputs(&m, &mut rng);
        assert_eq!(run(&m, &inp, Mode::ExactInt).unwrap()["y"], run(&out, &inp, Mode::ExactInt).unwrap()["y"]);
    }
    let (again, rep2) = merge_relu(&out).unwrap();
    assert_eq!(again, out);
    assert_eq!(rep2.changes(), 0);
}

#[test]
fn merge_relu_on_ic_is_exact() {
    let m = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
    let (out, rep) = merge_relu(&m).unwrap();
    assert_eq!(rep.removed, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let inp = random_inputs(&m, &mut rng);
        assert_eq!(run(&m, &inp, Mode::Float).unwrap(), run(&out, &inp, Mode::Float).unwrap());
    }
}

#[test]
fn merge_relu_into_multithreshold_after_streamline() {
    let m = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
    let (m, _) = remove_softmax(&m).unwrap();
    let (s, _) = streamline(&m).unwrap();
    let (r, rep) = merge_relu(&s).unwrap();
    assert_eq!(rep.removed, 5);
    assert!(!r.nodes.iter().any(|n| matches!(n.op, Op::Relu)));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let inp = random_inputs(&m, &mut rng);
        let a = run_all(&s, &inp, Mode::ExactInt).unwrap();
        let b = run_all(&r, &inp, Mode::ExactInt).unwrap();
        for t in &r.outputs {
            assert_eq!(a[t].to_f64(), b[t].to_f64());
        }
    }
}

#[test]
fn remove_softmax_cases() {
    let ic = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
    let (out, _) = remove_softmax(&ic).unwrap();
    assert!(matches!(out.nodes.last().unwrap().op, Op::ArgMax));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let inp = random_inputs(&ic, &mut rng);
        let probs = run(&ic, &inp, Mode::Float).unwrap()["softmax"].to_f64();
        let idx = run(&out, &inp, Mode::Float).unwrap()["softmax"].to_f64()[0];
        assert_eq!(crate::exec::argmax(&probs).unwrap() as f64, idx);
    }
    // Softmax feeding another node.
    let mut m = Model::new("sm", Flow::Hls4ml);
    m.add_input("x", vec![1, 3], DataType::Float32);
    m.add_node(Node::new("sm", Op::Softmax, &["x"], &["p"]));
    m.add_node(Node::new("r", Op::Relu, &["p"], &["y"]));
    m.outputs.push("y".into());
    assert!(matches!(remove_softmax(&m), Err(PassError::PatternNotFound { .. })));
}

fn one_dense(w: Vec<i64>, wdt: DataType, xdt: DataType) -> Model {
    let n = w.len();
    let mut m = Model::new("acc", Flow::Finn);
    m.add_input("x", vec![1, n], xdt);
    m.add_initializer("w", Tensor::int(vec![1, n], wdt, w));
    m.add_node(dense("fc", "x", "w", None, "y"));
    m.outputs.push("y".into());
    m
}

#[test]
fn min_accum_examples() {
    let (m, rep) = minimize_accumulators(&one_dense(vec![1, 1], DataType::int(2), DataType::uint(1))).unwrap();
    assert_eq!(m.nodes[0].op.accumulator(), Some(DataType::int(3)));
    assert_eq!(rep.rewritten, 1);
    let (m, _) = minimize_accumulators(&one_dense(vec![7, -7, 7, -7], DataType::int(4), DataType::int(4))).unwrap();
    // Extremes are +-(2*7*8 + 2*7*7) = +-210, inside INT9 but not INT8.
    assert_eq!(m.nodes[0].op.accumulator(), Some(DataType::int(9)));
    let (again, rep) = minimize_accumulators(&m).unwrap();
    assert_eq!(again, m);
    assert_eq!(rep.changes(), 0);
}

#[test]
fn pipeline_default_on_kws_is_integer() {
    let m = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
    let (out, reports) = run_pipeline(&m, &PassId::DEFAULT).unwrap();
    assert_eq!(reports.len(), 5);
    assert!(out.float_edges().unwrap().is_empty());
    assert!(crate::ir::validate(&out).is_empty());
    for r in &reports {
        assert_eq!(r.nodes_after + r.removed, r.nodes_before + r.added);
    }
}

#[test]
fn pipeline_edge_cases() {
    let m = build(&ZooSpec::new(ZooId::CnvW1A1)).unwrap();
    let (same, reports) = run_pipeline(&m, &[]).unwrap();
    assert_eq!(same, m);
    assert!(reports.is_empty());
    let err = run_pipeline(&m, &[PassId::RemoveSoftmax]).unwrap_err();
    assert_eq!(err.index, 0);
    assert!(matches!(err.source, PassError::PatternNotFound { .. }));
}

#[test]
fn pass_names_round_trip() {
    for p in PassId::ALL {
        assert_eq!(p.as_str().parse::<PassId>().unwrap(), p);
    }
    assert_eq!(parse_pass_list("").unwrap(), vec![]);
    assert_eq!(parse_pass_list("fold-bn, min-accum").unwrap(), vec![PassId::FoldBn, PassId::MinAccum]);
    assert!(parse_pass_list("nope").is_err());
}

#[test]
fn default_pipeline_on_every_zoo_model() {
    for id in ZooId::ALL {
        let mut m = build(&ZooSpec::new(id)).unwrap();
        if id == ZooId::IcCnn {
            m = remove_softmax(&m).unwrap().0;
        }
        let (out, _) = run_pipeline(&m, &PassId::DEFAULT).unwrap_or_else(|e| panic!("{id}: {e}"));
        assert!(out.float_edges().unwrap().is_empty(), "{id}");
        assert!(out.nodes.iter().filter(|n| n.op.is_linear()).all(|n| n.op.accumulator().is_some()), "{id}");
    }
}

#[test]
fn every_pass_is_idempotent_on_zoo() {
    for id in ZooId::ALL {
        let mut m = build(&ZooSpec::new(id)).unwrap();
        if id == ZooId::IcCnn {
            m = remove_softmax(&m).unwrap().0;
        }
        for p in PassId::DEFAULT {
            let (once, _) = p.apply(&m).unwrap();
            let (twice, rep) = p.apply(&once).unwrap();
            assert_eq!(twice, once, "{id} {p}");
            assert_eq!(rep.changes(), 0, "{id} {p}");
            m = once;
        }
    }
}
