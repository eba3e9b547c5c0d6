// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use qflow::cli::run;
use qflow::dataflow::FifoPlan;
use qflow::fixtures::pool_conv_join;
use qflow::ir::{parse_model, serialize_model};

struct Out {
    code: i32,
    out: String,
    err: String,
}

fn qflow(args: &[&str]) -> Out {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("qflow").chain(args.iter().copied()), &mut out, &mut err);
    Out { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn zoo(dir: &Path, id: &str) -> PathBuf {
    let p = dir.join(format!("{id}.json"));
    let r = qflow(&["zoo", id, "-o", p.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.err);
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zoo_prints_param_counts() {
    let dir = tempfile::tempdir().unwrap();
    let r = qflow(&["zoo", "cnv-w1a1", "-o", s(&dir.path().join("c.json"))]);
    assert_eq!((r.code, r.out.as_str()), (0, "params: 1542848\n"));
    let r = qflow(&["zoo", "kws-mlp", "-o", s(&dir.path().join("k.json"))]);
    assert_eq!(r.out, "params: 259584\n");
    assert_eq!(qflow(&["zoo", "bogus"]).code, 64);
    let r = qflow(&["zoo", "ic-cnn", "--width-scale", "1/8"]);
    assert_eq!(r.code, 64, "{}", r.err);
}

#[test]
fn zoo_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = zoo(dir.path(), "ad-ae");
    let text = fs::read_to_string(&p).unwrap();
    assert_eq!(serialize_model(&parse_model(&text).unwrap()), text);
    let r = qflow(&["zoo", "ad-ae"]);
    assert_eq!(r.out, text);
}

#[test]
fn inspect_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cnv = zoo(dir.path(), "cnv-w1a1");
    let r = qflow(&["inspect", s(&cnv)]);
    assert_eq!(r.code, 0);
    assert!(r.out.contains("params: 1542848"));
    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"name": "empty", "flow": "hls4ml", "inputs": [], "outputs": [], "initializers": {}, "nodes": []}"#).unwrap();
    let r = qflow(&["inspect", s(&empty)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("0 nodes"));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not a model").unwrap();
    let r = qflow(&["inspect", s(&bad)]);
    assert_eq!(r.code, 2);
    assert!(r.out.is_empty() && !r.err.is_empty());
    assert_eq!(qflow(&["inspect", s(&dir.path().join("missing.json"))]).code, 2);
    let r = qflow(&["--json", "inspect", s(&cnv)]);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["params"], 1_542_848);
}

#[test]
fn optimize_cases() {
    let dir = tempfile::tempdir().unwrap();
    let kws = zoo(dir.path(), "kws-mlp");
    let out = dir.path().join("opt.json");
    let r = qflow(&["optimize", s(&kws), "-o", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("streamline:"));
    let m = parse_model(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(m.float_edges().unwrap().is_empty());

    let same = dir.path().join("same.json");
    assert_eq!(qflow(&["optimize", s(&kws), "--passes", "", "-o", s(&same)]).code, 0);
    assert_eq!(fs::read(&same).unwrap(), fs::read(&kws).unwrap());

    assert_eq!(qflow(&["optimize", s(&kws), "--passes", "fold-bn,nope"]).code, 64);

    let ic = zoo(dir.path(), "ic-cnn");
    let r = qflow(&["optimize", s(&ic), "--passes", "streamline"]);
    assert_eq!(r.code, 3);
    assert!(r.err.contains("streamline") && r.err.contains("softmax"), "{}", r.err);

    let r = qflow(&["--json", "optimize", s(&kws), "-o", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["passes"].as_array().unwrap().len(), 5);
}

#[test]
fn cost_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cnv = zoo(dir.path(), "cnv-w1a1");
    let r = qflow(&["--json", "cost", s(&cnv), "--baseline", s(&cnv)]);
    assert_eq!(r.code, 0);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["cost_c"], 1.0);
    let kws = zoo(dir.path(), "kws-mlp");
    let r = qflow(&["--json", "cost", s(&kws)]);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["wm_bits"], 778_752);
    assert!(v.get("cost_c").is_none());
    let folded = dir.path().join("folded.json");
    assert_eq!(qflow(&["optimize", s(&kws), "--passes", "fold-bn", "-o", s(&folded)]).code, 0);
    let r = qflow(&["cost", s(&folded)]);
    assert_eq!(r.code, 3);
    assert!(r.err.contains("FLOAT32"), "{}", r.err);
}

#[test]
fn simulate_cases() {
    let dir = tempfile::tempdir().unwrap();
    let kws = zoo(dir.path(), "kws-mlp");
    let opt = dir.path().join("opt.json");
    assert_eq!(qflow(&["optimize", s(&kws), "-o", s(&opt)]).code, 0);
    let r = qflow(&["--json", "simulate", s(&opt), "--mode", "finn", "--clock-mhz", "200"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    for f in v["fifos"].as_array().unwrap() {
        assert!(f["depth"].as_u64().unwrap().is_power_of_two());
    }
    assert_eq!(v["clock_mhz"], 200.0);

    let ic = zoo(dir.path(), "ic-cnn");
    let r = qflow(&["simulate", s(&ic)]);
    assert_eq!(r.code, 3);
    assert!(r.err.contains("`softmax`"), "{}", r.err);
}

#[test]
fn simulate_with_undersized_join_plan_deadlocks() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("join.json");
    fs::write(&model, serialize_model(&pool_conv_join())).unwrap();
    let plan_path = dir.path().join("plan.json");
    let r = qflow(&["simulate", s(&model), "-o", s(&plan_path)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(qflow(&["simulate", s(&model), "--fifo", s(&plan_path)]).code, 0);

    let mut plan = FifoPlan::from_json(&fs::read_to_string(&plan_path).unwrap()).unwrap();
    plan.depths.insert("h.fork->pool".into(), 1);
    fs::write(&plan_path, plan.to_json()).unwrap();
    let r = qflow(&["simulate", s(&model), "--fifo", s(&plan_path)]);
    assert_eq!(r.code, 4);
    assert!(r.err.contains("blocked stages") && r.err.contains("pool"), "{}", r.err);
    assert!(r.out.contains("DEADLOCK"));

    plan.depths.remove("h.fork->pool");
    fs::write(&plan_path, plan.to_json()).unwrap();
    assert_eq!(qflow(&["simulate", s(&model), "--fifo", s(&plan_path)]).code, 2);
}

#[test]
fn verify_cases() {
    let dir = tempfile::tempdir().unwrap();
    let kws = zoo(dir.path(), "kws-mlp");
    let r = qflow(&["verify", s(&kws), s(&kws), "--n", "5"]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("max_abs_deviation: 0"));

    // One weight nudged in the linear output layer of the optimized AD model.
    let ad = zoo(dir.path(), "ad-ae");
    let opt = dir.path().join("opt.json");
    assert_eq!(qflow(&["optimize", s(&ad), "-o", s(&opt)]).code, 0);
    let r = qflow(&["verify", s(&ad), s(&opt), "--n", "20", "--tolerance", "exact"]);
    assert_eq!(r.code, 0, "{}{}", r.out, r.err);
    let mut m = parse_model(&fs::read_to_string(&opt).unwrap()).unwrap();
    let w = m.node("output").unwrap().inputs[1].clone();
    let t = m.initializers.get_mut(&w).unwrap();
    let qflow::ir::TensorData::Int(data) = &mut t.data else { panic!("integer weights expected") };
    data[0] = if data[0] == 0 { 1 } else { 0 };
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serialize_model(&m)).unwrap();
    let r = qflow(&["verify", s(&opt), s(&bad), "--n", "50", "--seed", "3"]);
    assert_eq!(r.code, 5, "{}", r.err);
    assert!(r.out.contains("counterexample (sample 0)"), "{}", r.out);
    assert!(r.out.contains("\"input\""), "{}", r.out);

    let cnv = zoo(dir.path(), "cnv-w1a1");
    assert_eq!(qflow(&["verify", s(&kws), s(&cnv)]).code, 2);
}

#[test]
fn help_and_usage() {
    let r = qflow(&["--help"]);
    assert_eq!(r.code, 0);
    for cmd in ["inspect", "optimize", "cost", "simulate", "verify", "zoo"] {
        assert!(r.out.contains(cmd));
    }
    assert_eq!(qflow(&[]).code, 64);
    assert_eq!(qflow(&["frobnicate"]).code, 64);
}
