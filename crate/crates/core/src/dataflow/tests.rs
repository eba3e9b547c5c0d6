// SPDX-License-Identifier: Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fixtures::{chain, fork_join, random_pipeline};
use super::*;
use crate::ir::{DataType, DenseAttrs, Node, Tensor};
use crate::passes::{remove_softmax, run_pipeline, PassId};
use crate::zoo::{build, ZooId, ZooSpec};

fn optimized(id: ZooId, passes: &[PassId]) -> Model {
    let mut m = build(&ZooSpec::new(id)).unwrap();
    if id == ZooId::IcCnn {
        m = remove_softmax(&m).unwrap().0;
    }
    run_pipeline(&m, passes).unwrap().0
}

#[test]
fn two_stage_unit_pipeline() {
    let p = chain(2, 8, Flow::Hls4ml);
    let r = simulate(&p, &FifoPlan::uniform(&p, 1), 1, None).unwrap();
    assert!(!r.deadlock);
    assert_eq!(r.total_cycles, 9);
    assert_eq!(r.max_occupancy["s0->s1"], 0);
}

#[test]
fn fork_join_deadlocks_below_branch_length() {
    let p = fork_join(10);
    for d in 1..=12 {
        let mut plan = FifoPlan::uniform(&p, 10);
        plan.depths.insert("fork->join".into(), d);
        let r = simulate(&p, &plan, 1, None).unwrap();
        assert_eq!(r.deadlock, d < 10, "depth {d}");
        if r.deadlock {
            assert!(r.blocked.contains(&"fork".to_string()));
            assert!(r.total_cycles <= 10 + p.default_watchdog());
            assert!(latency(&r, Clock::mhz(100.0).unwrap()).is_err());
        }
    }
    let s = size_fifos(&p, 1, Flow::Hls4ml).unwrap();
    assert_eq!(s.plan.depths["fork->join"], 10);
}

#[test]
fn unit_chain_depths() {
    let p = chain(3, 16, Flow::Hls4ml);
    let s = size_fifos(&p, 2, Flow::Hls4ml).unwrap();
    assert!(s.plan.depths.values().all(|&d| d == 1));
    let f = size_fifos(&p, 2, Flow::Finn).unwrap();
    assert!(f.plan.depths.values().all(|&d| d == 2));
}

#[test]
fn plan_must_cover_every_fifo() {
    let p = chain(3, 4, Flow::Hls4ml);
    let mut plan = FifoPlan::uniform(&p, 2);
    plan.depths.remove("s1->s2");
    assert!(matches!(simulate(&p, &plan, 1, None), Err(DataflowError::PlanIncomplete(e)) if e == "s1->s2"));
    assert!(matches!(fifo_memory_bits(&plan, &p), Err(DataflowError::PlanIncomplete(_))));
    assert!(simulate(&p, &FifoPlan::uniform(&p, 2), 0, None).is_err());
}

#[test]
fn latency_arithmetic() {
    let p = chain(1, 10_000, Flow::Hls4ml);
    let r = simulate(&p, &FifoPlan::uniform(&p, 1), 1, None).unwrap();
    assert_eq!(r.total_cycles, 10_000);
    let l = latency(&r, Clock::mhz(100.0).unwrap()).unwrap();
    assert!((l.seconds_per_inference - 100e-6).abs() < 1e-15);
    let l2 = latency(&r, Clock::mhz(200.0).unwrap()).unwrap();
    assert_eq!(l2.seconds_per_inference * 2.0, l.seconds_per_inference);
    assert!(Clock::mhz(0.0).is_err());
}

#[test]
fn memory_bits() {
    let mut p = Pipeline::new(Flow::Hls4ml);
    let a = p.add_stage(StageSpec::new("a", 1, 1, 1));
    let b = p.add_stage(StageSpec::new("b", 1, 1, 1));
    p.add_source(a, 24);
    p.connect(a, b, 24);
    assert_eq!(fifo_memory_bits(&FifoPlan::uniform(&p, 4), &p).unwrap(), 96);
    let empty = Pipeline::new(Flow::Hls4ml);
    assert_eq!(fifo_memory_bits(&FifoPlan::uniform(&empty, 4), &empty).unwrap(), 0);
}

#[test]
fn bench_median_matches_latency() {
    let p = chain(3, 8, Flow::Hls4ml);
    let plan = FifoPlan::uniform(&p, 2);
    let clk = Clock::mhz(100.0).unwrap();
    let one = latency(&simulate(&p, &plan, 1, None).unwrap(), clk).unwrap().seconds_per_inference;
    assert_eq!(bench_median(&p, &plan, 1, 0, clk).unwrap(), one);
    assert_eq!(bench_median(&p, &plan, 5, 1000, clk).unwrap(), one);
}

#[test]
fn fused_dense_pair_maps_to_two_stages() {
    let mut m = Model::new("mlp", Flow::Hls4ml);
    m.add_input("x", vec![1, 4], DataType::int(4));
    m.add_initializer("w1", Tensor::int(vec![3, 4], DataType::int(2), vec![1; 12]));
    m.add_initializer("w2", Tensor::int(vec![2, 3], DataType::int(2), vec![1; 6]));
    m.add_node(Node::new("fc1", Op::Dense(DenseAttrs { fused_relu: true, ..Default::default() }), &["x", "w1"], &["h"]));
    m.add_node(Node::new("fc2", Op::Dense(DenseAttrs::default()), &["h", "w2"], &["y"]));
    m.outputs.push("y".into());
    let p = map_to_pipeline(&m, Flow::Hls4ml).unwrap();
    assert_eq!(p.stages.len(), 2);
    assert_eq!(p.fifos().count(), 1);
    assert_eq!(p.sink_tokens_per_inference(), 1);
}

#[test]
fn softmax_is_unmappable() {
    let ic = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
    let err = map_to_pipeline(&ic, Flow::Hls4ml).unwrap_err();
    assert!(matches!(err, DataflowError::UnmappableOp { ref node, .. } if node == "softmax"), "{err}");
}

#[test]
fn fanout_gets_a_fork_stage() {
    let mut m = Model::new("fan", Flow::Hls4ml);
    m.add_input("x", vec![1, 4], DataType::int(4));
    m.add_node(Node::new("r", Op::Relu, &["x"], &["h"]));
    m.add_node(Node::new("add", Op::Add, &["h", "h"], &["y"]));
    m.outputs.push("y".into());
    let p = map_to_pipeline(&m, Flow::Hls4ml).unwrap();
    assert!(p.stages.iter().any(|s| s.op == "Fork"));
    let s = size_fifos(&p, 2, Flow::Hls4ml).unwrap();
    assert!(!s.sized.deadlock);
}

#[test]
fn kws_sizing_is_stable() {
    let kws = optimized(ZooId::KwsMlp, &PassId::DEFAULT);
    let p = map_to_pipeline(&kws, Flow::Finn).unwrap();
    let s = size_fifos(&p, 2, Flow::Finn).unwrap();
    assert_eq!(s.sized.total_cycles, s.unbounded.total_cycles);
    assert!(s.plan.depths.values().all(|d| d.is_power_of_two()));
    let clk = Clock::mhz(100.0).unwrap();
    let a = bench_median(&p, &s.plan, 5, 0, clk).unwrap();
    assert_eq!(a, bench_median(&p, &s.plan, 5, 0, clk).unwrap());
}

#[test]
fn cnv_stage_count() {
    let cnv = optimized(ZooId::CnvW1A1, &PassId::DEFAULT);
    let count = |f: fn(&Op) -> bool| cnv.nodes.iter().filter(|n| f(&n.op)).count();
    let expected = count(|o| o.is_linear()) + count(|o| matches!(o, Op::MultiThreshold(_))) + count(|o| matches!(o, Op::MaxPool2D(_) | Op::AvgPool2D(_))) + 1;
    let p = map_to_pipeline(&cnv, Flow::Finn).unwrap();
    assert_eq!(p.stages.len(), expected);
}

#[test]
fn ic_penultimate_conv_dominates() {
    let mut ic = optimized(ZooId::IcCnn, &PassId::DEFAULT);
    apply_sequential_reuse(&mut ic).unwrap();
    let p = map_to_pipeline(&ic, Flow::Hls4ml).unwrap();
    let convs: Vec<&Stage> = p.stages.iter().filter(|s| s.op == "Conv2D").collect();
    let pen = convs[convs.len() - 2];
    for s in &p.stages {
        if s.name != pen.name {
            assert!(pen.cycles_per_inference() > s.cycles_per_inference(), "{} vs {}", pen.name, s.name);
        }
    }
}

#[test]
fn merge_relu_shrinks_ic_pipeline() {
    let without: Vec<PassId> = PassId::DEFAULT.into_iter().filter(|p| *p != PassId::MergeRelu).collect();
    let before = map_to_pipeline(&optimized(ZooId::IcCnn, &without), Flow::Hls4ml).unwrap();
    let after = map_to_pipeline(&optimized(ZooId::IcCnn, &PassId::DEFAULT), Flow::Hls4ml).unwrap();
    assert!(after.stages.len() < before.stages.len());
    let bits = |p: &Pipeline| fifo_memory_bits(&size_fifos(p, 1, Flow::Hls4ml).unwrap().plan, p).unwrap();
    assert!(bits(&after) < bits(&before));
}

#[test]
fn random_pipelines_size_soundly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        let p = random_pipeline(&mut rng, 12, Flow::Hls4ml);
        p.validate().unwrap();
        let s = size_fifos(&p, 2, Flow::Hls4ml).unwrap();
        for (e, d) in &s.plan.depths {
            assert_eq!(*d, s.unbounded.max_occupancy[e] + 1);
            assert!(s.sized.max_occupancy[e] <= *d);
        }
    }
}

#[test]
fn plan_json_round_trip() {
    let p = fork_join(4);
    let plan = size_fifos(&p, 1, Flow::Finn).unwrap().plan;
    assert_eq!(FifoPlan::from_json(&plan.to_json()).unwrap(), plan);
    assert!(plan.to_json().contains("\"mode\": \"finn\""));
    let r = simulate(&p, &plan, 1, None).unwrap();
    let rep = SimReport::new(&p, &plan, &r, Clock::mhz(100.0).unwrap()).unwrap();
    assert_eq!(rep.fifos.len(), 3);
    assert!(rep.to_string().contains("fork->join"));
}
