// SPDX-License-Identifier: Apache-2.0

//! Streamlines Dense -> BatchNorm -> ReLU -> Quant into an integer Dense and
//! a MultiThreshold, prints the thresholds and checks every input value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qflow::exec::{run, ExecValue, Mode};
use qflow::fixtures::toy_layer;
use qflow::ir::{DataType, Tensor};
use qflow::passes::streamline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = toy_layer(&mut ChaCha8Rng::seed_from_u64(3), 3);
    let (s, report) = streamline(&m)?;
    println!("nodes {} -> {}", report.nodes_before, report.nodes_after);
    for n in &s.nodes {
        println!("  {} ({})", n.name, n.op.kind());
    }
    let t = &s.initializers[&s.node("q").unwrap().inputs[1]];
    let levels = t.shape[1];
    for (c, row) in t.mantissas().unwrap().chunks(levels).enumerate() {
        println!("channel {c} thresholds: {row:?}");
    }
    let mut mismatches = 0;
    for x in -128..=127 {
        let inp: ExecValue = [("x".to_string(), Tensor::int(vec![1, 1], DataType::int(8), vec![x]))].into();
        let want = run(&m, &inp, Mode::Float)?["y"].to_f64();
        let got = run(&s, &inp, Mode::ExactInt)?["y"].to_f64();
        mismatches += (want != got) as usize;
    }
    println!("256 inputs checked, {mismatches} mismatches");
    Ok(())
}
