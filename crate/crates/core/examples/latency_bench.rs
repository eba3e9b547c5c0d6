// SPDX-License-Identifier: Apache-2.0

//! Image-classification CNN with one multiplier per layer: per-stage busy
//! cycles, simulated latency and the median of five bench samples.

use qflow::dataflow::{apply_sequential_reuse, bench_median, latency, map_to_pipeline, size_fifos, Clock};
use qflow::ir::Flow;
use qflow::passes::{remove_softmax, run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = remove_softmax(&build(&ZooSpec::new(ZooId::IcCnn))?)?.0;
    let (mut opt, _) = run_pipeline(&m, &PassId::DEFAULT)?;
    apply_sequential_reuse(&mut opt)?;
    let p = map_to_pipeline(&opt, Flow::Hls4ml)?;
    for s in &p.stages {
        println!("{:<8} {:<16} {:>12} cycles", s.name, s.op, s.cycles_per_inference());
    }
    let clk = Clock::mhz(100.0)?;
    let sizing = size_fifos(&p, 1, Flow::Hls4ml)?;
    let l = latency(&sizing.sized, clk)?;
    println!("latency: {:.3} ms per inference", l.seconds_per_inference * 1e3);
    let median = bench_median(&p, &sizing.plan, 5, 0, clk)?;
    println!("bench median: {:.3} ms", median * 1e3);
    Ok(())
}
