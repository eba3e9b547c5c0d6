// SPDX-License-Identifier: Apache-2.0

//! Maps the optimized KWS model onto a streaming pipeline and sizes its
//! FIFOs in both flows.

use qflow::dataflow::{map_to_pipeline, size_fifos, Clock, SimReport};
use qflow::ir::Flow;
use qflow::passes::{run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build(&ZooSpec::new(ZooId::KwsMlp))?;
    let (opt, _) = run_pipeline(&m, &PassId::DEFAULT)?;
    for mode in [Flow::Hls4ml, Flow::Finn] {
        let p = map_to_pipeline(&opt, mode)?;
        let sizing = size_fifos(&p, 2, mode)?;
        let report = SimReport::new(&p, &sizing.plan, &sizing.sized, Clock::mhz(100.0)?)?;
        println!("{report}");
    }
    Ok(())
}
