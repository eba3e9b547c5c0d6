// SPDX-License-Identifier: Apache-2.0

//! Applies the default pass pipeline to a zoo model and prints each pass
//! report. Usage: `cargo run --example optimize_pipeline -- cnv-w1a1`.

use qflow::passes::{remove_softmax, run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let id: ZooId = std::env::args().nth(1).as_deref().unwrap_or("cnv-w1a1").parse()?;
    let mut m = build(&ZooSpec::new(id))?;
    if m.nodes.iter().any(|n| matches!(n.op, qflow::ir::Op::Softmax)) {
        m = remove_softmax(&m)?.0;
    }
    let (opt, reports) = run_pipeline(&m, &PassId::DEFAULT)?;
    for r in &reports {
        println!("{:<14} removed {:>2} added {:>2} rewritten {:>2}  nodes {} -> {}", r.pass, r.removed, r.added, r.rewritten, r.nodes_before, r.nodes_after);
    }
    println!("float edges left: {}", opt.float_edges()?.len());
    Ok(())
}
