// SPDX-License-Identifier: Apache-2.0

//! Shows the accumulator type assigned to every linear layer of the
//! optimized CNV model.

use qflow::passes::{run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build(&ZooSpec::new(ZooId::CnvW1A1))?;
    let (opt, _) = run_pipeline(&m, &PassId::DEFAULT)?;
    let types = opt.types()?;
    for n in opt.nodes.iter().filter(|n| n.op.is_linear()) {
        let acc = n.op.accumulator().map_or("unset".to_string(), |d| d.to_string());
        println!("{:<8} in {:<8} weights {:<8} accumulator {acc}", n.name, types[&n.inputs[0]].dtype, types[&n.inputs[1]].dtype);
    }
    Ok(())
}
