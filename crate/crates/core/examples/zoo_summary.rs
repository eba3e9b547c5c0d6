// SPDX-License-Identifier: Apache-2.0

//! Builds the four reference models and prints their size and cost.

use qflow::cost::model_cost;
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<10} {:>6} {:>10} {:>10} {:>14} {:>12}", "model", "nodes", "params", "bn_params", "bops", "wm_bits");
    for id in ZooId::ALL {
        let m = build(&ZooSpec::new(id))?;
        let pc = m.count_params();
        let cost = model_cost(&m, None)?;
        println!("{:<10} {:>6} {:>10} {:>10} {:>14.0} {:>12}", id, m.nodes.len(), pc.params, pc.bn_params, cost.bops, cost.wm_bits);
    }
    Ok(())
}
