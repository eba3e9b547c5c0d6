// SPDX-License-Identifier: Apache-2.0

//! Sweeps the short-branch depth of a reconvergent fork-join and reports
//! where it stops deadlocking.

use qflow::dataflow::fixtures::fork_join;
use qflow::dataflow::{simulate, FifoPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = fork_join(10);
    for depth in 1..=12 {
        let mut plan = FifoPlan::uniform(&p, 10);
        plan.depths.insert("fork->join".into(), depth);
        let r = simulate(&p, &plan, 1, None)?;
        if r.deadlock {
            println!("depth {depth:>2}: deadlock, blocked {:?}", r.blocked);
        } else {
            println!("depth {depth:>2}: {} cycles", r.total_cycles);
        }
    }
    Ok(())
}
