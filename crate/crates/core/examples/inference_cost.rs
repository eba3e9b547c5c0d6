// SPDX-License-Identifier: Apache-2.0

//! Compares the inference cost of a half-width CNV against the full model.

use num_rational::Ratio;
use qflow::cost::model_cost;
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = build(&ZooSpec::new(ZooId::CnvW1A1))?;
    let half = build(&ZooSpec::scaled(ZooId::CnvW1A1, Ratio::new(1, 2)))?;
    let report = model_cost(&half, Some(&full))?;
    print!("{report}");
    Ok(())
}
