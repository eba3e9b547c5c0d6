// SPDX-License-Identifier: Apache-2.0

//! Checks that the optimized anomaly-detection autoencoder matches the
//! original on seeded random inputs.

use qflow::exec::{verify, Tolerance};
use qflow::passes::{run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build(&ZooSpec::new(ZooId::AdAe))?;
    let (opt, _) = run_pipeline(&m, &PassId::DEFAULT)?;
    for tol in [Tolerance::Exact, Tolerance::Relative, Tolerance::Argmax] {
        let v = verify(&m, &opt, 50, 0, tol)?;
        println!("{:<8} passed {} (max abs deviation {})", tol.as_str(), v.passed, v.max_abs_deviation);
    }
    Ok(())
}
