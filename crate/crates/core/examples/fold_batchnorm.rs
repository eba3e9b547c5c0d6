// SPDX-License-Identifier: Apache-2.0

//! Folds a BatchNorm into the preceding Dense layer and compares outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qflow::exec::{random_inputs, run, Mode};
use qflow::fixtures::linear_bn;
use qflow::passes::fold_bn;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = linear_bn(&mut rng, false);
    let (folded, report) = fold_bn(&m)?;
    println!("nodes {} -> {} ({} removed)", report.nodes_before, report.nodes_after, report.removed);
    let x = random_inputs(&m, &mut rng);
    let a = run(&m, &x, Mode::Float)?["y"].to_f64();
    let b = run(&folded, &x, Mode::Float)?["y"].to_f64();
    for (i, (p, q)) in a.iter().zip(&b).enumerate() {
        println!("y[{i}]: {p:>12.8} vs {q:>12.8}  diff {:.1e}", (p - q).abs());
    }
    Ok(())
}
