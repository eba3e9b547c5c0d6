// SPDX-License-Identifier: Apache-2.0

//! Runs the keyword-spotting MLP on random inputs, first through the float
//! reference and then, after optimization, with exact integer arithmetic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qflow::exec::{random_inputs, run, Mode};
use qflow::passes::{run_pipeline, PassId};
use qflow::zoo::{build, ZooId, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = build(&ZooSpec::new(ZooId::KwsMlp))?;
    let (opt, _) = run_pipeline(&m, &PassId::DEFAULT)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agree = 0;
    for i in 0..10 {
        let x = random_inputs(&m, &mut rng);
        let a = run(&m, &x, Mode::Float)?["argmax"].to_f64()[0];
        let b = run(&opt, &x, Mode::ExactInt)?["argmax"].to_f64()[0];
        println!("sample {i}: float class {a}, integer class {b}");
        agree += (a == b) as usize;
    }
    println!("{agree}/10 agree");
    Ok(())
}
