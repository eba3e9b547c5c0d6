// SPDX-License-Identifier: Apache-2.0

//! Randomized equivalence check of two models on shared inputs.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{argmax, random_inputs, run, ExecError, ExecValue, Mode};
use crate::ir::{serialize_tensor_map, Model};

/// How closely two models must agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tolerance {
    /// Every output value identical.
    Exact,
    /// `|a - b| <= 1e-6 * max(|a|, |b|)` elementwise.
    Relative,
    /// Same argmax on every output (lowest index on ties).
    Argmax,
}

pub const RELATIVE_TOLERANCE: f64 = 1e-6;

impl Tolerance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tolerance::Exact => "exact",
            Tolerance::Relative => "relative",
            Tolerance::Argmax => "argmax",
        }
    }
}

impl FromStr for Tolerance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Tolerance::Exact),
            "relative" | "1e-6" => Ok(Tolerance::Relative),
            "argmax" => Ok(Tolerance::Argmax),
            _ => Err(format!("unknown tolerance `{s}` (exact|relative|argmax)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("input signatures differ: {0}")]
    Incompatible(String),
    #[error("outputs differ: {0}")]
    OutputMismatch(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub sample: usize,
    /// Inputs in the tensor-map file encoding.
    pub inputs: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub tolerance: Tolerance,
    pub samples: usize,
    pub seed: u64,
    pub mode_a: &'static str,
    pub mode_b: &'static str,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub argmax_agreement: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes") + "\n"
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", if self.passed { "equivalent" } else { "MISMATCH" })?;
        writeln!(f, "tolerance: {}", self.tolerance.as_str())?;
        writeln!(f, "samples: {} (seed {})", self.samples, self.seed)?;
        writeln!(f, "modes: {} vs {}", self.mode_a, self.mode_b)?;
        writeln!(f, "max_abs_deviation: {}", self.max_abs_deviation)?;
        writeln!(f, "max_rel_deviation: {}", self.max_rel_deviation)?;
        writeln!(f, "argmax_agreement: {}/{}", self.argmax_agreement, self.samples)?;
        if let Some(c) = &self.counterexample {
            writeln!(f, "counterexample (sample {}):", c.sample)?;
            writeln!(f, "{}", serde_json::to_string_pretty(&c.inputs).expect("json value"))?;
        }
        Ok(())
    }
}

/// Exact integer evaluation where the model allows it, float otherwise.
fn run_best(m: &Model, inputs: &ExecValue) -> Result<(ExecValue, &'static str), ExecError> {
    match run(m, inputs, Mode::ExactInt) {
        Ok(v) => Ok((v, "exact")),
        Err(ExecError::Dtype { .. }) => Ok((run(m, inputs, Mode::Float)?, "float")),
        Err(e) => Err(e),
    }
}

fn signature(m: &Model) -> Vec<String> {
    m.inputs.iter().map(|v| format!("{}{:?}:{}", v.name, v.shape, v.dtype)).collect()
}

/// Runs both models on `samples` seeded random inputs and compares their
/// outputs (matched by position) under `tol`. Stops at the first sample
/// outside tolerance and records its inputs.
pub fn verify(a: &Model, b: &Model, samples: usize, seed: u64, tol: Tolerance) -> Result<Verdict, VerifyError> {
    let (sa, sb) = (signature(a), signature(b));
    if sa != sb {
        return Err(VerifyError::Incompatible(format!("[{}] vs [{}]", sa.join(", "), sb.join(", "))));
    }
    if a.outputs.len() != b.outputs.len() {
        return Err(VerifyError::OutputMismatch(format!("{} vs {} outputs", a.outputs.len(), b.outputs.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Verdict {
        tolerance: tol,
        samples: 0,
        seed,
        mode_a: "float",
        mode_b: "float",
        max_abs_deviation: 0.0,
        max_rel_deviation: 0.0,
        argmax_agreement: 0,
        passed: true,
        counterexample: None,
    };
    for sample in 0..samples {
        let inputs = random_inputs(a, &mut rng);
        let (oa, ma) = run_best(a, &inputs)?;
        let (ob, mb) = run_best(b, &inputs)?;
        (v.mode_a, v.mode_b) = (ma, mb);
        let mut same_argmax = true;
        let mut within = true;
        for (na, nb) in a.outputs.iter().zip(&b.outputs) {
            let (x, y) = (oa[na].to_f64(), ob[nb].to_f64());
            if x.len() != y.len() {
                return Err(VerifyError::OutputMismatch(format!("`{na}` has {} values, `{nb}` has {}", x.len(), y.len())));
            }
            for (p, q) in x.iter().zip(&y) {
                let abs = (p - q).abs();
                let scale = p.abs().max(q.abs());
                let rel = if abs == 0.0 { 0.0 } else { abs / scale };
                v.max_abs_deviation = v.max_abs_deviation.max(abs);
                v.max_rel_deviation = v.max_rel_deviation.max(rel);
                within &= match tol {
                    Tolerance::Exact => abs == 0.0,
                    Tolerance::Relative => rel <= RELATIVE_TOLERANCE,
                    Tolerance::Argmax => true,
                };
            }
            if !x.is_empty() {
                same_argmax &= argmax(&x)? == argmax(&y)?;
            }
        }
        v.samples += 1;
        v.argmax_agreement += same_argmax as usize;
        if tol == Tolerance::Argmax {
            within = same_argmax;
        }
        if !within {
            v.passed = false;
            let text = serialize_tensor_map(&inputs);
            v.counterexample = Some(Counterexample {
                sample,
                inputs: serde_json::from_str(&text).expect("tensor map is JSON"),
            });
            break;
        }
    }
    Ok(v)
}
