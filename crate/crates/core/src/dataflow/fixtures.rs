// SPDX-License-Identifier: Apache-2.0

//! Hand-built pipelines for tests, examples and benchmarks.

use rand::Rng;

use super::{Pipeline, StageSpec};
use crate::ir::Flow;

/// `n` unit-rate stages in a line, each firing `tokens` times.
pub fn chain(n: usize, tokens: u64, mode: Flow) -> Pipeline {
    let mut p = Pipeline::new(mode);
    let mut prev = None;
    for i in 0..n {
        let s = p.add_stage(StageSpec::new(&format!("s{i}"), 1, 1, tokens));
        match prev {
            None => p.add_source(s, 8),
            Some(q) => p.connect(q, s, 8),
        };
        prev = Some(s);
    }
    if let Some(q) = prev {
        p.add_sink(q, 8);
    }
    p
}

/// Reconvergent fork-join. `fork` emits `branch` tokens one at a time to
/// both `join` directly (edge `fork->join`) and to `long`, which needs all
/// `branch` tokens before emitting any. The join pairs tokens, so the
/// direct edge must hold `branch` tokens or the fork blocks forever.
pub fn fork_join(branch: u64) -> Pipeline {
    let mut p = Pipeline::new(Flow::Hls4ml);
    let fork = p.add_stage(StageSpec::new("fork", 1, 1, branch));
    let long = p.add_stage(StageSpec::new("long", branch, branch, 1));
    let join = p.add_stage(StageSpec::new("join", 1, 1, branch));
    p.add_source(fork, 8);
    p.connect(fork, join, 8);
    p.connect(fork, long, 8);
    p.connect(long, join, 8);
    p.add_sink(join, 8);
    p
}

/// Random chain/fork/join pipeline with 2 to `max_stages` stages. Every
/// stream carries 4, 8 or 16 tokens per inference; joins only merge streams
/// of equal length so token conservation holds by construction.
pub fn random_pipeline(rng: &mut impl Rng, max_stages: usize, mode: Flow) -> Pipeline {
    const TOKENS: [u64; 3] = [4, 8, 16];
    let n = rng.gen_range(2..=max_stages.max(2));
    let mut p = Pipeline::new(mode);
    let mut out_tokens: Vec<u64> = Vec::with_capacity(n);
    let mut readers = vec![0usize; n];
    for i in 0..n {
        let mut preds: Vec<usize> = Vec::new();
        if i > 0 {
            let first = rng.gen_range(0..i);
            preds.push(first);
            if i > 1 && rng.gen_bool(0.3) {
                let second = rng.gen_range(0..i);
                if second != first && out_tokens[second] == out_tokens[first] {
                    preds.push(second);
                }
            }
        }
        let t_in = preds.first().map_or(TOKENS[rng.gen_range(0..3)], |&q| out_tokens[q]);
        let t_out = TOKENS[rng.gen_range(0..3)];
        let g = num_integer::gcd(t_in, t_out);
        let spec = StageSpec::new(&format!("s{i}"), t_in / g, t_out / g, g)
            .cycles(rng.gen_range(1..=4))
            .latency(rng.gen_range(0..=3));
        let s = p.add_stage(spec);
        if preds.is_empty() {
            p.add_source(s, 8);
        }
        for &q in &preds {
            p.connect(q, s, 8);
            readers[q] += 1;
        }
        out_tokens.push(t_out);
    }
    for (i, &r) in readers.iter().enumerate() {
        if r == 0 {
            p.add_sink(i, 8);
        }
    }
    p
}
