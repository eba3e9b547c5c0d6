// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::Serialize;

use super::{fifo_memory_bits, latency, Clock, DataflowError, FifoPlan, Pipeline, SimResult};
use crate::ir::Flow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FifoReport {
    pub edge: String,
    pub max_occupancy: u64,
    pub depth: u64,
    pub bits: u64,
}

/// Sizing and simulation summary of one pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mode: Flow,
    pub clock_mhz: f64,
    pub stages: usize,
    pub n_inferences: u64,
    pub total_cycles: u64,
    pub cycles_per_inference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds_per_inference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initiation_interval_cycles: Option<f64>,
    pub throughput_tokens_per_cycle: f64,
    pub fifo_memory_bits: u64,
    pub deadlock: bool,
    pub blocked: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench_median_seconds: Option<f64>,
    pub fifos: Vec<FifoReport>,
}

impl SimReport {
    pub fn new(p: &Pipeline, plan: &FifoPlan, r: &SimResult, clk: Clock) -> Result<Self, DataflowError> {
        let fifos = p
            .fifos()
            .map(|e| {
                let depth = plan.depths[&e.name];
                FifoReport {
                    edge: e.name.clone(),
                    max_occupancy: r.max_occupancy.get(&e.name).copied().unwrap_or(0),
                    depth,
                    bits: depth * e.token_bits,
                }
            })
            .collect();
        let lat = latency(r, clk).ok();
        Ok(SimReport {
            mode: plan.mode,
            clock_mhz: clk.frequency_hz / 1e6,
            stages: p.stages.len(),
            n_inferences: r.n_inferences,
            total_cycles: r.total_cycles,
            cycles_per_inference: r.total_cycles as f64 / r.n_inferences as f64,
            seconds_per_inference: lat.map(|l| l.seconds_per_inference),
            initiation_interval_cycles: lat.map(|l| l.initiation_interval_cycles),
            throughput_tokens_per_cycle: r.throughput_tokens_per_cycle,
            fifo_memory_bits: fifo_memory_bits(plan, p)?,
            deadlock: r.deadlock,
            blocked: r.blocked.clone(),
            bench_median_seconds: None,
            fifos,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode: {}", self.mode)?;
        writeln!(f, "stages: {}", self.stages)?;
        writeln!(f, "inferences: {}", self.n_inferences)?;
        writeln!(f, "total_cycles: {}", self.total_cycles)?;
        writeln!(f, "cycles_per_inference: {}", self.cycles_per_inference)?;
        if let Some(s) = self.seconds_per_inference {
            writeln!(f, "latency: {:.3} us at {} MHz", s * 1e6, self.clock_mhz)?;
        }
        if let Some(ii) = self.initiation_interval_cycles {
            writeln!(f, "initiation_interval_cycles: {ii}")?;
        }
        if let Some(s) = self.bench_median_seconds {
            writeln!(f, "bench_median: {:.3} us", s * 1e6)?;
        }
        writeln!(f, "fifo_memory_bits: {}", self.fifo_memory_bits)?;
        if self.deadlock {
            writeln!(f, "DEADLOCK; blocked: {}", self.blocked.join(", "))?;
        }
        writeln!(f, "{:<40} {:>8} {:>8} {:>10}", "edge", "max_occ", "depth", "bits")?;
        for e in &self.fifos {
            writeln!(f, "{:<40} {:>8} {:>8} {:>10}", e.edge, e.max_occupancy, e.depth, e.bits)?;
        }
        Ok(())
    }
}
