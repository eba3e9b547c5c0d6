// SPDX-License-Identifier: Apache-2.0

//! Cycle-level token simulation, FIFO sizing and latency measurement.
//!
//! Within a cycle, deliveries due at that cycle land first, then stages are
//! visited consumers-first (reverse topological order), so a slot freed by
//! a pop is usable by the producer in the same cycle. A stage may start a
//! firing when it is idle, every input holds `consume` tokens and every
//! output FIFO can take `produce` more tokens counting those still in
//! flight. Inputs are popped at the start; outputs land
//! `cycles_per_firing + pipeline_latency` cycles later. The loop jumps
//! between event times, which is equivalent to stepping every cycle.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use super::{DataflowError, FifoPlan, Pipeline};
use crate::ir::Flow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub n_inferences: u64,
    pub total_cycles: u64,
    /// Largest `tokens held + tokens in flight + produce - 1` seen when a
    /// producer started a firing. Depth `max_occupancy + 1` is the least
    /// depth that never blocks that producer.
    pub max_occupancy: BTreeMap<String, u64>,
    pub stall_cycles: BTreeMap<String, u64>,
    pub deadlock: bool,
    pub blocked: Vec<String>,
    /// Cycle at which each inference's last output token arrived.
    pub completions: Vec<u64>,
    pub throughput_tokens_per_cycle: f64,
}

struct StageState {
    done: u64,
    total: u64,
    busy_until: u64,
}

/// Runs `n_inferences` back-to-back inferences. `watchdog` defaults to
/// [`Pipeline::default_watchdog`].
pub fn simulate(p: &Pipeline, plan: &FifoPlan, n_inferences: u64, watchdog: Option<u64>) -> Result<SimResult, DataflowError> {
    p.validate()?;
    if n_inferences == 0 {
        return Err(DataflowError::Invalid("n_inferences must be at least 1".into()));
    }
    let ne = p.edges.len();
    let mut depth = vec![u64::MAX; ne];
    for (i, e) in p.edges.iter().enumerate() {
        if e.is_fifo() {
            match plan.depths.get(&e.name) {
                Some(&d) if d >= 1 => depth[i] = d,
                _ => return Err(DataflowError::PlanIncomplete(e.name.clone())),
            }
        }
    }
    let watchdog = watchdog.unwrap_or_else(|| p.default_watchdog());
    let mut order = p.topo_order()?;
    order.reverse();

    // Source edges hold every token up front.
    let mut occ: Vec<u64> = p.edges.iter().map(|e| if e.from.is_none() { e.tokens_per_inference * n_inferences } else { 0 }).collect();
    let mut inflight = vec![0u64; ne];
    let mut max_occ = vec![0u64; ne];
    let mut sink_received = vec![0u64; ne];
    let mut stall = vec![0u64; p.stages.len()];
    let mut st: Vec<StageState> = p
        .stages
        .iter()
        .map(|s| StageState { done: 0, total: s.firings_per_inference * n_inferences, busy_until: 0 })
        .collect();
    let mut events: BinaryHeap<Reverse<(u64, usize, u64)>> = BinaryHeap::new();
    let sinks: Vec<usize> = (0..ne).filter(|&i| p.edges[i].to.is_none()).collect();
    let mut completions = Vec::new();

    let mut t = 0u64;
    let mut last_progress = 0u64;
    let mut last_delivery = 0u64;
    loop {
        while let Some(&Reverse((at, e, n))) = events.peek() {
            if at > t {
                break;
            }
            events.pop();
            inflight[e] -= n;
            occ[e] += n;
            if p.edges[e].to.is_none() {
                sink_received[e] += n;
            }
            last_delivery = last_delivery.max(at);
            last_progress = t;
        }
        // Record inference completions at sinks.
        while (completions.len() as u64) < n_inferences
            && !sinks.is_empty()
            && sinks.iter().all(|&e| sink_received[e] >= (completions.len() as u64 + 1) * p.edges[e].tokens_per_inference)
        {
            completions.push(t);
        }

        let mut idle_blocked = Vec::new();
        for &s in &order {
            let stage = &p.stages[s];
            let ss = &st[s];
            if ss.done == ss.total || ss.busy_until > t {
                continue;
            }
            let inputs_ready = stage.inputs.iter().all(|&e| occ[e] >= stage.consume);
            let outputs_free = stage.outputs.iter().all(|&e| {
                !p.edges[e].is_fifo() || occ[e] + inflight[e] + stage.produce <= depth[e]
            });
            if !(inputs_ready && outputs_free) {
                idle_blocked.push(s);
                continue;
            }
            for &e in &stage.inputs {
                occ[e] -= stage.consume;
            }
            let arrive = t + stage.cycles_per_firing + stage.pipeline_latency;
            for &e in &stage.outputs {
                if p.edges[e].is_fifo() {
                    max_occ[e] = max_occ[e].max(occ[e] + inflight[e] + stage.produce - 1);
                }
                inflight[e] += stage.produce;
                events.push(Reverse((arrive, e, stage.produce)));
            }
            let ss = &mut st[s];
            ss.done += 1;
            ss.busy_until = t + stage.cycles_per_firing;
            last_progress = t;
        }

        let finished = st.iter().all(|s| s.done == s.total) && events.is_empty();
        if finished {
            break;
        }
        let next_event = events.peek().map(|Reverse((at, _, _))| *at);
        let next_free = st.iter().filter(|s| s.done < s.total && s.busy_until > t).map(|s| s.busy_until).min();
        let next = match (next_event, next_free) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => match a.or(b) {
                Some(x) => x,
                None => {
                    // Nothing can ever change: deadlock.
                    let blocked = (0..p.stages.len()).filter(|&s| st[s].done < st[s].total).map(|s| p.stages[s].name.clone()).collect();
                    for &s in &idle_blocked {
                        stall[s] += watchdog;
                    }
                    return Ok(finish(p, n_inferences, last_progress + watchdog, max_occ, stall, true, blocked, completions, &sink_received));
                }
            },
        };
        if next - last_progress > watchdog {
            let blocked = (0..p.stages.len()).filter(|&s| st[s].done < st[s].total).map(|s| p.stages[s].name.clone()).collect();
            return Ok(finish(p, n_inferences, last_progress + watchdog, max_occ, stall, true, blocked, completions, &sink_received));
        }
        for &s in &idle_blocked {
            stall[s] += next - t;
        }
        t = next;
    }
    Ok(finish(p, n_inferences, last_delivery, max_occ, stall, false, vec![], completions, &sink_received))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &Pipeline,
    n: u64,
    total: u64,
    max_occ: Vec<u64>,
    stall: Vec<u64>,
    deadlock: bool,
    blocked: Vec<String>,
    completions: Vec<u64>,
    sink_received: &[u64],
) -> SimResult {
    let max_occupancy = p.edges.iter().enumerate().filter(|(_, e)| e.is_fifo()).map(|(i, e)| (e.name.clone(), max_occ[i])).collect();
    let stall_cycles = p.stages.iter().zip(stall).map(|(s, c)| (s.name.clone(), c)).collect();
    let tokens: u64 = sink_received.iter().sum();
    SimResult {
        n_inferences: n,
        total_cycles: total,
        max_occupancy,
        stall_cycles,
        deadlock,
        blocked,
        completions,
        throughput_tokens_per_cycle: if total == 0 { 0.0 } else { tokens as f64 / total as f64 },
    }
}

/// Outcome of the three sizing phases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sizing {
    pub plan: FifoPlan,
    pub unbounded: SimResult,
    pub sized: SimResult,
}

/// Least depth allowed for `max_occupancy` in each flow. FINN depths are
/// powers of two and at least 2.
pub fn depth_for(mode: Flow, max_occupancy: u64) -> u64 {
    let d = max_occupancy + 1;
    match mode {
        Flow::Hls4ml => d,
        Flow::Finn => d.next_power_of_two().max(2),
    }
}

/// Simulates with depths that never block, sets each depth from the
/// observed maximum occupancy, then re-simulates to confirm the cycle count
/// is unchanged.
pub fn size_fifos(p: &Pipeline, n_inferences: u64, mode: Flow) -> Result<Sizing, DataflowError> {
    // A FIFO can never hold more than all tokens of the run.
    let unbounded_plan = FifoPlan {
        mode,
        depths: p.fifos().map(|e| (e.name.clone(), e.tokens_per_inference * n_inferences.max(1) + 1)).collect(),
    };
    let unbounded = simulate(p, &unbounded_plan, n_inferences, None)?;
    if unbounded.deadlock {
        return Err(DataflowError::DeadlockedResult(unbounded.blocked));
    }
    let plan = FifoPlan {
        mode,
        depths: unbounded.max_occupancy.iter().map(|(e, &o)| (e.clone(), depth_for(mode, o))).collect(),
    };
    let sized = simulate(p, &plan, n_inferences, None)?;
    if sized.deadlock || sized.total_cycles != unbounded.total_cycles {
        return Err(DataflowError::SizingUnstable { unbounded: unbounded.total_cycles, sized: sized.total_cycles });
    }
    Ok(Sizing { plan, unbounded, sized })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub frequency_hz: f64,
}

impl Clock {
    pub fn mhz(mhz: f64) -> Result<Self, DataflowError> {
        if mhz.is_finite() && mhz > 0.0 {
            Ok(Clock { frequency_hz: mhz * 1e6 })
        } else {
            Err(DataflowError::Invalid(format!("clock must be positive, got {mhz} MHz")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Latency {
    pub cycles_per_inference: f64,
    pub seconds_per_inference: f64,
    /// Cycles between consecutive completions in steady state; equals the
    /// single-inference latency when only one inference ran.
    pub initiation_interval_cycles: f64,
    pub inferences_per_second: f64,
}

pub fn latency(r: &SimResult, clk: Clock) -> Result<Latency, DataflowError> {
    if r.deadlock {
        return Err(DataflowError::DeadlockedResult(r.blocked.clone()));
    }
    let cycles = r.total_cycles as f64 / r.n_inferences as f64;
    let ii = match (r.completions.first(), r.completions.last()) {
        (Some(a), Some(b)) if r.completions.len() >= 2 => (b - a) as f64 / (r.completions.len() - 1) as f64,
        _ => cycles,
    };
    Ok(Latency {
        cycles_per_inference: cycles,
        seconds_per_inference: cycles / clk.frequency_hz,
        initiation_interval_cycles: ii,
        inferences_per_second: if ii > 0.0 { clk.frequency_hz / ii } else { f64::INFINITY },
    })
}

/// Median per-inference latency in seconds over `samples` samples. Each
/// sample runs single inferences until at least `min_window_cycles` of
/// simulated time have accumulated and averages them.
pub fn bench_median(p: &Pipeline, plan: &FifoPlan, samples: u32, min_window_cycles: u64, clk: Clock) -> Result<f64, DataflowError> {
    if samples == 0 {
        return Err(DataflowError::Invalid("samples must be at least 1".into()));
    }
    let mut per_sample = Vec::with_capacity(samples as usize);
    for _ in 0..samples {
        let (mut elapsed, mut count) = (0u64, 0u64);
        while count == 0 || elapsed < min_window_cycles {
            let r = simulate(p, plan, 1, None)?;
            latency(&r, clk)?;
            if r.total_cycles == 0 {
                count += 1;
                break;
            }
            elapsed += r.total_cycles;
            count += 1;
        }
        per_sample.push(elapsed as f64 / count as f64 / clk.frequency_hz);
    }
    per_sample.sort_by(|a, b| a.total_cmp(b));
    let n = per_sample.len();
    Ok(if n % 2 == 1 { per_sample[n / 2] } else { (per_sample[n / 2 - 1] + per_sample[n / 2]) / 2.0 })
}

/// Total buffered bits: depth times token width over every FIFO.
pub fn fifo_memory_bits(plan: &FifoPlan, p: &Pipeline) -> Result<u64, DataflowError> {
    p.fifos()
        .map(|e| match plan.depths.get(&e.name) {
            Some(&d) => Ok(d * e.token_bits),
            None => Err(DataflowError::PlanIncomplete(e.name.clone())),
        })
        .sum()
}
