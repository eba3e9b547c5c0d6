// SPDX-License-Identifier: Apache-2.0

//! Streaming dataflow model of a network.
//!
//! Every node becomes a stage that repeatedly fires: it pops `consume`
//! tokens from each input FIFO and, `cycles_per_firing` cycles later,
//! `produce` tokens become visible on each output FIFO. A token is one pixel
//! vector of a `[1, C, H, W]` tensor or the whole vector of a flat tensor.
//! Graph inputs and outputs are external endpoints that never block.

pub mod fixtures;
mod report;
mod sim;

use std::collections::{BTreeMap, HashMap};

pub use report::{FifoReport, SimReport};
pub use sim::{
    bench_median, fifo_memory_bits, latency, simulate, size_fifos, Clock, Latency, SimResult, Sizing,
};

use num_integer::Integer;

use crate::ir::{Flow, IrError, Model, Op, OpKind, TensorInfo};

#[derive(Debug, thiserror::Error)]
pub enum DataflowError {
    #[error("node `{node}` ({op}) has no streaming implementation; remove it first")]
    UnmappableOp { node: String, op: OpKind },
    #[error("FIFO plan has no valid depth for edge `{0}`")]
    PlanIncomplete(String),
    #[error("sized plan changes total cycles: {unbounded} unbounded vs {sized} sized")]
    SizingUnstable { unbounded: u64, sized: u64 },
    #[error("result is deadlocked; blocked stages: {}", .0.join(", "))]
    DeadlockedResult(Vec<String>),
    #[error("invalid pipeline: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub op: String,
    pub consume: u64,
    pub produce: u64,
    pub firings_per_inference: u64,
    pub cycles_per_firing: u64,
    pub pipeline_latency: u64,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl Stage {
    /// Busy cycles per inference.
    pub fn cycles_per_inference(&self) -> u64 {
        self.firings_per_inference * self.cycles_per_firing
    }
}

/// Stream between two stages. `from == None` is a graph input and
/// `to == None` a graph output; only edges with both ends are FIFOs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub name: String,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub tokens_per_inference: u64,
    pub token_bits: u64,
}

impl Edge {
    pub fn is_fifo(&self) -> bool {
        self.from.is_some() && self.to.is_some()
    }
}

/// Rates and timing of a stage, used when building pipelines by hand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub consume: u64,
    pub produce: u64,
    pub firings: u64,
    pub cycles_per_firing: u64,
    pub pipeline_latency: u64,
}

impl StageSpec {
    pub fn new(name: &str, consume: u64, produce: u64, firings: u64) -> Self {
        StageSpec { name: name.into(), consume, produce, firings, cycles_per_firing: 1, pipeline_latency: 0 }
    }

    pub fn cycles(mut self, cycles_per_firing: u64) -> Self {
        self.cycles_per_firing = cycles_per_firing;
        self
    }

    pub fn latency(mut self, pipeline_latency: u64) -> Self {
        self.pipeline_latency = pipeline_latency;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pipeline {
    pub mode: Flow,
    pub stages: Vec<Stage>,
    pub edges: Vec<Edge>,
}

impl Pipeline {
    pub fn new(mode: Flow) -> Self {
        Pipeline { mode, stages: vec![], edges: vec![] }
    }

    pub fn add_stage(&mut self, s: StageSpec) -> usize {
        self.stages.push(Stage {
            name: s.name,
            op: "Custom".into(),
            consume: s.consume,
            produce: s.produce,
            firings_per_inference: s.firings,
            cycles_per_firing: s.cycles_per_firing,
            pipeline_latency: s.pipeline_latency,
            inputs: vec![],
            outputs: vec![],
        });
        self.stages.len() - 1
    }

    fn add_edge(&mut self, name: String, from: Option<usize>, to: Option<usize>, token_bits: u64) -> usize {
        let tokens = match (from, to) {
            (Some(f), _) => self.stages[f].produce * self.stages[f].firings_per_inference,
            (None, Some(t)) => self.stages[t].consume * self.stages[t].firings_per_inference,
            (None, None) => 0,
        };
        let mut unique = name.clone();
        let mut i = 1;
        while self.edges.iter().any(|e| e.name == unique) {
            unique = format!("{name}#{i}");
            i += 1;
        }
        self.edges.push(Edge { name: unique, from, to, tokens_per_inference: tokens, token_bits });
        let id = self.edges.len() - 1;
        if let Some(f) = from {
            self.stages[f].outputs.push(id);
        }
        if let Some(t) = to {
            self.stages[t].inputs.push(id);
        }
        id
    }

    /// FIFO from `from` to `to`.
    pub fn connect(&mut self, from: usize, to: usize, token_bits: u64) -> usize {
        let name = format!("{}->{}", self.stages[from].name, self.stages[to].name);
        self.add_edge(name, Some(from), Some(to), token_bits)
    }

    pub fn add_source(&mut self, to: usize, token_bits: u64) -> usize {
        self.add_edge(format!("in->{}", self.stages[to].name), None, Some(to), token_bits)
    }

    pub fn add_sink(&mut self, from: usize, token_bits: u64) -> usize {
        self.add_edge(format!("{}->out", self.stages[from].name), Some(from), None, token_bits)
    }

    pub fn fifos(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_fifo())
    }

    /// Stage indices in topological order (declaration order on ties).
    pub fn topo_order(&self) -> Result<Vec<usize>, DataflowError> {
        let n = self.stages.len();
        let mut indeg = vec![0usize; n];
        for e in self.fifos() {
            indeg[e.to.unwrap()] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &e in &self.stages[i].outputs {
                if let Some(t) = self.edges[e].to {
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        ready.insert(t);
                    }
                }
            }
        }
        if order.len() != n {
            return Err(DataflowError::Invalid("stage graph has a cycle".into()));
        }
        Ok(order)
    }

    /// Checks rates and token conservation on every FIFO.
    pub fn validate(&self) -> Result<(), DataflowError> {
        for s in &self.stages {
            if s.consume == 0 || s.produce == 0 || s.firings_per_inference == 0 || s.cycles_per_firing == 0 {
                return Err(DataflowError::Invalid(format!("stage `{}` has a zero rate", s.name)));
            }
            if s.inputs.is_empty() {
                return Err(DataflowError::Invalid(format!("stage `{}` has no input", s.name)));
            }
        }
        for e in self.fifos() {
            let (f, t) = (&self.stages[e.from.unwrap()], &self.stages[e.to.unwrap()]);
            if f.produce * f.firings_per_inference != t.consume * t.firings_per_inference {
                return Err(DataflowError::Invalid(format!(
                    "edge `{}`: {} tokens produced but {} consumed per inference",
                    e.name,
                    f.produce * f.firings_per_inference,
                    t.consume * t.firings_per_inference
                )));
            }
        }
        self.topo_order().map(|_| ())
    }

    /// Tokens delivered to graph outputs per inference.
    pub fn sink_tokens_per_inference(&self) -> u64 {
        self.edges.iter().filter(|e| e.to.is_none()).map(|e| e.tokens_per_inference).sum()
    }

    /// Watchdog window: twice the sum of every stage's firing span.
    pub fn default_watchdog(&self) -> u64 {
        2 * self.stages.iter().map(|s| s.cycles_per_firing + s.pipeline_latency).sum::<u64>()
    }
}

/// Stream shape of a tensor: `(tokens, elements per token)`.
fn stream_shape(info: &TensorInfo) -> (u64, u64) {
    if info.shape.len() == 4 {
        (info.positions() as u64, info.channels() as u64)
    } else {
        (1, info.numel() as u64)
    }
}

/// Builds the stage graph of `m`. Flatten is a re-labelling of the stream
/// and gets no stage; a tensor read by several stages gets a Fork stage.
pub fn map_to_pipeline(m: &Model, mode: Flow) -> Result<Pipeline, DataflowError> {
    let types = m.types()?;
    let order = m.topo_order().ok_or_else(|| DataflowError::Invalid("model is not a DAG".into()))?;
    for &i in &order {
        let n = &m.nodes[i];
        if matches!(n.op, Op::Softmax) {
            return Err(DataflowError::UnmappableOp { node: n.name.clone(), op: n.op.kind() });
        }
    }
    // Flatten outputs alias their input stream.
    let mut alias: HashMap<String, String> = HashMap::new();
    for &i in &order {
        let n = &m.nodes[i];
        if matches!(n.op, Op::Flatten) {
            let src = alias.get(&n.inputs[0]).cloned().unwrap_or_else(|| n.inputs[0].clone());
            alias.insert(n.output().to_string(), src);
        }
    }
    let resolve = |t: &str| alias.get(t).cloned().unwrap_or_else(|| t.to_string());
    let is_stream = |t: &str| !m.initializers.contains_key(t);

    // Stage-level readers of each stream tensor, plus graph outputs.
    let mut readers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        let n = &m.nodes[i];
        if matches!(n.op, Op::Flatten) {
            continue;
        }
        for t in n.inputs.iter().filter(|t| is_stream(t)) {
            readers.entry(resolve(t)).or_default().push(i);
        }
    }
    let outputs: Vec<String> = m.outputs.iter().map(|o| resolve(o)).collect();

    let mut p = Pipeline::new(mode);
    let mut stage_of: HashMap<usize, usize> = HashMap::new();
    let bits_of = |t: &str| -> u64 {
        let info = &types[t];
        stream_shape(info).1 * info.dtype.bits() as u64
    };
    for &i in &order {
        let n = &m.nodes[i];
        if matches!(n.op, Op::Flatten) {
            continue;
        }
        let src = resolve(&n.inputs[0]);
        let in_tokens = stream_shape(&types[&src]).0;
        let out_tokens = stream_shape(&types[n.output()]).0;
        let g = in_tokens.gcd(&out_tokens);
        let cycles = if n.op.is_linear() { n.op.reuse_factor() as u64 } else { 1 };
        let spec = StageSpec::new(&n.name, in_tokens / g, out_tokens / g, g).cycles(cycles);
        let s = p.add_stage(spec);
        p.stages[s].op = n.op.kind().to_string();
        stage_of.insert(i, s);
    }

    // Wire each produced stream (node outputs and graph inputs).
    let mut producers: Vec<(String, Option<usize>)> = m.inputs.iter().map(|vi| (vi.name.clone(), None)).collect();
    for &i in &order {
        if let Some(&s) = stage_of.get(&i) {
            producers.push((m.nodes[i].output().to_string(), Some(s)));
        }
    }
    for (tensor, from) in producers {
        let mut dests: Vec<Option<usize>> = readers.get(&tensor).map_or(vec![], |r| r.iter().map(|i| Some(stage_of[i])).collect());
        if outputs.contains(&tensor) {
            dests.push(None);
        }
        if dests.is_empty() {
            continue;
        }
        let bits = bits_of(&tensor);
        let tokens = stream_shape(&types[&tensor]).0;
        if dests.len() == 1 {
            wire(&mut p, from, dests[0], bits);
            continue;
        }
        let fork = p.add_stage(StageSpec::new(&format!("{tensor}.fork"), 1, 1, tokens));
        p.stages[fork].op = "Fork".into();
        wire(&mut p, from, Some(fork), bits);
        for d in dests {
            wire(&mut p, Some(fork), d, bits);
        }
    }
    p.validate()?;
    Ok(p)
}

fn wire(p: &mut Pipeline, from: Option<usize>, to: Option<usize>, bits: u64) {
    match (from, to) {
        (Some(f), Some(t)) => {
            p.connect(f, t, bits);
        }
        (None, Some(t)) => {
            p.add_source(t, bits);
        }
        (Some(f), None) => {
            p.add_sink(f, bits);
        }
        (None, None) => {}
    }
}

/// Sets every linear layer's reuse factor so one multiplier performs all of
/// a firing's work. A convolution computes the full kernel at every input
/// position it consumes, strided or not, so its factor is
/// `consume * C_in * k^2 * C_out`; a dense layer's is `fan_in * fan_out`.
pub fn apply_sequential_reuse(m: &mut Model) -> Result<(), DataflowError> {
    let types = m.types()?;
    for node in &mut m.nodes {
        let rf = match &node.op {
            Op::Conv2D(a) => {
                let x = &types[&node.inputs[0]];
                let out = &types[node.output()];
                let (in_t, out_t) = (x.positions() as u64, out.positions() as u64);
                let consume = in_t / in_t.gcd(&out_t);
                let k = a.kernel as u64;
                consume * x.channels() as u64 * k * k * out.channels() as u64
            }
            Op::Dense(_) => types[&node.inputs[1]].numel() as u64,
            _ => continue,
        };
        node.op.set_reuse_factor(u32::try_from(rf).unwrap_or(u32::MAX));
    }
    Ok(())
}

/// Depth per FIFO edge name.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FifoPlan {
    pub mode: Flow,
    pub depths: BTreeMap<String, u64>,
}

impl FifoPlan {
    pub fn uniform(p: &Pipeline, depth: u64) -> Self {
        FifoPlan { mode: p.mode, depths: p.fifos().map(|e| (e.name.clone(), depth)).collect() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, DataflowError> {
        serde_json::from_str(s).map_err(|e| DataflowError::Invalid(format!("FIFO plan: {e}")))
    }
}

#[cfg(test)]
mod tests;
