// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use super::{infer_types, validate, DataType, IrError, Node, OpKind, Tensor, TypeMap};

/// Toolflow a model is destined for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flow {
    #[default]
    Hls4ml,
    Finn,
}

impl Flow {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flow::Hls4ml => "hls4ml",
            Flow::Finn => "finn",
        }
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hls4ml" => Ok(Flow::Hls4ml),
            "finn" => Ok(Flow::Finn),
            _ => Err(format!("unknown flow `{s}`")),
        }
    }
}

/// Declared graph input.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DataType,
}

/// Parameter counts: linear-layer weights and biases, with batch-norm
/// parameters reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub params: u64,
    pub bn_params: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Model {
    pub name: String,
    pub flow: Flow,
    pub notes: String,
    pub inputs: Vec<ValueInfo>,
    pub outputs: Vec<String>,
    pub initializers: BTreeMap<String, Tensor>,
    pub nodes: Vec<Node>,
}

impl Model {
    pub fn new(name: impl Into<String>, flow: Flow) -> Self {
        Model { name: name.into(), flow, ..Default::default() }
    }

    pub fn add_input(&mut self, name: &str, shape: Vec<usize>, dtype: DataType) {
        self.inputs.push(ValueInfo { name: name.to_string(), shape, dtype });
    }

    pub fn add_initializer(&mut self, name: &str, t: Tensor) {
        self.initializers.insert(name.to_string(), t);
    }

    pub fn add_node(&mut self, node: Node) {
        self.nodes.push(node);
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn initializer(&self, name: &str) -> Option<&Tensor> {
        self.initializers.get(name)
    }

    /// Index of the node producing each tensor.
    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for o in &n.outputs {
                map.insert(o.as_str(), i);
            }
        }
        map
    }

    /// Indices of the nodes consuming each tensor, in declaration order.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for t in &n.inputs {
                map.entry(t.as_str()).or_default().push(i);
            }
        }
        map
    }

    /// Deterministic topological order, ties broken by declaration order.
    /// `None` when the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let producers = self.producers();
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for t in &node.inputs {
                if let Some(&p) = producers.get(t.as_str()) {
                    if succ[p].insert(i) {
                        indegree[i] += 1;
                    }
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(Reverse(s));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Reorders `nodes` topologically.
    pub fn sort_nodes(&mut self) {
        if let Some(order) = self.topo_order() {
            let mut old: Vec<Option<Node>> = std::mem::take(&mut self.nodes).into_iter().map(Some).collect();
            self.nodes = order.into_iter().map(|i| old[i].take().unwrap()).collect();
        }
    }

    /// Drops initializers no node reads and no output names.
    pub fn prune_initializers(&mut self) {
        let mut used: BTreeSet<&str> = self.nodes.iter().flat_map(|n| n.inputs.iter().map(String::as_str)).collect();
        used.extend(self.outputs.iter().map(String::as_str));
        let keep: BTreeSet<String> = used.into_iter().map(str::to_string).collect();
        self.initializers.retain(|k, _| keep.contains(k));
    }

    /// Shapes and dtypes of every tensor; errors when the model is invalid.
    pub fn types(&self) -> Result<TypeMap, IrError> {
        let (types, diags) = infer_types(self);
        if diags.is_empty() {
            Ok(types)
        } else {
            Err(IrError::Validation(diags))
        }
    }

    /// Returns `self` when it validates.
    pub fn validated(self) -> Result<Self, IrError> {
        let diags = validate(&self);
        if diags.is_empty() {
            Ok(self)
        } else {
            Err(IrError::Validation(diags))
        }
    }

    /// Weight and bias element counts of Conv2D/Dense nodes; batch-norm
    /// parameters in the second field.
    pub fn count_params(&self) -> ParamCount {
        let mut pc = ParamCount::default();
        let numel = |name: &str| self.initializers.get(name).map_or(0, |t| t.numel() as u64);
        for node in &self.nodes {
            match node.op.kind() {
                OpKind::Conv2D | OpKind::Dense => {
                    pc.params += node.inputs[1..].iter().map(|t| numel(t)).sum::<u64>();
                }
                OpKind::BatchNorm => {
                    pc.bn_params += node.inputs[1..].iter().map(|t| numel(t)).sum::<u64>();
                }
                _ => {}
            }
        }
        pc
    }

    /// Names of FLOAT32 tensors (node outputs, constants and graph inputs),
    /// excluding graph inputs that feed only Quant nodes. Empty for a fully
    /// integer model.
    pub fn float_edges(&self) -> Result<Vec<String>, IrError> {
        let types = self.types()?;
        let consumers = self.consumers();
        let mut out = Vec::new();
        for (name, info) in &types {
            if !info.dtype.is_float() {
                continue;
            }
            let is_input = self.inputs.iter().any(|i| &i.name == name);
            let quant_only = consumers
                .get(name.as_str())
                .is_none_or(|cs| cs.iter().all(|&c| self.nodes[c].op.kind() == OpKind::Quant));
            if is_input && quant_only {
                continue;
            }
            out.push(name.clone());
        }
        Ok(out)
    }
}
