// SPDX-License-Identifier: Apache-2.0

//! Graph-rewriting passes. Each pass is a pure `Model -> Model` function
//! returning a [`PassReport`].

mod fold;
mod simple;
mod streamline;

use std::fmt;
use std::str::FromStr;

use crate::exec::ExecError;
use crate::ir::{IrError, Model};

pub use fold::{constant_fold, fold_bn};
pub use simple::{merge_relu, minimize_accumulators, remove_softmax};
pub use streamline::streamline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PassId {
    ConstantFold,
    FoldBn,
    Streamline,
    MergeRelu,
    RemoveSoftmax,
    MinAccum,
}

impl PassId {
    pub const ALL: [PassId; 6] = [
        PassId::ConstantFold,
        PassId::FoldBn,
        PassId::Streamline,
        PassId::MergeRelu,
        PassId::RemoveSoftmax,
        PassId::MinAccum,
    ];

    /// Order used when no pass list is given.
    pub const DEFAULT: [PassId; 5] =
        [PassId::ConstantFold, PassId::FoldBn, PassId::Streamline, PassId::MergeRelu, PassId::MinAccum];

    pub fn as_str(&self) -> &'static str {
        match self {
            PassId::ConstantFold => "constant-fold",
            PassId::FoldBn => "fold-bn",
            PassId::Streamline => "streamline",
            PassId::MergeRelu => "merge-relu",
            PassId::RemoveSoftmax => "remove-softmax",
            PassId::MinAccum => "min-accum",
        }
    }

    pub fn apply(&self, m: &Model) -> Result<(Model, PassReport), PassError> {
        match self {
            PassId::ConstantFold => constant_fold(m),
            PassId::FoldBn => fold_bn(m),
            PassId::Streamline => streamline(m),
            PassId::MergeRelu => merge_relu(m),
            PassId::RemoveSoftmax => remove_softmax(m),
            PassId::MinAccum => minimize_accumulators(m),
        }
    }
}

impl fmt::Display for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PassId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PassId::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown pass `{s}`"))
    }
}

/// Parses a comma-separated pass list. Empty input gives an empty list.
pub fn parse_pass_list(s: &str) -> Result<Vec<PassId>, String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Equivalence {
    #[default]
    Unchecked,
    Passed,
    Failed(String),
}

impl fmt::Display for Equivalence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equivalence::Unchecked => f.write_str("unchecked"),
            Equivalence::Passed => f.write_str("passed"),
            Equivalence::Failed(why) => write!(f, "failed: {why}"),
        }
    }
}

/// What a pass changed. `nodes_after == nodes_before - removed + added`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassReport {
    pub pass: PassId,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub removed: usize,
    pub added: usize,
    pub rewritten: usize,
    pub equivalence: Equivalence,
}

impl PassReport {
    fn new(pass: PassId, before: &Model) -> Self {
        let n = before.nodes.len();
        PassReport {
            pass,
            nodes_before: n,
            nodes_after: n,
            removed: 0,
            added: 0,
            rewritten: 0,
            equivalence: Equivalence::Unchecked,
        }
    }

    fn finish(mut self, after: &Model) -> Self {
        self.nodes_after = after.nodes.len();
        debug_assert_eq!(self.nodes_after + self.removed, self.nodes_before + self.added, "{self:?}");
        self
    }

    /// Total number of changes; zero means the pass was a no-op.
    pub fn changes(&self) -> usize {
        self.removed + self.added + self.rewritten
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PassError {
    #[error("{pass}: pattern not found")]
    PatternNotFound { pass: PassId },
    #[error("node `{node}` is not streamlinable: {reason}")]
    NotStreamlinable { node: String, reason: String },
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, thiserror::Error)]
#[error("pass {index} ({pass}) failed: {source}")]
pub struct PipelineError {
    pub index: usize,
    pub pass: PassId,
    #[source]
    pub source: PassError,
}

/// Applies `passes` in order. The result is validated after every pass.
pub fn run_pipeline(m: &Model, passes: &[PassId]) -> Result<(Model, Vec<PassReport>), PipelineError> {
    let mut cur = m.clone();
    let mut reports = Vec::with_capacity(passes.len());
    for (index, &pass) in passes.iter().enumerate() {
        let wrap = |source| PipelineError { index, pass, source };
        let (next, report) = pass.apply(&cur).map_err(wrap)?;
        let next = next.validated().map_err(|e| wrap(e.into()))?;
        cur = next;
        reports.push(report);
    }
    Ok((cur, reports))
}

/// Removes node `idx` whose single input feeds straight through: every
/// reader of its output reads its input instead. If its output is a graph
/// output, the producer of the input is renamed to emit that name.
pub(crate) fn bypass_node(m: &mut Model, idx: usize) {
    let node = m.nodes.remove(idx);
    let (from, to) = (node.inputs[0].clone(), node.output().to_string());
    rename_tensor(m, &from, &to);
}

/// Renames tensor `from` to `to` everywhere it is produced or read.
pub(crate) fn rename_tensor(m: &mut Model, from: &str, to: &str) {
    for n in &mut m.nodes {
        for t in n.inputs.iter_mut().chain(n.outputs.iter_mut()) {
            if t == from {
                *t = to.to_string();
            }
        }
    }
    for o in &mut m.outputs {
        if o == from {
            *o = to.to_string();
        }
    }
    if let Some(t) = m.initializers.remove(from) {
        m.initializers.insert(to.to_string(), t);
    }
}

/// Whether `tensor` has exactly one reader and is not a graph output.
pub(crate) fn single_use(m: &Model, tensor: &str) -> bool {
    let readers = m.nodes.iter().filter(|n| n.inputs.iter().any(|t| t == tensor)).count();
    readers == 1 && !m.outputs.iter().any(|o| o == tensor)
}

/// Picks an initializer name not yet used by any tensor.
pub(crate) fn fresh_name(m: &Model, base: &str) -> String {
    let taken = |s: &str| {
        m.initializers.contains_key(s)
            || m.inputs.iter().any(|i| i.name == s)
            || m.nodes.iter().any(|n| n.outputs.iter().any(|o| o == s))
    };
    if !taken(base) {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}_{i}")).find(|s| !taken(s)).unwrap()
}

#[cfg(test)]
mod tests;
