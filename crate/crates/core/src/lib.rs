// SPDX-License-Identifier: Apache-2.0

pub mod cli;
pub mod cost;
pub mod dataflow;
pub mod exec;
pub mod fixtures;
pub mod ir;
pub mod passes;
pub mod zoo;
