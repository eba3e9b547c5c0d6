// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 success, 2 parse or validation failure, 3 transform or
//! annotation failure, 4 deadlock, 5 verification mismatch, 64 usage.
//! Reports go to standard output, diagnostics to standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::cost::{model_cost, CostError};
use crate::dataflow::{
    apply_sequential_reuse, bench_median, map_to_pipeline, simulate, size_fifos, Clock, DataflowError, FifoPlan,
    SimReport,
};
use crate::exec::{verify, Tolerance, VerifyError};
use crate::ir::{parse_model, serialize_model, Flow, Model, Rational};
use crate::passes::{PassId, PassReport};
use crate::zoo::{build, ZooId, ZooSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_TRANSFORM: i32 = 3;
pub const EXIT_DEADLOCK: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "qflow", version, about = "Quantized network graph optimizer, cost model and dataflow simulator")]
pub struct Cli {
    /// Print structured JSON instead of the text report.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowArg {
    Hls4ml,
    Finn,
}

impl From<FlowArg> for Flow {
    fn from(f: FlowArg) -> Flow {
        match f {
            FlowArg::Hls4ml => Flow::Hls4ml,
            FlowArg::Finn => Flow::Finn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ToleranceArg {
    Exact,
    Relative,
    Argmax,
}

impl From<ToleranceArg> for Tolerance {
    fn from(t: ToleranceArg) -> Tolerance {
        match t {
            ToleranceArg::Exact => Tolerance::Exact,
            ToleranceArg::Relative => Tolerance::Relative,
            ToleranceArg::Argmax => Tolerance::Argmax,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the node table, shapes, dtypes and parameter counts.
    Inspect { model: PathBuf },
    /// Apply graph passes and write the transformed model.
    Optimize {
        model: PathBuf,
        /// Comma-separated pass list; "" applies none. Default:
        /// constant-fold,fold-bn,streamline,merge-relu,min-accum.
        #[arg(long, value_parser = parse_passes)]
        passes: Option<PassList>,
        /// Output model file; standard output if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Report BOPs, weight memory, FLOPs and the normalized cost.
    Cost {
        model: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Map to a streaming pipeline, size FIFOs and report latency.
    Simulate {
        model: PathBuf,
        /// Target flow; defaults to the model's own.
        #[arg(long, value_enum)]
        mode: Option<FlowArg>,
        #[arg(long, default_value_t = 100.0)]
        clock_mhz: f64,
        /// `auto` sizes FIFOs by simulation; anything else is a plan file.
        #[arg(long, default_value = "auto")]
        fifo: String,
        /// Back-to-back inferences per simulation.
        #[arg(long, default_value_t = 2)]
        n: u64,
        /// Set every linear layer's reuse factor to its full sequential
        /// value before mapping.
        #[arg(long)]
        sequential_reuse: bool,
        /// Add the median latency of 5 samples.
        #[arg(long)]
        bench: bool,
        /// Simulated cycles each bench sample must cover.
        #[arg(long, default_value_t = 10_000)]
        bench_window: u64,
        /// Write the FIFO plan used to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare two models on seeded random inputs.
    Verify {
        model_a: PathBuf,
        model_b: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "exact")]
        tolerance: ToleranceArg,
    },
    /// Build a model from the zoo.
    Zoo {
        #[arg(value_parser = parse_zoo_id)]
        id: ZooId,
        /// Output model file; standard output if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Width multiplier such as 1/2.
        #[arg(long, value_parser = parse_rational_arg)]
        width_scale: Option<Rational>,
    },
}

#[derive(Debug, Clone)]
struct PassList(Vec<PassId>);

fn parse_passes(s: &str) -> Result<PassList, String> {
    crate::passes::parse_pass_list(s).map(PassList)
}

fn parse_zoo_id(s: &str) -> Result<ZooId, String> {
    s.parse().map_err(|e: crate::zoo::ZooError| e.to_string())
}

fn parse_rational_arg(s: &str) -> Result<Rational, String> {
    s.parse::<Rational>().map_err(|e| format!("`{s}` is not a ratio: {e}"))
}

/// Failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Inspect { model } => cmd_inspect(&load(model)?, cli.json, out),
        Command::Optimize { model, passes, output } => {
            let passes = passes.as_ref().map_or_else(|| PassId::DEFAULT.to_vec(), |p| p.0.clone());
            cmd_optimize(&load(model)?, &passes, output.as_deref(), cli.json, out, err)
        }
        Command::Cost { model, baseline } => {
            let m = load(model)?;
            let b = baseline.as_deref().map(load).transpose()?;
            cmd_cost(&m, b.as_ref(), cli.json, out)
        }
        Command::Simulate { model, mode, clock_mhz, fifo, n, sequential_reuse, bench, bench_window, output } => {
            let m = load(model)?;
            let opts = SimOptions {
                mode: mode.map_or(m.flow, Flow::from),
                clock_mhz: *clock_mhz,
                plan_file: (fifo != "auto").then(|| PathBuf::from(fifo)),
                n: *n,
                sequential_reuse: *sequential_reuse,
                bench: bench.then_some(*bench_window),
                output: output.clone(),
            };
            cmd_simulate(m, &opts, cli.json, out, err)
        }
        Command::Verify { model_a, model_b, n, seed, tolerance } => {
            cmd_verify(&load(model_a)?, &load(model_b)?, *n, *seed, (*tolerance).into(), cli.json, out)
        }
        Command::Zoo { id, output, width_scale } => {
            let spec = match width_scale {
                Some(s) => ZooSpec::scaled(*id, *s),
                None => ZooSpec::new(*id),
            };
            cmd_zoo(&spec, output.as_deref(), cli.json, out, err)
        }
    }
}

fn load(path: &Path) -> Result<Model, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes()).map_err(|e| Failure::new(EXIT_PARSE, format!("writing output: {e}")))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value") + "\n"
}

fn cmd_inspect(m: &Model, json: bool, out: &mut dyn Write) -> CmdResult {
    let types = m.types().map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    let pc = m.count_params();
    let rows: Vec<serde_json::Value> = m
        .nodes
        .iter()
        .map(|n| {
            let info = &types[n.output()];
            json!({
                "name": n.name,
                "op": n.op.kind().to_string(),
                "inputs": n.inputs,
                "output": n.output(),
                "shape": info.shape,
                "dtype": info.dtype.to_string(),
            })
        })
        .collect();
    if json {
        let inputs: Vec<_> = m.inputs.iter().map(|v| json!({"name": v.name, "shape": v.shape, "dtype": v.dtype.to_string()})).collect();
        let doc = json!({
            "name": m.name,
            "flow": m.flow.to_string(),
            "inputs": inputs,
            "outputs": m.outputs,
            "node_count": m.nodes.len(),
            "params": pc.params,
            "bn_params": pc.bn_params,
            "nodes": rows,
        });
        return emit(out, &pretty(&doc));
    }
    let mut s = format!("model: {} ({})\n", m.name, m.flow);
    for v in &m.inputs {
        s += &format!("input: {} {:?} {}\n", v.name, v.shape, v.dtype);
    }
    s += &format!("outputs: {}\n", m.outputs.join(", "));
    s += &format!("{} nodes\n", m.nodes.len());
    s += &format!("params: {}\n", pc.params);
    s += &format!("bn_params: {}\n", pc.bn_params);
    if !rows.is_empty() {
        s += &format!("{:<24} {:<16} {:<20} {}\n", "node", "op", "shape", "dtype");
    }
    for (n, r) in m.nodes.iter().zip(&rows) {
        let shape = format!("{:?}", types[n.output()].shape);
        s += &format!("{:<24} {:<16} {:<20} {}\n", n.name, n.op.kind().to_string(), shape, r["dtype"].as_str().unwrap_or(""));
    }
    emit(out, &s)
}

fn report_json(r: &PassReport) -> serde_json::Value {
    json!({
        "pass": r.pass.as_str(),
        "nodes_before": r.nodes_before,
        "nodes_after": r.nodes_after,
        "removed": r.removed,
        "added": r.added,
        "rewritten": r.rewritten,
        "equivalence": r.equivalence.to_string(),
    })
}

fn cmd_optimize(
    m: &Model,
    passes: &[PassId],
    output: Option<&Path>,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let (opt, reports) = crate::passes::run_pipeline(m, passes).map_err(|e| Failure::new(EXIT_TRANSFORM, e.to_string()))?;
    let text = serialize_model(&opt);
    let summary = if json {
        pretty(&json!({ "passes": reports.iter().map(report_json).collect::<Vec<_>>() }))
    } else {
        reports
            .iter()
            .map(|r| format!("{}: removed {} added {} rewritten {} ({} -> {} nodes)\n", r.pass, r.removed, r.added, r.rewritten, r.nodes_before, r.nodes_after))
            .collect()
    };
    match output {
        Some(path) => {
            write_file(path, &text)?;
            emit(out, &summary)
        }
        None => {
            emit(out, &text)?;
            let _ = err.write_all(summary.as_bytes());
            Ok(())
        }
    }
}

fn cmd_cost(m: &Model, baseline: Option<&Model>, json: bool, out: &mut dyn Write) -> CmdResult {
    let r = model_cost(m, baseline).map_err(|e| match e {
        CostError::Ir(_) => Failure::new(EXIT_PARSE, e.to_string()),
        _ => Failure::new(EXIT_TRANSFORM, e.to_string()),
    })?;
    if json {
        emit(out, &(serde_json::to_string_pretty(&r).expect("cost report") + "\n"))
    } else {
        emit(out, &r.to_string())
    }
}

struct SimOptions {
    mode: Flow,
    clock_mhz: f64,
    /// FIFO plan file; `None` sizes automatically.
    plan_file: Option<PathBuf>,
    n: u64,
    sequential_reuse: bool,
    /// Bench window in cycles when benchmarking.
    bench: Option<u64>,
    output: Option<PathBuf>,
}

fn dataflow_failure(e: DataflowError) -> Failure {
    match e {
        DataflowError::DeadlockedResult(_) => Failure::new(EXIT_DEADLOCK, e.to_string()),
        DataflowError::UnmappableOp { .. } | DataflowError::SizingUnstable { .. } => {
            Failure::new(EXIT_TRANSFORM, e.to_string())
        }
        DataflowError::PlanIncomplete(_) | DataflowError::Invalid(_) | DataflowError::Ir(_) => {
            Failure::new(EXIT_PARSE, e.to_string())
        }
    }
}

fn cmd_simulate(mut m: Model, o: &SimOptions, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let clk = Clock::mhz(o.clock_mhz).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    if o.sequential_reuse {
        apply_sequential_reuse(&mut m).map_err(dataflow_failure)?;
    }
    let p = map_to_pipeline(&m, o.mode).map_err(dataflow_failure)?;
    let (plan, result) = match &o.plan_file {
        None => {
            let s = size_fifos(&p, o.n, o.mode).map_err(dataflow_failure)?;
            (s.plan, s.sized)
        }
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
            let plan = FifoPlan::from_json(&text).map_err(dataflow_failure)?;
            let r = simulate(&p, &plan, o.n, None).map_err(dataflow_failure)?;
            (plan, r)
        }
    };
    let mut report = SimReport::new(&p, &plan, &result, clk).map_err(dataflow_failure)?;
    if let (Some(window), false) = (o.bench, result.deadlock) {
        report.bench_median_seconds = Some(bench_median(&p, &plan, 5, window, clk).map_err(dataflow_failure)?);
    }
    if let Some(path) = &o.output {
        write_file(path, &plan.to_json())?;
    }
    emit(out, &if json { report.to_json() } else { report.to_string() })?;
    if result.deadlock {
        let _ = writeln!(err, "deadlock: blocked stages: {}", result.blocked.join(", "));
        return Err(Failure::new(EXIT_DEADLOCK, "pipeline deadlocked"));
    }
    Ok(())
}

fn cmd_verify(a: &Model, b: &Model, n: usize, seed: u64, tol: Tolerance, json: bool, out: &mut dyn Write) -> CmdResult {
    let v = verify(a, b, n, seed, tol).map_err(|e| match e {
        VerifyError::Incompatible(_) | VerifyError::OutputMismatch(_) => Failure::new(EXIT_PARSE, e.to_string()),
        VerifyError::Exec(_) => Failure::new(EXIT_TRANSFORM, e.to_string()),
    })?;
    emit(out, &if json { v.to_json() } else { v.to_string() })?;
    if !v.passed {
        let sample = v.counterexample.as_ref().map_or(0, |c| c.sample);
        return Err(Failure::new(EXIT_MISMATCH, format!("outputs differ beyond {} tolerance at sample {sample}", tol.as_str())));
    }
    Ok(())
}

fn cmd_zoo(spec: &ZooSpec, output: Option<&Path>, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let m = build(spec).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let pc = m.count_params();
    let summary = if json {
        pretty(&json!({ "id": spec.id.as_str(), "width_scale": spec.width_scale.to_string(), "params": pc.params, "bn_params": pc.bn_params }))
    } else {
        format!("params: {}\n", pc.params)
    };
    let text = serialize_model(&m);
    match output {
        Some(path) => {
            write_file(path, &text)?;
            emit(out, &summary)
        }
        None => {
            emit(out, &text)?;
            let _ = err.write_all(summary.as_bytes());
            Ok(())
        }
    }
}
