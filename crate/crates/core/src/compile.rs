//! End-to-end driver: IR and hardware spec in, mapping report out.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::diag::Diagnostic;
use crate::header_mapper::{map_headers, waste_percent};
use crate::hsl::{default_spec, parse_hsl, HardwareSpec, HslError};
use crate::ir::{build_parse_graph, parse_ir, IrError, IrProgram};
use crate::parser_mapper::{cluster_names, map_parser};
use crate::report::{
    HeaderSection, MappingReport, ParserSection, Phase, PipelineSection, Provenance, ResolvedConfig, TdgSection,
    Verdict, TOOL_VERSION,
};
use crate::tdg_mapper::{
    compute_latency, map_tdg, summarize, ActionMode, LatencyCosts, PlacementOptions, StatefulPolicy, TdgMapping,
    TdgOptions,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    /// Overrides the packing factor of the hardware spec.
    pub packing_factor: Option<u32>,
    pub action_mode: ActionMode,
    pub latency_costs: LatencyCosts,
    pub stateful_policy: StatefulPolicy,
    pub pointer_overhead_bits: u32,
    /// Record per-phase wall-clock times. Off by default so reports stay byte-stable.
    pub timings: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            packing_factor: None,
            action_mode: ActionMode::PerEntry,
            latency_costs: LatencyCosts::default(),
            stateful_policy: StatefulPolicy::Colocate,
            pointer_overhead_bits: 16,
            timings: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read `{}`: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ir(IrError),
    #[error("hardware spec: {0}")]
    Hsl(#[from] HslError),
    #[error("invalid option: {0}")]
    Option(String),
}

fn read(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|source| InputError::Io { path: path.to_path_buf(), source })
}

/// Compiles the IR file at `ir_path` against the hardware spec at `hw_path`,
/// or against the bundled benchmark profile when `hw_path` is `None`.
pub fn compile(ir_path: &Path, hw_path: Option<&Path>, options: &CompileOptions) -> Result<MappingReport, InputError> {
    let hw_text = hw_path.map(read).transpose()?;
    let ir_text = read(ir_path)?;
    compile_documents(&ir_text, hw_text.as_deref(), options)
}

pub fn compile_documents(
    ir_text: &str,
    hw_text: Option<&str>,
    options: &CompileOptions,
) -> Result<MappingReport, InputError> {
    let (mut spec, mut diagnostics) = match hw_text {
        Some(t) => {
            let parsed = parse_hsl(t)?;
            (parsed.spec, parsed.diagnostics)
        }
        None => (default_spec(), Vec::new()),
    };
    if let Some(pf) = options.packing_factor {
        if pf == 0 {
            return Err(InputError::Option("packing factor must be at least 1".into()));
        }
        spec.packing_factor = pf;
    }
    if let ActionMode::Fixed(0) = options.action_mode {
        return Err(InputError::Option("fixed action mode needs at least one entry".into()));
    }

    let program = match parse_ir(ir_text) {
        Ok(p) => p,
        Err(e) if e.is_rejection() => {
            let name = program_name_hint(ir_text);
            let verdict = rejected(Phase::Ir, "unsupported construct", e.element(), e.to_string());
            return Ok(empty_report(name, verdict, diagnostics, &spec, options));
        }
        Err(e) => return Err(InputError::Ir(e)),
    };
    diagnostics.extend(program.diagnostics.iter().cloned());
    Ok(compile_program(&program, &spec, options, diagnostics))
}

fn program_name_hint(ir_text: &str) -> String {
    serde_json::from_str::<serde_json::Value>(ir_text)
        .ok()
        .and_then(|v| v.get("program").and_then(|p| p.as_str()).map(str::to_string))
        .map(|p| {
            let base = p.rsplit(['/', '\\']).next().unwrap_or(&p).to_string();
            base.strip_suffix(".p4").map(str::to_string).unwrap_or(base)
        })
        .unwrap_or_else(|| "program".to_string())
}

fn rejected(
    phase: Phase,
    resource: impl Into<String>,
    element: impl Into<String>,
    reason: impl Into<String>,
) -> Verdict {
    Verdict::Rejected { phase, resource: resource.into(), element: element.into(), reason: reason.into() }
}

fn provenance(spec: &HardwareSpec, o: &CompileOptions) -> Provenance {
    let mut notes = Vec::new();
    if spec.stage.extern_units.is_none() {
        notes.push("extern units per stage are unconstrained".to_string());
    }
    notes.push("memory ports are modeled but not enforced".to_string());
    Provenance {
        tool_version: TOOL_VERSION.to_string(),
        hardware_name: spec.name.clone(),
        hardware_digest: spec.digest(),
        config: ResolvedConfig {
            packing_factor: spec.packing_factor,
            action_mode: o.action_mode,
            latency_costs: o.latency_costs,
            stateful_policy: o.stateful_policy,
            pointer_overhead_bits: o.pointer_overhead_bits,
            num_stages: spec.num_stages,
        },
        notes,
    }
}

fn empty_report(
    name: String,
    verdict: Verdict,
    diagnostics: Vec<Diagnostic>,
    spec: &HardwareSpec,
    o: &CompileOptions,
) -> MappingReport {
    MappingReport {
        program_name: name,
        verdict,
        header: None,
        parser: None,
        tdg: None,
        diagnostics,
        provenance: provenance(spec, o),
    }
}

struct Timer(Option<Instant>);

impl Timer {
    fn start(on: bool) -> Self {
        Timer(on.then(Instant::now))
    }
    fn ms(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64() * 1000.0)
    }
}

/// Runs the three mapping phases on an already parsed program.
pub fn compile_program(
    program: &IrProgram,
    spec: &HardwareSpec,
    options: &CompileOptions,
    diagnostics: Vec<Diagnostic>,
) -> MappingReport {
    let mut report = empty_report(program.name.clone(), Verdict::Accepted, diagnostics, spec, options);

    // Header fields onto PHV containers.
    let timer = Timer::start(options.timings);
    let fields: Vec<_> = program.phv_fields().map(|(_, f)| f.clone()).collect();
    let header = match map_headers(&fields, &spec.phv) {
        Ok(m) => m,
        Err(e) => {
            let crate::header_mapper::HeaderMapError::CapacityExceeded { field, .. } = &e;
            report.verdict = rejected(Phase::Header, "PHV containers", field.clone(), e.to_string());
            return report;
        }
    };
    let phv_total = spec.phv.total_bits();
    report.header = Some(HeaderSection {
        field_count: fields.len(),
        used_bits: header.used_bits,
        allocated_bits: header.allocated_bits,
        waste_percent: waste_percent(&header),
        phv_total_bits: phv_total,
        phv_utilization_percent: if phv_total == 0 {
            0.0
        } else {
            100.0 * header.allocated_bits as f64 / phv_total as f64
        },
        class_usage: header.class_usage.clone(),
        assignments: header.assignments.clone(),
        elapsed_ms: timer.ms(),
    });

    // Parse graph onto the parser TCAM.
    let timer = Timer::start(options.timings);
    let graph = match build_parse_graph(program) {
        Ok(g) => g,
        Err(e) => {
            report.verdict = rejected(Phase::Parser, "parse graph", e.element(), e.to_string());
            return report;
        }
    };
    let parser = match map_parser(&graph, &spec.parser) {
        Ok(p) => p,
        Err(e) => {
            report.verdict = rejected(Phase::Parser, e.resource(), e.element(), e.to_string());
            return report;
        }
    };
    report.parser = Some(ParserSection {
        states: graph.nodes.len(),
        edges: graph.edges.len(),
        clusters: cluster_names(&parser.clusters).into_values().collect(),
        entry_count: parser.table.entry_count,
        capacity: parser.verdict.capacity,
        capacity_percent: parser.verdict.utilization_percent,
        state_table: parser.table.clone(),
        elapsed_ms: timer.ms(),
    });
    if let Some(reason) = &parser.verdict.reason {
        let element = program.parsers.first().map_or("parser".to_string(), |p| p.name.clone());
        report.verdict = rejected(Phase::Parser, "parser capacity", element, reason.clone());
        return report;
    }

    // Dependency graph onto match-action stages.
    let timer = Timer::start(options.timings);
    let tdg_opts = TdgOptions {
        placement: PlacementOptions {
            action_mode: options.action_mode,
            pointer_overhead_bits: options.pointer_overhead_bits,
            stateful_policy: options.stateful_policy,
            ..PlacementOptions::default()
        },
        latency: options.latency_costs,
    };
    let mapping = match map_tdg(program, spec, &tdg_opts) {
        Ok(m) => m,
        Err(e) => {
            report.verdict = rejected(Phase::Tdg, e.resource(), e.element(), e.to_string());
            return report;
        }
    };
    report.tdg = Some(tdg_section(&mapping, &options.latency_costs, timer.ms()));
    report
}

fn tdg_section(m: &TdgMapping, costs: &LatencyCosts, elapsed_ms: Option<f64>) -> TdgSection {
    let summary = summarize(m);
    let pipelines: Vec<PipelineSection> = m
        .pipelines
        .iter()
        .map(|p| {
            let single = TdgMapping {
                pipelines: vec![p.clone()],
                per_stage: vec![],
                stages_used: p.stages_used,
                latency_cycles: 0,
            };
            PipelineSection {
                name: p.name.clone(),
                nodes: p.nodes,
                edges: p.edges.len(),
                stages_used: p.stages_used,
                latency_cycles: compute_latency(&single, costs),
                placements: p.placements.clone(),
            }
        })
        .collect();
    TdgSection {
        nodes: pipelines.iter().map(|p| p.nodes).sum(),
        edges: pipelines.iter().map(|p| p.edges).sum(),
        stages_used: m.stages_used,
        latency_cycles: m.latency_cycles,
        tcam_blocks: summary.tcam_blocks,
        sram_blocks: summary.sram_blocks,
        pipelines,
        per_stage: summary.rows,
        elapsed_ms,
    }
}
