//! Mapping report and its JSON and text renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diag::Diagnostic;
use crate::header_mapper::{ContainerUse, FieldAssignment};
use crate::parser_mapper::StateTable;
use crate::tdg_mapper::{ActionMode, LatencyCosts, StageRow, StatefulPolicy, TablePlacement};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ir,
    Header,
    Parser,
    Tdg,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ir => "ir",
            Phase::Header => "header",
            Phase::Parser => "parser",
            Phase::Tdg => "tdg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected { phase: Phase, resource: String, element: String, reason: String },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeaderSection {
    pub field_count: usize,
    pub used_bits: u64,
    pub allocated_bits: u64,
    pub waste_percent: f64,
    pub phv_total_bits: u64,
    pub phv_utilization_percent: f64,
    pub class_usage: Vec<ContainerUse>,
    pub assignments: Vec<FieldAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserSection {
    pub states: usize,
    pub edges: usize,
    pub clusters: Vec<Vec<String>>,
    pub entry_count: usize,
    pub capacity: u32,
    pub capacity_percent: f64,
    pub state_table: StateTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSection {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub stages_used: u32,
    pub latency_cycles: u64,
    pub placements: Vec<TablePlacement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdgSection {
    pub nodes: usize,
    pub edges: usize,
    pub stages_used: u32,
    pub latency_cycles: u64,
    pub tcam_blocks: u64,
    pub sram_blocks: u64,
    pub pipelines: Vec<PipelineSection>,
    pub per_stage: Vec<StageRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub packing_factor: u32,
    pub action_mode: ActionMode,
    pub latency_costs: LatencyCosts,
    pub stateful_policy: StatefulPolicy,
    pub pointer_overhead_bits: u32,
    pub num_stages: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub hardware_name: String,
    /// SHA-256 of the resolved hardware spec in canonical form.
    pub hardware_digest: String,
    pub config: ResolvedConfig,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub program_name: String,
    pub verdict: Verdict,
    pub header: Option<HeaderSection>,
    pub parser: Option<ParserSection>,
    pub tdg: Option<TdgSection>,
    pub diagnostics: Vec<Diagnostic>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

pub fn render_report(r: &MappingReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => render_table(r),
    }
}

pub fn parse_report(json: &str) -> Result<MappingReport, serde_json::Error> {
    serde_json::from_str(json)
}

fn ms(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"))
}

fn grid(out: &mut String, headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!(" {c:<w$} ")).collect();
        let _ = writeln!(out, "|{}|", parts.join("|"));
    };
    line(out, &mut headers.iter().copied());
    let _ = writeln!(out, "|{}|", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
    for r in rows {
        line(out, &mut r.iter().map(String::as_str));
    }
}

fn render_table(r: &MappingReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Program: {}", r.program_name);
    match &r.verdict {
        Verdict::Accepted => {
            let _ = writeln!(out, "Verdict: accepted");
        }
        Verdict::Rejected { phase, resource, element, reason } => {
            let _ = writeln!(out, "Verdict: rejected in {} phase", phase.as_str());
            let _ = writeln!(out, "  resource: {resource}");
            let _ = writeln!(out, "  element:  {element}");
            let _ = writeln!(out, "  reason:   {reason}");
        }
    }
    let name = r.program_name.clone();

    if let Some(h) = &r.header {
        let _ = writeln!(out, "\nHeader mapping");
        grid(
            &mut out,
            &[
                "Program Name",
                "(# Header Fields, Total Bitwidth)",
                "Total PHV Bitwidth",
                "Waste (%)",
                "Ex. time (in ms)",
            ],
            &[vec![
                name.clone(),
                format!("({}, {})", h.field_count, h.used_bits),
                h.allocated_bits.to_string(),
                format!("{:.2}", h.waste_percent),
                ms(h.elapsed_ms),
            ]],
        );
    }
    if let Some(p) = &r.parser {
        let _ = writeln!(out, "\nParser mapping");
        grid(
            &mut out,
            &[
                "Program Name",
                "# States in Parse Graph",
                "# Edges in Parse Graph",
                "Req. TCAM Entries",
                "Ex. time (in ms)",
            ],
            &[vec![
                name.clone(),
                p.states.to_string(),
                p.edges.to_string(),
                p.entry_count.to_string(),
                ms(p.elapsed_ms),
            ]],
        );
        let _ = writeln!(out, "TCAM utilization: {:.2}% of {} entries", p.capacity_percent, p.capacity);
    }
    if let Some(t) = &r.tdg {
        let _ = writeln!(out, "\nTDG mapping");
        grid(
            &mut out,
            &[
                "Program Name",
                "# Nodes in TDG",
                "# Edges in TDG",
                "Stages",
                "Latency (in cycle)",
                "# TCAM Block Usage",
                "# SRAM Block Usage",
                "Ex. Time (in ms)",
            ],
            &[vec![
                name,
                t.nodes.to_string(),
                t.edges.to_string(),
                t.stages_used.to_string(),
                t.latency_cycles.to_string(),
                t.tcam_blocks.to_string(),
                t.sram_blocks.to_string(),
                ms(t.elapsed_ms),
            ]],
        );
        for p in &t.pipelines {
            let _ = writeln!(out, "{}: {} tables, {} edges, {} stages", p.name, p.nodes, p.edges, p.stages_used);
        }
        let _ = writeln!(out, "\nPer-stage usage");
        let rows: Vec<Vec<String>> = t
            .per_stage
            .iter()
            .map(|s| {
                vec![
                    s.stage.to_string(),
                    s.tables.len().to_string(),
                    s.tcam_blocks.to_string(),
                    s.sram_match_blocks.to_string(),
                    s.sram_action_blocks.to_string(),
                    s.sram_stateful_blocks.to_string(),
                    s.vliw_slots.to_string(),
                    format!("{}/{}/{}", s.tcam_crossbar_bits, s.sram_crossbar_bits, s.action_crossbar_bits),
                ]
            })
            .collect();
        grid(
            &mut out,
            &["Stage", "Tables", "TCAM", "SRAM match", "SRAM action", "SRAM stateful", "VLIW", "Crossbar T/S/A bits"],
            &rows,
        );
    }
    for d in &r.diagnostics {
        let _ = writeln!(out, "{d}");
    }
    for n in &r.provenance.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}
