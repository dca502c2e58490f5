//! Table dependency graph to match-action stage mapping.
//!
//! The pipeline is: merge parallel dependency edges, label tables with
//! levels, then place level by level onto a stage ledger shared by ingress
//! and egress. Exact tables live in SRAM hash units and may spill into
//! TCAM; ternary, lpm and range tables live in TCAM. A table too large for
//! one stage spreads over consecutive stages. Latency comes from a
//! configurable per-boundary cost model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsl::HardwareSpec;
use crate::ir::{build_tdg, DependencyKind, IrError, IrProgram};

mod levels;
mod memory;
mod place;

pub use levels::{assign_levels, colocate_levels, reduce_dependencies, ColocationConflict, LevelAssignment, StrictDag};
pub use memory::{
    entries_per_unit, sram_action_blocks, sram_blocks_needed, sram_match_blocks, sram_stateful_blocks,
    tcam_blocks_needed, ActionMode, EntryTooWide, ExternDemand, MatchClass, MemoryFootprint, Resource, SramSizing,
    SramSizingResult, TableDemand,
};
pub use place::{
    place_tables, MemoryKind, PlacementError, PlacementOptions, StageLedger, StagePortion, StageUsage, StatefulPolicy,
    TablePlacement,
};

/// Cycle costs of crossing a stage boundary, by the strictest dependency crossing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatencyCosts {
    pub match_cost: u64,
    pub action_cost: u64,
    pub other_cost: u64,
    pub base: u64,
}

impl Default for LatencyCosts {
    fn default() -> Self {
        LatencyCosts { match_cost: 12, action_cost: 3, other_cost: 1, base: 12 }
    }
}

impl LatencyCosts {
    pub fn cost(&self, kind: DependencyKind) -> u64 {
        match kind {
            DependencyKind::Match => self.match_cost,
            DependencyKind::Action => self.action_cost,
            _ => self.other_cost,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: String,
    pub to: String,
    pub kind: DependencyKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineMapping {
    pub name: String,
    pub nodes: usize,
    /// Dependency edges, one per related pair.
    pub edges: Vec<DagEdge>,
    /// Extra ordering edges added by the serialize stateful policy.
    pub policy_edges: Vec<DagEdge>,
    pub levels: BTreeMap<String, u32>,
    pub placements: Vec<TablePlacement>,
    pub stages_used: u32,
}

impl PipelineMapping {
    pub fn placement(&self, table: &str) -> Option<&TablePlacement> {
        self.placements.iter().find(|p| p.table == table)
    }

    /// Dependency and policy edges together.
    pub fn all_edges(&self) -> impl Iterator<Item = &DagEdge> {
        self.edges.iter().chain(&self.policy_edges)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdgMapping {
    pub pipelines: Vec<PipelineMapping>,
    /// Combined use of every occupied stage, indexed by stage.
    pub per_stage: Vec<StageUsage>,
    pub stages_used: u32,
    pub latency_cycles: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TdgOptions {
    pub placement: PlacementOptions,
    pub latency: LatencyCosts,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TdgMapError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("pipeline exhausted in `{pipeline}`: table `{table}` does not fit ({resource})")]
    Exhausted { pipeline: String, table: String, resource: Resource },
    #[error("entry wider than packing unit: {role} entry of table `{table}` is {width} bits, unit holds {limit}")]
    EntryTooWide { table: String, role: &'static str, width: u64, limit: u64 },
    #[error("stateful co-location infeasible in `{pipeline}`: tables {} cannot share a stage", .group.join(", "))]
    Colocation { pipeline: String, group: Vec<String> },
}

impl TdgMapError {
    pub fn element(&self) -> String {
        match self {
            TdgMapError::Ir(e) => e.element(),
            TdgMapError::Exhausted { table, .. } | TdgMapError::EntryTooWide { table, .. } => table.clone(),
            TdgMapError::Colocation { group, .. } => group.join(","),
        }
    }

    pub fn resource(&self) -> String {
        match self {
            TdgMapError::Ir(IrError::Cycle { .. }) => "control flow".into(),
            TdgMapError::Ir(_) => "program".into(),
            TdgMapError::Exhausted { resource, .. } => resource.to_string(),
            TdgMapError::EntryTooWide { .. } => Resource::EntryWidth.to_string(),
            TdgMapError::Colocation { .. } => "stateful co-location".into(),
        }
    }
}

fn named_edges(dag: &StrictDag, edges: &[(usize, usize, DependencyKind)]) -> Vec<DagEdge> {
    edges.iter().map(|&(a, b, kind)| DagEdge { from: dag.names[a].clone(), to: dag.names[b].clone(), kind }).collect()
}

/// Maps one pipeline given its reduced dependency graph and table demands.
pub fn map_dag(
    pipeline: &str,
    dag: &StrictDag,
    demands: &[TableDemand],
    spec: &HardwareSpec,
    opts: &PlacementOptions,
    ledger: &mut StageLedger,
) -> Result<PipelineMapping, TdgMapError> {
    let mut working = dag.clone();
    let mut policy_edges = Vec::new();
    if opts.stateful_policy == StatefulPolicy::Serialize {
        for g in &dag.stateful_groups {
            let mut members: Vec<usize> = g.iter().copied().collect();
            members.sort_by_key(|m| dag.tdg_order[*m]);
            for w in members.windows(2) {
                if working.kind(w[0], w[1]).is_none_or(|k| !k.is_strict()) {
                    policy_edges.push((w[0], w[1], DependencyKind::Action));
                }
                working.add_edge(w[0], w[1], DependencyKind::Action);
            }
        }
    }
    let mut levels = assign_levels(&working);
    if opts.stateful_policy == StatefulPolicy::Colocate {
        levels = colocate_levels(&working, &levels)
            .map_err(|c| TdgMapError::Colocation { pipeline: pipeline.to_string(), group: c.group })?;
    }
    let placements = place_tables(pipeline, &working, &levels, demands, spec, opts, ledger).map_err(|e| match e {
        PlacementError::Exhausted { table, resource } => {
            TdgMapError::Exhausted { pipeline: pipeline.to_string(), table, resource }
        }
        PlacementError::EntryTooWide { table, role, width, limit } => {
            TdgMapError::EntryTooWide { table, role, width, limit }
        }
        PlacementError::Colocation { group } => TdgMapError::Colocation { pipeline: pipeline.to_string(), group },
    })?;
    let stages_used = placements.iter().map(|p| p.last_stage() + 1).max().unwrap_or(0);
    Ok(PipelineMapping {
        name: pipeline.to_string(),
        nodes: dag.len(),
        edges: named_edges(dag, &dag.edges),
        policy_edges: named_edges(dag, &policy_edges),
        levels: dag.names.iter().cloned().zip(levels.levels.iter().copied()).collect(),
        placements,
        stages_used,
    })
}

/// Pipelines in mapping order: ingress first, the rest as declared.
fn pipeline_order(program: &IrProgram) -> Vec<&str> {
    let mut names: Vec<&str> = program.pipelines.iter().map(|p| p.name.as_str()).collect();
    names.sort_by_key(|n| *n != "ingress");
    names
}

/// Maps every pipeline of the program onto the switch's stages.
pub fn map_tdg(program: &IrProgram, spec: &HardwareSpec, opts: &TdgOptions) -> Result<TdgMapping, TdgMapError> {
    let mut ledger = StageLedger::default();
    let mut pipelines = Vec::new();
    for name in pipeline_order(program) {
        let tdg = build_tdg(program, name)?;
        let p = program.pipeline(name).expect("pipeline exists");
        let demands: Vec<TableDemand> = (0..p.tables.len()).map(|t| TableDemand::from_table(program, p, t)).collect();
        let dag = reduce_dependencies(&tdg);
        pipelines.push(map_dag(name, &dag, &demands, spec, &opts.placement, &mut ledger)?);
    }
    Ok(finish(pipelines, ledger, &opts.latency))
}

/// Assembles the whole-switch mapping from mapped pipelines.
pub fn finish(pipelines: Vec<PipelineMapping>, ledger: StageLedger, costs: &LatencyCosts) -> TdgMapping {
    let mut per_stage = ledger.stages;
    while per_stage.last().is_some_and(|u| u.tables.is_empty()) {
        per_stage.pop();
    }
    let stages_used = pipelines.iter().map(|p| p.stages_used).max().unwrap_or(0);
    let mut m = TdgMapping { pipelines, per_stage, stages_used, latency_cycles: 0 };
    m.latency_cycles = compute_latency(&m, costs);
    m
}

fn pipeline_latency(p: &PipelineMapping, costs: &LatencyCosts) -> u64 {
    let occupied: BTreeSet<u32> = p.placements.iter().flat_map(|t| t.stages()).collect();
    if occupied.is_empty() {
        return 0;
    }
    let span: BTreeMap<&str, (u32, u32)> =
        p.placements.iter().map(|t| (t.table.as_str(), (t.first_stage(), t.last_stage()))).collect();
    let stages: Vec<u32> = occupied.into_iter().collect();
    let mut total = costs.base;
    for w in stages.windows(2) {
        let (a, b) = (w[0], w[1]);
        let kind = p
            .all_edges()
            .filter(|e| span[e.from.as_str()].1 <= a && span[e.to.as_str()].0 >= b)
            .map(|e| e.kind)
            .max_by_key(|k| k.strictness())
            .unwrap_or(DependencyKind::None);
        total += costs.cost(kind);
    }
    total
}

/// Base cost plus, for each pair of consecutive occupied stages, the cost of
/// the strictest dependency crossing between them. Summed over pipelines.
pub fn compute_latency(m: &TdgMapping, costs: &LatencyCosts) -> u64 {
    m.pipelines.iter().map(|p| pipeline_latency(p, costs)).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: u32,
    pub tables: Vec<String>,
    pub tcam_blocks: u64,
    pub sram_match_blocks: u64,
    pub sram_action_blocks: u64,
    pub sram_stateful_blocks: u64,
    pub sram_blocks: u64,
    pub vliw_slots: u64,
    pub tcam_crossbar_bits: u64,
    pub sram_crossbar_bits: u64,
    pub action_crossbar_bits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdgSummary {
    pub rows: Vec<StageRow>,
    pub totals: MemoryFootprint,
    pub tcam_blocks: u64,
    pub sram_blocks: u64,
}

/// Per-stage utilization rows and whole-switch totals.
pub fn summarize(m: &TdgMapping) -> TdgSummary {
    let mut totals = MemoryFootprint::default();
    let mut rows = Vec::new();
    for (i, u) in m.per_stage.iter().enumerate() {
        if u.tables.is_empty() {
            continue;
        }
        let f = u.footprint;
        totals += f;
        rows.push(StageRow {
            stage: i as u32,
            tables: u.tables.clone(),
            tcam_blocks: f.tcam_blocks,
            sram_match_blocks: f.sram_match_blocks,
            sram_action_blocks: f.sram_action_blocks,
            sram_stateful_blocks: f.sram_stateful_blocks,
            sram_blocks: f.sram_blocks(),
            vliw_slots: f.vliw_slots,
            tcam_crossbar_bits: f.tcam_crossbar_bits,
            sram_crossbar_bits: f.sram_crossbar_bits,
            action_crossbar_bits: f.action_crossbar_bits,
        });
    }
    TdgSummary { rows, tcam_blocks: totals.tcam_blocks, sram_blocks: totals.sram_blocks(), totals }
}
