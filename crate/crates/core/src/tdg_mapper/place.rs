use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::levels::{LevelAssignment, StrictDag};
use super::memory::{
    sram_action_blocks, sram_match_blocks, sram_stateful_blocks, tcam_blocks_needed, ActionMode, ExternDemand,
    MatchClass, MemoryFootprint, Resource, SramSizing, TableDemand,
};
use crate::hsl::{HardwareSpec, StageSpec};
use crate::ir::ExternKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Sram,
    Tcam,
    /// Keyless tables use no match memory.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePortion {
    pub stage: u32,
    pub entries: u64,
    pub memory: MemoryKind,
    /// Match, action, VLIW and crossbar use; stateful memory is accounted per stage.
    pub footprint: MemoryFootprint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TablePlacement {
    pub pipeline: String,
    pub table: String,
    pub tdg_order: usize,
    pub level: u32,
    pub portions: Vec<StagePortion>,
    /// Stateful objects the table accesses; they live in its stage.
    pub externs: Vec<String>,
}

impl TablePlacement {
    pub fn first_stage(&self) -> u32 {
        self.portions.first().map_or(0, |p| p.stage)
    }

    pub fn last_stage(&self) -> u32 {
        self.portions.last().map_or(0, |p| p.stage)
    }

    pub fn stages(&self) -> impl Iterator<Item = u32> + '_ {
        self.portions.iter().map(|p| p.stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatefulPolicy {
    /// Tables sharing a stateful object go to the same stage.
    Colocate,
    /// Tables sharing a stateful object are chained by action dependencies.
    Serialize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacementOptions {
    pub action_mode: ActionMode,
    pub action_mode_overrides: BTreeMap<String, ActionMode>,
    pub pointer_overhead_bits: u32,
    pub stateful_policy: StatefulPolicy,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            action_mode: ActionMode::PerEntry,
            action_mode_overrides: BTreeMap::new(),
            pointer_overhead_bits: 16,
            stateful_policy: StatefulPolicy::Colocate,
        }
    }
}

impl PlacementOptions {
    pub(crate) fn mode_for(&self, table: &str) -> ActionMode {
        self.action_mode_overrides.get(table).copied().unwrap_or(self.action_mode)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlacementError {
    Exhausted { table: String, resource: Resource },
    EntryTooWide { table: String, role: &'static str, width: u64, limit: u64 },
    Colocation { group: Vec<String> },
}

/// Aggregate use of one physical stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub footprint: MemoryFootprint,
    pub externs: BTreeSet<String>,
    pub tables: Vec<String>,
    #[serde(skip)]
    extern_ids: BTreeSet<(String, usize)>,
    #[serde(skip)]
    extern_kinds: BTreeMap<ExternKind, u32>,
}

impl StageUsage {
    /// Usage after adding a portion, or the first exceeded resource.
    fn with(
        &self,
        pipeline: &str,
        add: &MemoryFootprint,
        table: &str,
        externs: &[ExternDemand],
        s: &StageSpec,
    ) -> Result<StageUsage, Resource> {
        let mut next = self.clone();
        next.footprint += *add;
        for e in externs {
            if next.extern_ids.insert((pipeline.to_string(), e.id)) {
                next.footprint.sram_stateful_blocks += sram_stateful_blocks(e.bits, s);
                next.externs.insert(e.name.clone());
                *next.extern_kinds.entry(e.kind).or_default() += 1;
            }
        }
        if let Some(r) = next.footprint.violation(s) {
            return Err(r);
        }
        if let Some(limits) = &s.extern_units {
            for (kind, used) in &next.extern_kinds {
                if limits.get(kind.as_str()).is_some_and(|cap| used > cap) {
                    return Err(Resource::ExternUnits);
                }
            }
        }
        next.tables.push(table.to_string());
        Ok(next)
    }
}

/// Per-stage usage shared by every pipeline placed on the same switch. It
/// grows on demand; the stage budget is only checked after each placement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageLedger {
    pub stages: Vec<StageUsage>,
}

impl StageLedger {
    fn stage(&self, i: u32) -> StageUsage {
        self.stages.get(i as usize).cloned().unwrap_or_default()
    }

    fn set(&mut self, i: u32, u: StageUsage) {
        let i = i as usize;
        if self.stages.len() <= i {
            self.stages.resize_with(i + 1, StageUsage::default);
        }
        self.stages[i] = u;
    }

    /// First stage index at or after `from` that holds nothing, always exists.
    fn first_empty_from(&self, from: u32) -> u32 {
        (from..).find(|s| self.stages.get(*s as usize).is_none_or(|u| u.tables.is_empty())).expect("unbounded")
    }
}

struct Ctx<'a> {
    spec: &'a StageSpec,
    sizing: SramSizing,
    opts: &'a PlacementOptions,
    pipeline: &'a str,
}

impl Ctx<'_> {
    fn memories(&self, d: &TableDemand) -> &'static [MemoryKind] {
        match d.match_class {
            MatchClass::NonExact => &[MemoryKind::Tcam],
            MatchClass::Exact => &[MemoryKind::Sram, MemoryKind::Tcam],
            MatchClass::Keyless => &[MemoryKind::None],
        }
    }

    /// Footprint of `entries` entries of `d` in `mem`; `None` if the
    /// match entry does not fit that memory's packing unit.
    fn portion(
        &self,
        d: &TableDemand,
        entries: u64,
        mem: MemoryKind,
    ) -> Result<Option<MemoryFootprint>, PlacementError> {
        let mut fp = MemoryFootprint {
            vliw_slots: u64::from(d.vliw_slots),
            action_crossbar_bits: u64::from(d.action_crossbar_bits),
            ..Default::default()
        };
        match mem {
            MemoryKind::Tcam => {
                fp.tcam_blocks = tcam_blocks_needed(d.key_width, entries, self.spec);
                fp.tcam_crossbar_bits = u64::from(d.key_width);
            }
            MemoryKind::Sram => match sram_match_blocks(d.key_width, entries, self.spec, self.sizing) {
                Ok(b) => {
                    fp.sram_match_blocks = b;
                    fp.sram_crossbar_bits = u64::from(d.key_width);
                }
                Err(_) => return Ok(None),
            },
            MemoryKind::None => {}
        }
        fp.sram_action_blocks =
            sram_action_blocks(d.action_width, entries, self.opts.mode_for(&d.name), self.spec, self.sizing).map_err(
                |e| PlacementError::EntryTooWide {
                    table: d.name.clone(),
                    role: "action",
                    width: e.width,
                    limit: e.limit,
                },
            )?;
        Ok(Some(fp))
    }

    /// Tries every memory option for `entries` entries on top of `usage`.
    fn try_fit(
        &self,
        usage: &StageUsage,
        d: &TableDemand,
        entries: u64,
    ) -> Result<Result<(StageUsage, MemoryKind, MemoryFootprint), Resource>, PlacementError> {
        let mut first_err = None;
        for &mem in self.memories(d) {
            let Some(fp) = self.portion(d, entries, mem)? else {
                first_err.get_or_insert(Resource::EntryWidth);
                continue;
            };
            match usage.with(self.pipeline, &fp, &d.name, &d.externs, self.spec) {
                Ok(u) => return Ok(Ok((u, mem, fp))),
                Err(r) => {
                    first_err.get_or_insert(r);
                }
            }
        }
        Ok(Err(first_err.unwrap_or(Resource::EntryWidth)))
    }

    /// Largest entry count in (0, cap] that fits on `usage`, with its fit.
    fn max_fit(
        &self,
        usage: &StageUsage,
        d: &TableDemand,
        cap: u64,
    ) -> Result<Option<(u64, StageUsage, MemoryKind, MemoryFootprint)>, PlacementError> {
        let mut best: Option<(u64, StageUsage, MemoryKind, MemoryFootprint)> = None;
        for &mem in self.memories(d) {
            let fits = |j: u64| -> Result<Option<(StageUsage, MemoryFootprint)>, PlacementError> {
                Ok(match self.portion(d, j, mem)? {
                    Some(fp) => usage.with(self.pipeline, &fp, &d.name, &d.externs, self.spec).ok().map(|u| (u, fp)),
                    None => None,
                })
            };
            let Some(mut found) = fits(1)? else { continue };
            let (mut lo, mut hi) = (1u64, cap);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                match fits(mid)? {
                    Some(f) => {
                        lo = mid;
                        found = f;
                    }
                    None => hi = mid - 1,
                }
            }
            if best.as_ref().is_none_or(|b| lo > b.0) {
                best = Some((lo, found.0, mem, found.1));
            }
        }
        Ok(best)
    }
}

enum Unit {
    Table(usize),
    Group(Vec<usize>),
}

/// Places one pipeline's tables onto the shared ledger.
pub fn place_tables(
    pipeline: &str,
    dag: &StrictDag,
    levels: &LevelAssignment,
    demands: &[TableDemand],
    spec: &HardwareSpec,
    opts: &PlacementOptions,
    ledger: &mut StageLedger,
) -> Result<Vec<TablePlacement>, PlacementError> {
    let ctx = Ctx {
        spec: &spec.stage,
        sizing: SramSizing { packing_factor: spec.packing_factor, pointer_overhead_bits: opts.pointer_overhead_bits },
        opts,
        pipeline,
    };
    let n = dag.len();
    let preds = dag.preds();
    let mut group_of: Vec<Option<usize>> = vec![None; n];
    if opts.stateful_policy == StatefulPolicy::Colocate {
        for (gi, g) in dag.stateful_groups.iter().enumerate() {
            for &m in g {
                group_of[m] = Some(gi);
            }
        }
    }

    let mut by_level: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        by_level.entry(levels.levels[v]).or_default().push(v);
    }

    let mut placed: Vec<Option<TablePlacement>> = vec![None; n];
    let mut floor = 0u32;
    for (&level, members) in &by_level {
        let in_level: BTreeSet<usize> = members.iter().copied().collect();
        let units = level_units(members, &group_of, dag);
        let order = order_units(&units, &in_level, &preds, demands).ok_or_else(|| PlacementError::Colocation {
            group: members.iter().map(|m| dag.names[*m].clone()).collect(),
        })?;
        let mut level_end = floor;
        for ui in order {
            let tables: Vec<usize> = match &units[ui] {
                Unit::Table(t) => vec![*t],
                Unit::Group(g) => g.clone(),
            };
            let mut earliest = floor;
            for &t in &tables {
                for &(u, k) in &preds[t] {
                    if let Some(p) = &placed[u] {
                        earliest = earliest.max(if k.is_strict() { p.last_stage() + 1 } else { p.last_stage() });
                    }
                }
            }
            let portions = match &units[ui] {
                Unit::Table(t) => {
                    place_single(&ctx, &demands[*t], earliest, spec.num_stages, ledger).map(|p| vec![(*t, p)])
                }
                Unit::Group(g) => place_bundle(&ctx, g, demands, earliest, spec.num_stages, ledger),
            }?;
            for (t, p) in portions {
                level_end = level_end.max(p.last().map_or(0, |x| x.stage));
                placed[t] = Some(TablePlacement {
                    pipeline: pipeline.to_string(),
                    table: demands[t].name.clone(),
                    tdg_order: demands[t].tdg_order,
                    level,
                    portions: p,
                    externs: demands[t].externs.iter().map(|e| e.name.clone()).collect(),
                });
            }
        }
        floor = level_end;
    }
    let mut out: Vec<TablePlacement> = placed.into_iter().map(|p| p.expect("every table placed")).collect();
    out.sort_by_key(|p| (p.first_stage(), p.tdg_order));
    Ok(out)
}

fn level_units(members: &[usize], group_of: &[Option<usize>], dag: &StrictDag) -> Vec<Unit> {
    let mut units = Vec::new();
    let mut seen_groups = BTreeSet::new();
    for &m in members {
        match group_of[m] {
            Some(g) => {
                if seen_groups.insert(g) {
                    let mut g_members: Vec<usize> =
                        dag.stateful_groups[g].iter().copied().filter(|x| members.contains(x)).collect();
                    g_members.sort_by_key(|x| dag.tdg_order[*x]);
                    units.push(Unit::Group(g_members));
                }
            }
            None => units.push(Unit::Table(m)),
        }
    }
    units
}

/// Orders a level's units so weak same-level predecessors go first, preferring
/// non-exact tables and then earlier TDG order. `None` if units depend on each other cyclically.
fn order_units(
    units: &[Unit],
    in_level: &BTreeSet<usize>,
    preds: &[Vec<(usize, crate::ir::DependencyKind)>],
    demands: &[TableDemand],
) -> Option<Vec<usize>> {
    let mut unit_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (ui, u) in units.iter().enumerate() {
        match u {
            Unit::Table(t) => {
                unit_of.insert(*t, ui);
            }
            Unit::Group(g) => {
                for &t in g {
                    unit_of.insert(t, ui);
                }
            }
        }
    }
    let tables_of = |u: &Unit| -> Vec<usize> {
        match u {
            Unit::Table(t) => vec![*t],
            Unit::Group(g) => g.clone(),
        }
    };
    let key = |ui: usize| {
        let ts = tables_of(&units[ui]);
        let class = ts.iter().map(|t| demands[*t].match_class != MatchClass::NonExact).min().unwrap_or(true);
        let ord = ts.iter().map(|t| demands[*t].tdg_order).min().unwrap_or(0);
        (class, ord, ui)
    };
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); units.len()];
    for (ui, u) in units.iter().enumerate() {
        for t in tables_of(u) {
            for &(p, _) in &preds[t] {
                if in_level.contains(&p) {
                    let pu = unit_of[&p];
                    if pu != ui {
                        deps[ui].insert(pu);
                    }
                }
            }
        }
    }
    let mut done = vec![false; units.len()];
    let mut out = Vec::with_capacity(units.len());
    while out.len() < units.len() {
        let next =
            (0..units.len()).filter(|&u| !done[u] && deps[u].iter().all(|d| done[*d])).min_by_key(|&u| key(u))?;
        done[next] = true;
        out.push(next);
    }
    Some(out)
}

fn exhausted(d: &TableDemand, resource: Resource) -> PlacementError {
    PlacementError::Exhausted { table: d.name.clone(), resource }
}

/// Resource that blocked the table inside the real pipeline, for the rejection message.
fn blocking_resource(
    ctx: &Ctx,
    d: &TableDemand,
    earliest: u32,
    num_stages: u32,
    ledger: &StageLedger,
) -> Result<Resource, PlacementError> {
    if earliest >= num_stages {
        return Ok(Resource::Stages);
    }
    let mut last = Resource::Stages;
    for s in earliest..num_stages {
        if let Err(r) = ctx.try_fit(&ledger.stage(s), d, d.entries)? {
            last = r;
        }
    }
    Ok(last)
}

fn place_single(
    ctx: &Ctx,
    d: &TableDemand,
    earliest: u32,
    num_stages: u32,
    ledger: &mut StageLedger,
) -> Result<Vec<StagePortion>, PlacementError> {
    let empty = StageUsage::default();
    let portions = match ctx.try_fit(&empty, d, d.entries)? {
        Ok(_) => {
            // Fits a fresh stage, so first fit terminates by the first empty stage.
            let stop = ledger.first_empty_from(earliest);
            let mut chosen = None;
            for s in earliest..=stop {
                if let Ok((u, mem, fp)) = ctx.try_fit(&ledger.stage(s), d, d.entries)? {
                    chosen = Some((s, u, mem, fp));
                    break;
                }
            }
            let (s, u, mem, fp) = chosen.expect("an empty stage always fits");
            if s >= num_stages {
                let r = blocking_resource(ctx, d, earliest, num_stages, ledger)?;
                return Err(exhausted(d, r));
            }
            ledger.set(s, u);
            vec![StagePortion { stage: s, entries: d.entries, memory: mem, footprint: fp }]
        }
        Err(r) if d.is_stateful() => return Err(exhausted(d, r)),
        Err(r) => {
            if ctx.max_fit(&empty, d, d.entries)?.is_none() {
                return Err(exhausted(d, r));
            }
            let chain = split_chain(ctx, d, earliest, ledger)?;
            if chain.last().is_some_and(|(s, ..)| *s >= num_stages) {
                let r2 = blocking_resource(ctx, d, earliest, num_stages, ledger)?;
                return Err(exhausted(d, if r2 == Resource::Stages { r } else { r2 }));
            }
            let mut out = Vec::with_capacity(chain.len());
            for (s, entries, u, mem, fp) in chain {
                ledger.set(s, u);
                out.push(StagePortion { stage: s, entries, memory: mem, footprint: fp });
            }
            out
        }
    };
    Ok(portions)
}

type ChainStep = (u32, u64, StageUsage, MemoryKind, MemoryFootprint);

/// Spreads an oversized table over consecutive stages, each taking as many
/// entries as it can.
fn split_chain(
    ctx: &Ctx,
    d: &TableDemand,
    earliest: u32,
    ledger: &StageLedger,
) -> Result<Vec<ChainStep>, PlacementError> {
    let mut start = earliest;
    'starts: loop {
        let mut chain = Vec::new();
        let mut remaining = d.entries;
        let mut s = start;
        while remaining > 0 {
            match ctx.max_fit(&ledger.stage(s), d, remaining)? {
                Some((j, u, mem, fp)) => {
                    chain.push((s, j, u, mem, fp));
                    remaining -= j;
                    s += 1;
                }
                None => {
                    start = s + 1;
                    continue 'starts;
                }
            }
        }
        return Ok(chain);
    }
}

/// A bundle placed on one stage, or the member and resource that did not fit.
type GroupFit = Result<(StageUsage, Vec<StagePortion>), (usize, Resource)>;

fn place_bundle(
    ctx: &Ctx,
    group: &[usize],
    demands: &[TableDemand],
    earliest: u32,
    num_stages: u32,
    ledger: &mut StageLedger,
) -> Result<Vec<(usize, Vec<StagePortion>)>, PlacementError> {
    let fit_on = |base: &StageUsage| -> Result<GroupFit, PlacementError> {
        let mut u = base.clone();
        let mut portions = Vec::with_capacity(group.len());
        for &t in group {
            match ctx.try_fit(&u, &demands[t], demands[t].entries)? {
                Ok((next, mem, fp)) => {
                    u = next;
                    portions.push(StagePortion { stage: 0, entries: demands[t].entries, memory: mem, footprint: fp });
                }
                Err(r) => return Ok(Err((t, r))),
            }
        }
        Ok(Ok((u, portions)))
    };
    if let Err((t, r)) = fit_on(&StageUsage::default())? {
        return Err(exhausted(&demands[t], r));
    }
    let stop = ledger.first_empty_from(earliest);
    for s in earliest..=stop {
        match fit_on(&ledger.stage(s))? {
            Ok((u, mut portions)) => {
                if s >= num_stages {
                    let mut blocking = (group[0], Resource::Stages);
                    for s2 in earliest..num_stages {
                        if let Err(b) = fit_on(&ledger.stage(s2))? {
                            blocking = b;
                        }
                    }
                    return Err(exhausted(&demands[blocking.0], blocking.1));
                }
                ledger.set(s, u);
                for p in &mut portions {
                    p.stage = s;
                }
                return Ok(group.iter().copied().zip(portions.into_iter().map(|p| vec![p])).collect());
            }
            Err(_) => continue,
        }
    }
    unreachable!("an empty stage fits the bundle")
}
