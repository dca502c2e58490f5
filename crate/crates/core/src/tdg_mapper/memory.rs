use std::collections::BTreeSet;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::hsl::{HardwareSpec, SramPartitions, StageSpec};
use crate::ir::{ExternId, ExternKind, FieldId, IrProgram, Pipeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchClass {
    /// Ternary, lpm or range on at least one field.
    NonExact,
    Exact,
    /// No match fields; always runs its default action.
    Keyless,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternDemand {
    pub id: usize,
    pub name: String,
    pub kind: ExternKind,
    pub bits: u64,
}

/// Per-table resource facts the placer works from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDemand {
    pub name: String,
    pub tdg_order: usize,
    pub key_width: u32,
    pub entries: u64,
    pub match_class: MatchClass,
    pub vliw_slots: u32,
    /// Widest action's parameter bits; zero means no action memory.
    pub action_width: u32,
    pub action_crossbar_bits: u32,
    pub externs: Vec<ExternDemand>,
}

impl TableDemand {
    pub fn from_table(program: &IrProgram, pipeline: &Pipeline, table: usize) -> Self {
        let t = &pipeline.tables[table];
        let key_width = t.match_fields.iter().map(|m| program.field_width(m.field)).sum();
        let match_class = if t.is_keyless() {
            MatchClass::Keyless
        } else if t.is_exact() {
            MatchClass::Exact
        } else {
            MatchClass::NonExact
        };
        let actions: Vec<_> = t.actions.iter().map(|a| program.action(*a)).collect();
        let read: BTreeSet<FieldId> = actions.iter().flat_map(|a| a.reads.iter().copied()).collect();
        let externs = t
            .extern_refs
            .iter()
            .map(|&ExternId(id)| {
                let e = &program.externs[id];
                ExternDemand { id, name: e.name.clone(), kind: e.kind, bits: e.total_bits() }
            })
            .collect();
        TableDemand {
            name: t.name.clone(),
            tdg_order: t.tdg_order,
            key_width,
            entries: if t.is_keyless() { 1 } else { t.max_entries },
            match_class,
            vliw_slots: actions.len() as u32,
            action_width: actions.iter().map(|a| a.arg_width_total).max().unwrap_or(0),
            action_crossbar_bits: read.iter().map(|f| program.field_width(*f)).sum(),
            externs,
        }
    }

    pub fn is_stateful(&self) -> bool {
        !self.externs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "entries")]
pub enum ActionMode {
    /// One action entry per match entry.
    PerEntry,
    /// A fixed number of action entries shared by all match entries.
    Fixed(u64),
}

/// Memory and crossbar use of one table portion (or a whole stage).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub tcam_blocks: u64,
    pub sram_match_blocks: u64,
    pub sram_action_blocks: u64,
    pub sram_stateful_blocks: u64,
    pub vliw_slots: u64,
    pub tcam_crossbar_bits: u64,
    pub sram_crossbar_bits: u64,
    pub action_crossbar_bits: u64,
}

impl MemoryFootprint {
    pub fn sram_blocks(&self) -> u64 {
        self.sram_match_blocks + self.sram_action_blocks + self.sram_stateful_blocks
    }

    /// First dimension in which `self` exceeds one stage.
    pub fn violation(&self, s: &StageSpec) -> Option<Resource> {
        let checks = [
            (self.tcam_blocks, u64::from(s.tcam_blocks), Resource::TcamBlocks),
            (self.sram_blocks(), u64::from(s.sram_blocks), Resource::SramBlocks),
            (self.vliw_slots, u64::from(s.vliw_slots), Resource::VliwSlots),
            (self.tcam_crossbar_bits, u64::from(s.tcam_crossbar_width), Resource::TcamCrossbar),
            (self.sram_crossbar_bits, u64::from(s.sram_crossbar_width), Resource::SramCrossbar),
            (self.action_crossbar_bits, u64::from(s.action_crossbar_width), Resource::ActionCrossbar),
        ];
        if let Some((_, _, r)) = checks.iter().find(|(used, cap, _)| used > cap) {
            return Some(*r);
        }
        if let SramPartitions::Fixed { match_blocks, action_blocks, stateful_blocks } = s.sram_partitions {
            if self.sram_match_blocks > u64::from(match_blocks) {
                return Some(Resource::SramMatchPartition);
            }
            if self.sram_action_blocks > u64::from(action_blocks) {
                return Some(Resource::SramActionPartition);
            }
            if self.sram_stateful_blocks > u64::from(stateful_blocks) {
                return Some(Resource::SramStatefulPartition);
            }
        }
        None
    }
}

impl AddAssign for MemoryFootprint {
    fn add_assign(&mut self, o: Self) {
        self.tcam_blocks += o.tcam_blocks;
        self.sram_match_blocks += o.sram_match_blocks;
        self.sram_action_blocks += o.sram_action_blocks;
        self.sram_stateful_blocks += o.sram_stateful_blocks;
        self.vliw_slots += o.vliw_slots;
        self.tcam_crossbar_bits += o.tcam_crossbar_bits;
        self.sram_crossbar_bits += o.sram_crossbar_bits;
        self.action_crossbar_bits += o.action_crossbar_bits;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    TcamBlocks,
    SramBlocks,
    SramMatchPartition,
    SramActionPartition,
    SramStatefulPartition,
    VliwSlots,
    TcamCrossbar,
    SramCrossbar,
    ActionCrossbar,
    ExternUnits,
    EntryWidth,
    Stages,
}

impl Resource {
    pub fn as_str(self) -> &'static str {
        match self {
            Resource::TcamBlocks => "TCAM blocks",
            Resource::SramBlocks => "SRAM blocks",
            Resource::SramMatchPartition => "SRAM match partition",
            Resource::SramActionPartition => "SRAM action partition",
            Resource::SramStatefulPartition => "SRAM stateful partition",
            Resource::VliwSlots => "VLIW slots",
            Resource::TcamCrossbar => "TCAM match crossbar",
            Resource::SramCrossbar => "SRAM match crossbar",
            Resource::ActionCrossbar => "action crossbar",
            Resource::ExternUnits => "extern units",
            Resource::EntryWidth => "entry width",
            Resource::Stages => "stages",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// TCAM blocks for `entries` keys of `key_width` bits.
pub fn tcam_blocks_needed(key_width: u32, entries: u64, s: &StageSpec) -> u64 {
    if key_width == 0 || entries == 0 {
        return 0;
    }
    u64::from(key_width.div_ceil(s.tcam_width)) * entries.div_ceil(u64::from(s.tcam_depth))
}

/// An entry does not fit in one packing unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryTooWide {
    pub width: u64,
    pub limit: u64,
}

/// Entries of `width` bits one packing unit holds.
pub fn entries_per_unit(width: u64, s: &StageSpec, packing_factor: u32) -> Result<u64, EntryTooWide> {
    let unit_bits = u64::from(packing_factor) * u64::from(s.sram_width);
    let per_row = unit_bits / width.max(1);
    if per_row == 0 {
        return Err(EntryTooWide { width, limit: unit_bits });
    }
    Ok(per_row * u64::from(s.sram_depth))
}

/// Sizing knobs shared by every table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SramSizing {
    pub packing_factor: u32,
    pub pointer_overhead_bits: u32,
}

impl SramSizing {
    pub fn for_spec(spec: &HardwareSpec, pointer_overhead_bits: u32) -> Self {
        SramSizing { packing_factor: spec.packing_factor, pointer_overhead_bits }
    }
}

/// SRAM blocks holding `entries` exact-match keys, rounded to whole cuckoo ways.
pub fn sram_match_blocks(key_width: u32, entries: u64, s: &StageSpec, z: SramSizing) -> Result<u64, EntryTooWide> {
    let width = u64::from(key_width) + u64::from(z.pointer_overhead_bits);
    let per_unit = entries_per_unit(width, s, z.packing_factor)?;
    let blocks = entries.max(1).div_ceil(per_unit) * u64::from(z.packing_factor);
    let ways = u64::from(s.hash_ways.max(1));
    Ok(blocks.div_ceil(ways) * ways)
}

/// SRAM blocks for the action entries backing `match_entries` match entries.
pub fn sram_action_blocks(
    action_width: u32,
    match_entries: u64,
    mode: ActionMode,
    s: &StageSpec,
    z: SramSizing,
) -> Result<u64, EntryTooWide> {
    if action_width == 0 {
        return Ok(0);
    }
    let entries = match mode {
        ActionMode::PerEntry => match_entries,
        ActionMode::Fixed(k) => k,
    };
    if entries == 0 {
        return Ok(0);
    }
    let per_unit = entries_per_unit(u64::from(action_width), s, z.packing_factor)?;
    Ok(entries.div_ceil(per_unit) * u64::from(z.packing_factor))
}

/// SRAM blocks holding a stateful object of `bits` bits.
pub fn sram_stateful_blocks(bits: u64, s: &StageSpec) -> u64 {
    bits.div_ceil(u64::from(s.sram_width) * u64::from(s.sram_depth))
}

/// Footprint summary of sizing one table whole, as used by the report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SramSizingResult {
    pub match_blocks: Result<u64, EntryTooWide>,
    pub action_blocks: Result<u64, EntryTooWide>,
    pub stateful_blocks: u64,
}

/// Sizes the SRAM of a whole table without placing it.
pub fn sram_blocks_needed(t: &TableDemand, s: &StageSpec, z: SramSizing, mode: ActionMode) -> SramSizingResult {
    let match_blocks = match t.match_class {
        MatchClass::Exact => sram_match_blocks(t.key_width, t.entries, s, z),
        _ => Ok(0),
    };
    SramSizingResult {
        match_blocks,
        action_blocks: sram_action_blocks(t.action_width, t.entries, mode, s, z),
        stateful_blocks: t.externs.iter().map(|e| sram_stateful_blocks(e.bits, s)).sum(),
    }
}
