//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigUint;
use rand::Rng;
use rmt_mapper::hsl::{HardwareSpec, ParserSpec, PhvSpec, SramPartitions, StageSpec};
use rmt_mapper::ir::{
    build_tdg, DependencyKind, HeaderField, IrProgram, ParseEdge, ParseGraph, ParseNode, ParseTarget, SelectKey,
};
use rmt_mapper::tdg_mapper::{
    ActionMode, MatchClass, MemoryKind, PlacementOptions, StatefulPolicy, TableDemand, TdgMapping,
};

pub const ALL_KINDS: [DependencyKind; 5] = [
    DependencyKind::None,
    DependencyKind::Successor,
    DependencyKind::ReverseMatch,
    DependencyKind::Action,
    DependencyKind::Match,
];

fn strict(k: DependencyKind) -> bool {
    matches!(k, DependencyKind::Match | DependencyKind::Action)
}

// ---------------------------------------------------------------- levels

/// Level of every node as the largest number of strict edges on any path
/// ending at it, found by enumerating paths backwards.
pub fn path_enumeration_levels(n: usize, edges: &[(usize, usize, DependencyKind)]) -> Vec<u32> {
    let mut into: Vec<Vec<(usize, DependencyKind)>> = vec![Vec::new(); n];
    for &(a, b, k) in edges {
        if k != DependencyKind::None {
            into[b].push((a, k));
        }
    }
    fn walk(v: usize, into: &[Vec<(usize, DependencyKind)>], strict_so_far: u32, best: &mut u32) {
        *best = (*best).max(strict_so_far);
        for &(u, k) in &into[v] {
            walk(u, into, strict_so_far + u32::from(strict(k)), best);
        }
    }
    (0..n)
        .map(|v| {
            let mut best = 0;
            walk(v, &into, 0, &mut best);
            best
        })
        .collect()
}

/// Random DAG over `n` nodes with edges only from lower to higher ids.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<(usize, usize, DependencyKind)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(density) {
                edges.push((a, b, ALL_KINDS[rng.gen_range(0..ALL_KINDS.len())]));
            }
        }
    }
    edges
}

// ---------------------------------------------------------------- footprints

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Use {
    pub tcam: u64,
    pub sram_match: u64,
    pub sram_action: u64,
    pub sram_stateful: u64,
    pub vliw: u64,
    pub tcam_xbar: u64,
    pub sram_xbar: u64,
    pub action_xbar: u64,
}

impl Use {
    fn add(&mut self, o: &Use) {
        self.tcam += o.tcam;
        self.sram_match += o.sram_match;
        self.sram_action += o.sram_action;
        self.sram_stateful += o.sram_stateful;
        self.vliw += o.vliw;
        self.tcam_xbar += o.tcam_xbar;
        self.sram_xbar += o.sram_xbar;
        self.action_xbar += o.action_xbar;
    }

    fn sram(&self) -> u64 {
        self.sram_match + self.sram_action + self.sram_stateful
    }

    /// Names of every exceeded dimension.
    pub fn over(&self, s: &StageSpec) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut chk = |used: u64, cap: u32, name: &'static str| {
            if used > u64::from(cap) {
                v.push(name);
            }
        };
        chk(self.tcam, s.tcam_blocks, "tcam blocks");
        chk(self.sram(), s.sram_blocks, "sram blocks");
        chk(self.vliw, s.vliw_slots, "vliw slots");
        chk(self.tcam_xbar, s.tcam_crossbar_width, "tcam crossbar");
        chk(self.sram_xbar, s.sram_crossbar_width, "sram crossbar");
        chk(self.action_xbar, s.action_crossbar_width, "action crossbar");
        if let SramPartitions::Fixed { match_blocks, action_blocks, stateful_blocks } = s.sram_partitions {
            chk(self.sram_match, match_blocks, "sram match partition");
            chk(self.sram_action, action_blocks, "sram action partition");
            chk(self.sram_stateful, stateful_blocks, "sram stateful partition");
        }
        v
    }
}

fn ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Footprint of `entries` entries of a table in `mem`, or `None` when an
/// entry does not fit a packing unit.
pub fn footprint(
    d: &TableDemand,
    entries: u64,
    mem: MemoryKind,
    spec: &HardwareSpec,
    mode: ActionMode,
    overhead: u32,
) -> Option<Use> {
    let s = &spec.stage;
    let pf = u64::from(spec.packing_factor);
    let word = u64::from(s.sram_width);
    let depth = u64::from(s.sram_depth);
    let mut u = Use { vliw: u64::from(d.vliw_slots), action_xbar: u64::from(d.action_crossbar_bits), ..Use::default() };
    match mem {
        MemoryKind::Tcam => {
            if d.key_width > 0 {
                u.tcam = ceil(u64::from(d.key_width), u64::from(s.tcam_width)) * ceil(entries, u64::from(s.tcam_depth));
            }
            u.tcam_xbar = u64::from(d.key_width);
        }
        MemoryKind::Sram => {
            let per_row = pf * word / (u64::from(d.key_width) + u64::from(overhead));
            if per_row == 0 {
                return None;
            }
            let raw = ceil(entries.max(1), per_row * depth) * pf;
            let ways = u64::from(s.hash_ways.max(1));
            u.sram_match = ceil(raw, ways) * ways;
            u.sram_xbar = u64::from(d.key_width);
        }
        MemoryKind::None => {}
    }
    if d.action_width > 0 {
        let n = match mode {
            ActionMode::PerEntry => entries,
            ActionMode::Fixed(k) => k,
        };
        if n > 0 {
            let per_row = pf * word / u64::from(d.action_width);
            if per_row == 0 {
                return None;
            }
            u.sram_action = ceil(n, per_row * depth) * pf;
        }
    }
    Some(u)
}

pub fn stateful_blocks(bits: u64, s: &StageSpec) -> u64 {
    ceil(bits, u64::from(s.sram_width) * u64::from(s.sram_depth))
}

fn memories(c: MatchClass) -> &'static [MemoryKind] {
    match c {
        MatchClass::NonExact => &[MemoryKind::Tcam],
        MatchClass::Exact => &[MemoryKind::Sram, MemoryKind::Tcam],
        MatchClass::Keyless => &[MemoryKind::None],
    }
}

// ---------------------------------------------------------------- validator

/// What the validator needs to know about one pipeline.
#[derive(Clone, Debug)]
pub struct PipelineInput {
    pub name: String,
    pub tables: Vec<String>,
    pub tdg_order: Vec<usize>,
    pub edges: Vec<(usize, usize, DependencyKind)>,
    pub demands: Vec<TableDemand>,
}

impl PipelineInput {
    pub fn from_program(program: &IrProgram, pipeline: &str) -> Self {
        let tdg = build_tdg(program, pipeline).expect("tdg builds");
        let p = program.pipeline(pipeline).expect("pipeline exists");
        PipelineInput {
            name: pipeline.to_string(),
            tables: tdg.nodes.iter().map(|n| n.name.clone()).collect(),
            tdg_order: tdg.nodes.iter().map(|n| n.tdg_order).collect(),
            edges: tdg.edges.iter().map(|e| (e.from, e.to, e.kind)).collect(),
            demands: (0..p.tables.len()).map(|t| TableDemand::from_table(program, p, t)).collect(),
        }
    }

    pub fn all_from_program(program: &IrProgram) -> Vec<Self> {
        program.pipelines.iter().map(|p| Self::from_program(program, &p.name)).collect()
    }
}

/// Every violated placement constraint, re-derived from the inputs.
pub fn validate_mapping(
    inputs: &[PipelineInput],
    spec: &HardwareSpec,
    opts: &PlacementOptions,
    m: &TdgMapping,
) -> Vec<String> {
    let mut bad = Vec::new();
    let s = &spec.stage;
    let mut stage_use: BTreeMap<u32, Use> = BTreeMap::new();
    let mut stage_externs: BTreeMap<u32, BTreeSet<(String, usize)>> = BTreeMap::new();
    let mut stage_extern_kinds: BTreeMap<u32, BTreeMap<String, u32>> = BTreeMap::new();

    for input in inputs {
        let Some(pm) = m.pipelines.iter().find(|p| p.name == input.name) else {
            bad.push(format!("pipeline {} missing", input.name));
            continue;
        };
        if pm.placements.len() != input.tables.len() {
            bad.push(format!("{}: {} placements for {} tables", input.name, pm.placements.len(), input.tables.len()));
        }
        let mut span: HashMap<usize, (u32, u32)> = HashMap::new();
        for (t, name) in input.tables.iter().enumerate() {
            let found: Vec<_> = pm.placements.iter().filter(|p| &p.table == name).collect();
            if found.len() != 1 {
                bad.push(format!("{name}: placed {} times", found.len()));
                continue;
            }
            let p = found[0];
            let d = &input.demands[t];
            if p.portions.is_empty() {
                bad.push(format!("{name}: no portions"));
                continue;
            }
            let stages: Vec<u32> = p.portions.iter().map(|x| x.stage).collect();
            if stages.windows(2).any(|w| w[1] != w[0] + 1) {
                bad.push(format!("{name}: portions not on consecutive stages {stages:?}"));
            }
            if let Some(&last) = stages.last() {
                if last >= spec.num_stages {
                    bad.push(format!("{name}: stage {last} beyond {} stages", spec.num_stages));
                }
            }
            let total: u64 = p.portions.iter().map(|x| x.entries).sum();
            let want = if d.match_class == MatchClass::Keyless { 1 } else { d.entries };
            if total != want {
                bad.push(format!("{name}: {total} entries placed, {want} required"));
            }
            if !d.externs.is_empty() && p.portions.len() != 1 {
                bad.push(format!("{name}: stateful table split"));
            }
            let mode = opts.action_mode_overrides.get(name).copied().unwrap_or(opts.action_mode);
            for portion in &p.portions {
                if portion.entries == 0 {
                    bad.push(format!("{name}: empty portion"));
                }
                if !memories(d.match_class).contains(&portion.memory) {
                    bad.push(format!("{name}: {:?} memory for {:?} table", portion.memory, d.match_class));
                    continue;
                }
                let Some(u) = footprint(d, portion.entries, portion.memory, spec, mode, opts.pointer_overhead_bits)
                else {
                    bad.push(format!("{name}: entry does not fit a packing unit"));
                    continue;
                };
                let f = portion.footprint;
                let reported = Use {
                    tcam: f.tcam_blocks,
                    sram_match: f.sram_match_blocks,
                    sram_action: f.sram_action_blocks,
                    sram_stateful: f.sram_stateful_blocks,
                    vliw: f.vliw_slots,
                    tcam_xbar: f.tcam_crossbar_bits,
                    sram_xbar: f.sram_crossbar_bits,
                    action_xbar: f.action_crossbar_bits,
                };
                if reported != u {
                    bad.push(format!("{name}: reported footprint {reported:?} differs from {u:?}"));
                }
                stage_use.entry(portion.stage).or_default().add(&u);
                for e in &d.externs {
                    if stage_externs.entry(portion.stage).or_default().insert((input.name.clone(), e.id)) {
                        stage_use.entry(portion.stage).or_default().sram_stateful += stateful_blocks(e.bits, s);
                        *stage_extern_kinds
                            .entry(portion.stage)
                            .or_default()
                            .entry(e.kind.as_str().to_string())
                            .or_default() += 1;
                    }
                }
            }
            span.insert(t, (p.first_stage(), p.last_stage()));
        }

        for &(a, b, k) in &input.edges {
            let (Some(&(_, la)), Some(&(fb, _))) = (span.get(&a), span.get(&b)) else { continue };
            let ok = match k {
                DependencyKind::None => true,
                DependencyKind::Match | DependencyKind::Action => fb > la,
                DependencyKind::Successor | DependencyKind::ReverseMatch => fb >= la,
            };
            if !ok {
                bad.push(format!("{} -> {} ({}): stages {la} then {fb}", input.tables[a], input.tables[b], k.as_str()));
            }
        }

        // Tables sharing a stateful object, grouped by object.
        let mut sharing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (t, d) in input.demands.iter().enumerate() {
            for e in &d.externs {
                sharing.entry(e.id).or_default().push(t);
            }
        }
        for members in sharing.values().filter(|m| m.len() > 1) {
            match opts.stateful_policy {
                StatefulPolicy::Colocate => {
                    let stages: BTreeSet<(u32, u32)> = members.iter().filter_map(|t| span.get(t).copied()).collect();
                    if stages.len() > 1 {
                        bad.push(format!("stateful group {members:?} spread over {stages:?}"));
                    }
                }
                StatefulPolicy::Serialize => {
                    let mut ordered = members.clone();
                    ordered.sort_by_key(|t| input.tdg_order[*t]);
                    for w in ordered.windows(2) {
                        if let (Some(a), Some(b)) = (span.get(&w[0]), span.get(&w[1])) {
                            if b.0 <= a.1 {
                                bad.push(format!(
                                    "serialized {} and {} overlap",
                                    input.tables[w[0]], input.tables[w[1]]
                                ));
                            }
                        }
                    }
                }
            }
        }
    }

    for (stage, u) in &stage_use {
        for dim in u.over(s) {
            bad.push(format!("stage {stage}: {dim} over capacity ({u:?})"));
        }
        if let Some(limits) = &s.extern_units {
            for (kind, used) in stage_extern_kinds.get(stage).into_iter().flatten() {
                if limits.get(kind).is_some_and(|cap| used > cap) {
                    bad.push(format!("stage {stage}: {used} {kind} units"));
                }
            }
        }
        match m.per_stage.get(*stage as usize) {
            Some(agg) => {
                let f = agg.footprint;
                let same = f.tcam_blocks == u.tcam
                    && f.sram_match_blocks == u.sram_match
                    && f.sram_action_blocks == u.sram_action
                    && f.sram_stateful_blocks == u.sram_stateful
                    && f.vliw_slots == u.vliw
                    && f.tcam_crossbar_bits == u.tcam_xbar
                    && f.sram_crossbar_bits == u.sram_xbar
                    && f.action_crossbar_bits == u.action_xbar;
                if !same {
                    bad.push(format!("stage {stage}: aggregate {f:?} differs from {u:?}"));
                }
            }
            None => bad.push(format!("stage {stage} missing from aggregates")),
        }
    }
    let used = stage_use.keys().next_back().map_or(0, |s| s + 1);
    if m.stages_used != used {
        bad.push(format!("stages_used {} but last occupied stage is {}", m.stages_used, used));
    }
    bad
}

// ---------------------------------------------------------------- tiny brute force

/// Exhaustive single-portion placement: every table on one stage, with any
/// allowed memory. `true` if some assignment meets every constraint.
pub fn brute_force_feasible(
    n: usize,
    edges: &[(usize, usize, DependencyKind)],
    demands: &[TableDemand],
    groups: &[BTreeSet<usize>],
    spec: &HardwareSpec,
    opts: &PlacementOptions,
) -> bool {
    let mut extra: Vec<(usize, usize, DependencyKind)> = edges.to_vec();
    if opts.stateful_policy == StatefulPolicy::Serialize {
        for g in groups {
            let mut m: Vec<usize> = g.iter().copied().collect();
            m.sort_by_key(|t| demands[*t].tdg_order);
            for w in m.windows(2) {
                extra.push((w[0], w[1], DependencyKind::Action));
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|t| demands[*t].tdg_order);
    let mut stage_of = vec![u32::MAX; n];
    let mut usage = vec![Use::default(); spec.num_stages as usize];
    let mut externs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); spec.num_stages as usize];
    search(0, &order, &extra, demands, groups, spec, opts, &mut stage_of, &mut usage, &mut externs)
}

#[allow(clippy::too_many_arguments)]
fn search(
    i: usize,
    order: &[usize],
    edges: &[(usize, usize, DependencyKind)],
    demands: &[TableDemand],
    groups: &[BTreeSet<usize>],
    spec: &HardwareSpec,
    opts: &PlacementOptions,
    stage_of: &mut [u32],
    usage: &mut [Use],
    externs: &mut [BTreeSet<usize>],
) -> bool {
    if i == order.len() {
        return true;
    }
    let t = order[i];
    let d = &demands[t];
    for s in 0..spec.num_stages {
        let ok_deps = edges.iter().all(|&(a, b, k)| {
            if b != t || stage_of[a] == u32::MAX {
                return true;
            }
            match k {
                DependencyKind::None => true,
                DependencyKind::Match | DependencyKind::Action => s > stage_of[a],
                _ => s >= stage_of[a],
            }
        }) && edges.iter().all(|&(a, b, k)| {
            if a != t || stage_of[b] == u32::MAX {
                return true;
            }
            match k {
                DependencyKind::None => true,
                DependencyKind::Match | DependencyKind::Action => stage_of[b] > s,
                _ => stage_of[b] >= s,
            }
        });
        if !ok_deps {
            continue;
        }
        if opts.stateful_policy == StatefulPolicy::Colocate
            && groups.iter().any(|g| g.contains(&t) && g.iter().any(|o| stage_of[*o] != u32::MAX && stage_of[*o] != s))
        {
            continue;
        }
        let mode = opts.action_mode_overrides.get(&d.name).copied().unwrap_or(opts.action_mode);
        let want = if d.match_class == MatchClass::Keyless { 1 } else { d.entries };
        for &mem in memories(d.match_class) {
            let Some(u) = footprint(d, want, mem, spec, mode, opts.pointer_overhead_bits) else { continue };
            let si = s as usize;
            let saved_use = usage[si];
            let saved_ext = externs[si].clone();
            usage[si].add(&u);
            for e in &d.externs {
                if externs[si].insert(e.id) {
                    usage[si].sram_stateful += stateful_blocks(e.bits, &spec.stage);
                }
            }
            if usage[si].over(&spec.stage).is_empty() {
                stage_of[t] = s;
                if search(i + 1, order, edges, demands, groups, spec, opts, stage_of, usage, externs) {
                    return true;
                }
                stage_of[t] = u32::MAX;
            }
            usage[si] = saved_use;
            externs[si] = saved_ext;
        }
    }
    false
}

// ---------------------------------------------------------------- header oracle

/// Minimum allocated bits over every assignment of containers to fields,
/// by memoized search over remaining container counts. `None` if infeasible.
pub fn header_optimum(widths: &[u32], phv: &PhvSpec) -> Option<u64> {
    let classes: Vec<u32> = phv.containers.iter().map(|c| c.width).collect();
    let avail: Vec<u32> = phv.containers.iter().map(|c| c.count).collect();
    let mut memo: HashMap<(usize, Vec<u32>), Option<u64>> = HashMap::new();
    fn go(
        i: usize,
        widths: &[u32],
        classes: &[u32],
        avail: &mut Vec<u32>,
        memo: &mut HashMap<(usize, Vec<u32>), Option<u64>>,
    ) -> Option<u64> {
        if i == widths.len() {
            return Some(0);
        }
        if let Some(v) = memo.get(&(i, avail.clone())) {
            return *v;
        }
        let mut best: Option<u64> = None;
        let mut counts = vec![0u32; classes.len()];
        // Every multiset of containers covering the field, not just minimal ones.
        fn each(k: usize, counts: &mut Vec<u32>, avail: &[u32], f: &mut dyn FnMut(&[u32])) {
            if k == counts.len() {
                f(counts);
                return;
            }
            for c in 0..=avail[k] {
                counts[k] = c;
                each(k + 1, counts, avail, f);
            }
            counts[k] = 0;
        }
        let snapshot = avail.clone();
        let mut options: Vec<Vec<u32>> = Vec::new();
        each(0, &mut counts, &snapshot, &mut |c| {
            let bits: u32 = c.iter().zip(classes).map(|(n, w)| n * w).sum();
            if bits >= widths[i] {
                options.push(c.to_vec());
            }
        });
        for c in options {
            let bits: u64 = c.iter().zip(classes).map(|(n, w)| u64::from(n * w)).sum();
            for (a, n) in avail.iter_mut().zip(&c) {
                *a -= n;
            }
            if let Some(rest) = go(i + 1, widths, classes, avail, memo) {
                best = Some(best.map_or(bits + rest, |b| b.min(bits + rest)));
            }
            for (a, n) in avail.iter_mut().zip(&c) {
                *a += n;
            }
        }
        memo.insert((i, avail.clone()), best);
        best
    }
    let mut avail = avail;
    go(0, widths, &classes, &mut avail, &mut memo)
}

pub fn header_fields(widths: &[u32]) -> Vec<HeaderField> {
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| HeaderField {
            name: format!("f{i}"),
            header_instance: "h".into(),
            width: w,
            is_metadata: false,
            is_validity: false,
        })
        .collect()
}

// ---------------------------------------------------------------- parse graphs

/// Random acyclic parse graph: node 0 is the start state, every other node
/// has at least one predecessor, and every node has a default or explicit
/// transition to accept or a later node.
pub fn random_parse_graph<R: Rng>(rng: &mut R, n: usize) -> ParseGraph {
    let widths = [8u32, 16, 16, 32];
    let nodes: Vec<ParseNode> = (0..n)
        .map(|i| {
            let kw = widths[rng.gen_range(0..widths.len())];
            ParseNode {
                name: format!("s{i}"),
                headers: vec![],
                header_names: vec![format!("h{i}")],
                header_bits: [32u32, 64, 112, 160][rng.gen_range(0..4)],
                key: vec![SelectKey { label: format!("h{i}.sel"), field: None, width: kw }],
            }
        })
        .collect();
    let mut edges = Vec::new();
    for to in 1..n {
        let from = rng.gen_range(0..to);
        edges.push((from, ParseTarget::State(to)));
    }
    for from in 0..n {
        for to in from + 1..n {
            if rng.gen_bool(0.15) {
                edges.push((from, ParseTarget::State(to)));
            }
        }
        if rng.gen_bool(0.7) || !edges.iter().any(|e| e.0 == from) {
            edges.push((from, ParseTarget::Accept));
        }
    }
    edges.sort();
    let mut value = 0u32;
    let edges = edges
        .into_iter()
        .map(|(from, to)| {
            value += 1;
            let kw = nodes[from].key_width();
            ParseEdge { from, to, value: BigUint::from(value), mask: (BigUint::from(1u8) << kw) - 1u8 }
        })
        .collect();
    ParseGraph { nodes, edges, start: 0 }
}

/// (cluster, transition) pairs leaving each cluster, counted from the partition only.
pub fn exit_pairs(g: &ParseGraph, cluster_of: &[usize]) -> usize {
    let mut pairs = BTreeSet::new();
    for (i, e) in g.edges.iter().enumerate() {
        let leaves = match e.to {
            ParseTarget::Accept => true,
            ParseTarget::State(t) => cluster_of[t] != cluster_of[e.from],
        };
        if leaves {
            pairs.insert((cluster_of[e.from], i));
        }
    }
    pairs.len()
}

pub fn benchmark_parser() -> ParserSpec {
    rmt_mapper::hsl::default_spec().parser
}
