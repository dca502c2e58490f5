use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ExternId, FieldId, GraphKind, IrError, IrProgram, NodeRef, Pipeline};

/// Dependency kinds, declared from weakest to strictest.
///
/// `Successor` and `ReverseMatch` are equally strict for placement purposes;
/// the derived order only breaks the tie when a single label is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyKind {
    None,
    Successor,
    ReverseMatch,
    Action,
    Match,
}

impl DependencyKind {
    pub const ALL: [DependencyKind; 5] = [
        DependencyKind::None,
        DependencyKind::Successor,
        DependencyKind::ReverseMatch,
        DependencyKind::Action,
        DependencyKind::Match,
    ];

    /// Rank under the strictness order; equal ranks impose the same constraint.
    pub fn strictness(self) -> u8 {
        match self {
            DependencyKind::None => 0,
            DependencyKind::Successor | DependencyKind::ReverseMatch => 1,
            DependencyKind::Action => 2,
            DependencyKind::Match => 3,
        }
    }

    /// Strict kinds force the dependent table into a later stage.
    pub fn is_strict(self) -> bool {
        matches!(self, DependencyKind::Action | DependencyKind::Match)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DependencyKind::None => "none",
            DependencyKind::Successor => "successor",
            DependencyKind::ReverseMatch => "reverse_match",
            DependencyKind::Action => "action",
            DependencyKind::Match => "match",
        }
    }
}

impl fmt::Display for DependencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The set of kinds detected between one ordered pair of tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct KindSet(u8);

impl KindSet {
    pub fn insert(&mut self, kind: DependencyKind) {
        if kind != DependencyKind::None {
            self.0 |= 1 << kind as u8;
        }
    }

    pub fn contains(self, kind: DependencyKind) -> bool {
        self.0 & (1 << kind as u8) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: KindSet) -> KindSet {
        KindSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = DependencyKind> {
        DependencyKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    /// Strictest detected kind, `None` when empty.
    pub fn strictest(self) -> DependencyKind {
        self.iter().max().unwrap_or(DependencyKind::None)
    }
}

impl FromIterator<DependencyKind> for KindSet {
    fn from_iter<I: IntoIterator<Item = DependencyKind>>(iter: I) -> Self {
        let mut s = KindSet::default();
        for k in iter {
            s.insert(k);
        }
        s
    }
}

/// Field and extern accesses of one table, with gating predicates folded
/// into the match set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TableAccess {
    pub matches: BTreeSet<FieldId>,
    pub reads: BTreeSet<FieldId>,
    pub writes: BTreeSet<FieldId>,
    pub externs: BTreeSet<ExternId>,
}

impl TableAccess {
    pub fn of_table(program: &IrProgram, pipeline: &Pipeline, table: usize, flow: &ControlFlow) -> Self {
        let t = &pipeline.tables[table];
        let mut acc = TableAccess::default();
        acc.matches.extend(t.match_fields.iter().map(|m| m.field));
        for c in flow.gating_conditionals(table) {
            acc.matches.extend(pipeline.conditionals[c].reads.iter().copied());
        }
        for a in &t.actions {
            let a = program.action(*a);
            acc.reads.extend(a.reads.iter().copied());
            acc.writes.extend(a.writes.iter().copied());
        }
        acc.externs.extend(t.extern_refs.iter().copied());
        acc
    }
}

fn intersects(a: &BTreeSet<FieldId>, b: &BTreeSet<FieldId>) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|f| large.contains(f))
}

/// Every kind that relates `a` to a later table `b`.
pub fn detect_dependencies(a: &TableAccess, b: &TableAccess, is_successor: bool) -> KindSet {
    let mut kinds = KindSet::default();
    if intersects(&a.writes, &b.matches) {
        kinds.insert(DependencyKind::Match);
    }
    if intersects(&a.writes, &b.reads) || intersects(&a.writes, &b.writes) {
        kinds.insert(DependencyKind::Action);
    }
    if intersects(&a.matches, &b.writes) {
        kinds.insert(DependencyKind::ReverseMatch);
    }
    if is_successor {
        kinds.insert(DependencyKind::Successor);
    }
    kinds
}

/// Strictest dependency of `b` on `a`, assuming `a` precedes `b`.
pub fn classify_dependency(a: &TableAccess, b: &TableAccess, is_successor: bool) -> DependencyKind {
    detect_dependencies(a, b, is_successor).strictest()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn new(n: usize) -> Self {
        BitSet(vec![0; n.div_ceil(64)])
    }
    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }
    fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Reachability and predication facts about one pipeline's control graph.
#[derive(Clone, Debug)]
pub struct ControlFlow {
    tables: usize,
    succ: Vec<Vec<usize>>,
    /// Strict reachability.
    reach: Vec<BitSet>,
    direct_successors: Vec<BTreeSet<usize>>,
    gating: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl ControlFlow {
    pub fn new(pipeline: &Pipeline) -> Result<Self, IrError> {
        let tables = pipeline.tables.len();
        let n = tables + pipeline.conditionals.len();
        let index = |r: NodeRef| match r {
            NodeRef::Table(i) => i,
            NodeRef::Conditional(i) => tables + i,
        };
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, t) in pipeline.tables.iter().enumerate() {
            succ[i] = t.next_nodes().map(index).collect();
        }
        for (i, c) in pipeline.conditionals.iter().enumerate() {
            succ[tables + i] = c.true_next.into_iter().chain(c.false_next).map(index).collect();
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }

        let topo = kahn(&succ);
        if topo.len() != n {
            let done: BTreeSet<usize> = topo.iter().copied().collect();
            let stuck = (0..n).find(|v| !done.contains(v)).unwrap_or(0);
            let node = if stuck < tables { NodeRef::Table(stuck) } else { NodeRef::Conditional(stuck - tables) };
            return Err(IrError::Cycle {
                graph: GraphKind::ControlFlow,
                element: pipeline.node_name(node).to_string(),
            });
        }

        let mut reach = vec![BitSet::new(n); n];
        for &v in topo.iter().rev() {
            let mut r = BitSet::new(n);
            for &s in &succ[v] {
                r.insert(s);
                r.union_with(&reach[s]);
            }
            reach[v] = r;
        }

        let mut direct_successors = vec![BTreeSet::new(); tables];
        for (a, ds) in direct_successors.iter_mut().enumerate() {
            let mut stack = succ[a].clone();
            let mut seen = BTreeSet::new();
            while let Some(v) = stack.pop() {
                if !seen.insert(v) {
                    continue;
                }
                if v < tables {
                    ds.insert(v);
                } else {
                    stack.extend(succ[v].iter().copied());
                }
            }
        }

        // A conditional gates a table when only one of its branches reaches it.
        let reaches_incl = |from: Option<NodeRef>, target: usize, reach: &[BitSet]| {
            from.map(index).is_some_and(|f| f == target || reach[f].contains(target))
        };
        let mut gating = vec![Vec::new(); tables];
        for (ci, c) in pipeline.conditionals.iter().enumerate() {
            for (b, g) in gating.iter_mut().enumerate() {
                if reaches_incl(c.true_next, b, &reach) != reaches_incl(c.false_next, b, &reach) {
                    g.push(ci);
                }
            }
        }

        let order = topo.into_iter().filter(|v| *v < tables).collect();
        Ok(ControlFlow { tables, succ, reach, direct_successors, gating, order })
    }

    /// True when some control path leads from table `a` to table `b`.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.reach[a].contains(b)
    }

    /// True when `b` runs right after `a`, possibly through conditionals.
    pub fn is_successor(&self, a: usize, b: usize) -> bool {
        self.direct_successors[a].contains(&b)
    }

    pub fn gating_conditionals(&self, table: usize) -> impl Iterator<Item = usize> + '_ {
        self.gating[table].iter().copied()
    }

    /// Tables in topological order, lower declaration index first among ready nodes.
    pub fn table_order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_tables(&self) -> usize {
        self.tables
    }

    pub fn control_edges(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }
}

/// Kahn's algorithm; tables sort before conditionals because they occupy
/// the low indices.
fn kahn(succ: &[Vec<usize>]) -> Vec<usize> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &t in s {
            indeg[t] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|v| indeg[*v] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        out.push(v);
        for &t in &succ[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.insert(t);
            }
        }
    }
    out
}

/// Position of every table in the control graph's topological order.
pub(crate) fn topological_tdg_order(pipeline: &Pipeline) -> Result<Vec<usize>, IrError> {
    let flow = ControlFlow::new(pipeline)?;
    let mut pos = vec![0; pipeline.tables.len()];
    for (i, &t) in flow.table_order().iter().enumerate() {
        pos[t] = i;
    }
    Ok(pos)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TdgNode {
    pub name: String,
    pub tdg_order: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TdgEdge {
    pub from: usize,
    pub to: usize,
    pub kind: DependencyKind,
    pub detected: KindSet,
}

/// Table dependency graph of one pipeline. Node `i` is table `i` of the pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tdg {
    pub pipeline: String,
    pub nodes: Vec<TdgNode>,
    pub edges: Vec<TdgEdge>,
    /// Tables sharing a register, counter or meter; each set has at least two members.
    pub stateful_groups: Vec<BTreeSet<usize>>,
}

impl Tdg {
    /// Builds a graph from explicit edges, keeping the strictest kind per pair.
    pub fn from_edges(names: &[&str], edges: &[(usize, usize, DependencyKind)]) -> Self {
        let mut merged: BTreeMap<(usize, usize), KindSet> = BTreeMap::new();
        for &(a, b, k) in edges {
            merged.entry((a, b)).or_default().insert(k);
        }
        Tdg {
            pipeline: "synthetic".into(),
            nodes: names.iter().enumerate().map(|(i, n)| TdgNode { name: n.to_string(), tdg_order: i }).collect(),
            edges: merged
                .into_iter()
                .filter(|(_, s)| !s.is_empty())
                .map(|((from, to), detected)| TdgEdge { from, to, kind: detected.strictest(), detected })
                .collect(),
            stateful_groups: Vec::new(),
        }
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&TdgEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn count_kind(&self, kind: DependencyKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

/// Builds the dependency graph of the named pipeline.
pub fn build_tdg(program: &IrProgram, pipeline: &str) -> Result<Tdg, IrError> {
    let p = program.pipeline(pipeline).ok_or_else(|| IrError::UnknownPipeline(pipeline.to_string()))?;
    let flow = ControlFlow::new(p)?;
    let n = p.tables.len();
    let access: Vec<TableAccess> = (0..n).map(|t| TableAccess::of_table(program, p, t, &flow)).collect();

    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b || !flow.precedes(a, b) {
                continue;
            }
            let detected = detect_dependencies(&access[a], &access[b], flow.is_successor(a, b));
            if !detected.is_empty() {
                edges.push(TdgEdge { from: a, to: b, kind: detected.strictest(), detected });
            }
        }
    }

    let nodes = p.tables.iter().map(|t| TdgNode { name: t.name.clone(), tdg_order: t.tdg_order }).collect();
    Ok(Tdg { pipeline: p.name.clone(), nodes, edges, stateful_groups: stateful_groups(&access) })
}

fn stateful_groups(access: &[TableAccess]) -> Vec<BTreeSet<usize>> {
    let n = access.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owner: BTreeMap<ExternId, usize> = BTreeMap::new();
    for (t, acc) in access.iter().enumerate() {
        for e in &acc.externs {
            match owner.get(e) {
                Some(&o) => {
                    let (ra, rb) = (find(&mut parent, o), find(&mut parent, t));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    owner.insert(*e, t);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for t in 0..n {
        let r = find(&mut parent, t);
        groups.entry(r).or_default().insert(t);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}
