//! Parse graph clustering and parser TCAM state-table synthesis.
//!
//! States are grouped into clusters the parser can handle in one cycle. A
//! cluster is grown from a root along transitions; a state joins only once
//! all of its predecessors are members, which keeps the cluster graph
//! acyclic. One TCAM entry is emitted per pair of a cluster and a transition
//! leaving it, including transitions to accept.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsl::ParserSpec;
use crate::ir::{ParseGraph, ParseNode, ParseTarget};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    /// Parse-graph node ids; the first one is the root.
    pub members: Vec<usize>,
    pub total_header_bits: u32,
    /// Lookup-field slots the members' select keys occupy.
    pub lookup_fields_used: u32,
}

impl Cluster {
    pub fn root(&self) -> usize {
        self.members[0]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterGraph {
    pub graph: ParseGraph,
    pub clusters: Vec<Cluster>,
    pub cluster_of: Vec<usize>,
    /// Edge through which each node joined its cluster; `None` for roots.
    join_edge: Vec<Option<usize>>,
}

impl ClusterGraph {
    /// Assembles a cluster graph from an explicit partition. Members must be
    /// listed root first; used to evaluate alternative clusterings.
    pub fn from_partition(graph: &ParseGraph, partition: &[Vec<usize>], p: &ParserSpec) -> Self {
        let mut cluster_of = vec![usize::MAX; graph.nodes.len()];
        for (ci, members) in partition.iter().enumerate() {
            for &m in members {
                cluster_of[m] = ci;
            }
        }
        let mut join_edge = vec![None; graph.nodes.len()];
        for (ci, members) in partition.iter().enumerate() {
            for &m in &members[1..] {
                join_edge[m] =
                    graph.edges.iter().position(|e| e.to == ParseTarget::State(m) && cluster_of[e.from] == ci);
            }
        }
        let clusters = partition
            .iter()
            .map(|members| Cluster {
                members: members.clone(),
                total_header_bits: members.iter().map(|m| graph.nodes[*m].header_bits).sum(),
                lookup_fields_used: members.iter().map(|m| key_slots(&graph.nodes[*m], p)).sum(),
            })
            .collect();
        ClusterGraph { graph: graph.clone(), clusters, cluster_of, join_edge }
    }

    /// Transitions leaving cluster `c`, in edge order.
    pub fn exit_edges(&self, c: usize) -> Vec<usize> {
        self.graph
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                self.cluster_of[e.from] == c
                    && match e.to {
                        ParseTarget::Accept => true,
                        ParseTarget::State(t) => self.cluster_of[t] != c,
                    }
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of distinct (cluster, leaving transition) pairs.
    pub fn exit_pair_count(&self) -> usize {
        (0..self.clusters.len()).map(|c| self.exit_edges(c).len()).sum()
    }

    /// True when clusters, taken as nodes, form a DAG.
    pub fn is_acyclic(&self) -> bool {
        let k = self.clusters.len();
        let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
        for e in &self.graph.edges {
            if let ParseTarget::State(t) = e.to {
                let (a, b) = (self.cluster_of[e.from], self.cluster_of[t]);
                if a != b {
                    succ[a].insert(b);
                }
            }
        }
        let mut indeg = vec![0; k];
        for s in &succ {
            for &t in s {
                indeg[t] += 1;
            }
        }
        let mut ready: Vec<usize> = (0..k).filter(|c| indeg[*c] == 0).collect();
        let mut seen = 0;
        while let Some(c) = ready.pop() {
            seen += 1;
            for &t in &succ[c] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
        seen == k
    }

    fn state_name(&self, c: usize) -> String {
        self.graph.nodes[self.clusters[c].root()].name.clone()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParserMapError {
    #[error("parser state `{state}` extracts {bits} bits ({headers}), more than the {budget}-bit per-cycle budget")]
    StateTooWide { state: String, headers: String, bits: u32, budget: u32 },
    #[error("parser state `{state}` selects on {slots} lookup fields, more than the {limit} available per cycle")]
    KeyTooWide { state: String, slots: u32, limit: u32 },
}

impl ParserMapError {
    pub fn element(&self) -> &str {
        match self {
            ParserMapError::StateTooWide { headers, .. } => headers,
            ParserMapError::KeyTooWide { state, .. } => state,
        }
    }

    pub fn resource(&self) -> &'static str {
        match self {
            ParserMapError::StateTooWide { .. } => "parser extraction width",
            ParserMapError::KeyTooWide { .. } => "parser lookup fields",
        }
    }
}

fn key_slots(node: &ParseNode, p: &ParserSpec) -> u32 {
    node.key.iter().map(|k| k.width.div_ceil(p.lookup_field_width.max(1))).sum()
}

fn check_node(node: &ParseNode, p: &ParserSpec) -> Result<(), ParserMapError> {
    let budget = p.cycle_bit_budget();
    if node.header_bits > budget {
        return Err(ParserMapError::StateTooWide {
            state: node.name.clone(),
            headers: node.header_names.join("+"),
            bits: node.header_bits,
            budget,
        });
    }
    let slots = key_slots(node, p);
    if slots > p.lookup_fields_per_cycle {
        return Err(ParserMapError::KeyTooWide { state: node.name.clone(), slots, limit: p.lookup_fields_per_cycle });
    }
    Ok(())
}

/// Groups parse states into per-cycle clusters.
pub fn cluster_parse_graph(g: &ParseGraph, p: &ParserSpec) -> Result<ClusterGraph, ParserMapError> {
    for node in &g.nodes {
        check_node(node, p)?;
    }
    let n = g.nodes.len();
    let budget = p.cycle_bit_budget();
    let preds: Vec<Vec<usize>> = (0..n).map(|v| g.predecessors(v)).collect();
    let mut cluster_of = vec![usize::MAX; n];
    let mut join_edge = vec![None; n];
    let mut clusters: Vec<Cluster> = Vec::new();

    for root in g.topological_order() {
        if cluster_of[root] != usize::MAX {
            continue;
        }
        let ci = clusters.len();
        let mut cluster = Cluster {
            members: vec![root],
            total_header_bits: g.nodes[root].header_bits,
            lookup_fields_used: key_slots(&g.nodes[root], p),
        };
        cluster_of[root] = ci;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for (ei, e) in g.out_edges(v) {
                let ParseTarget::State(t) = e.to else { continue };
                if cluster_of[t] != usize::MAX {
                    continue;
                }
                let node = &g.nodes[t];
                let fits = cluster.members.len() < p.max_headers_per_cycle as usize
                    && cluster.total_header_bits + node.header_bits <= budget
                    && cluster.lookup_fields_used + key_slots(node, p) <= p.lookup_fields_per_cycle
                    && preds[t].iter().all(|u| cluster_of[*u] == ci);
                if fits {
                    cluster.members.push(t);
                    cluster.total_header_bits += node.header_bits;
                    cluster.lookup_fields_used += key_slots(node, p);
                    cluster_of[t] = ci;
                    join_edge[t] = Some(ei);
                    queue.push_back(t);
                }
            }
        }
        clusters.push(cluster);
    }
    Ok(ClusterGraph { graph: g.clone(), clusters, cluster_of, join_edge })
}

/// One lookup-field slot of a TCAM entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupField {
    pub field: String,
    pub width: u32,
    pub value: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: String,
    pub lookups: Vec<LookupField>,
    pub next_state: String,
    /// Headers deposited into the PHV by the cycle this entry ends.
    pub extract: Vec<String>,
}

impl StateEntry {
    pub fn lookup_bits(&self) -> u32 {
        self.lookups.iter().map(|l| l.width).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTable {
    pub entries: Vec<StateEntry>,
    pub entry_count: usize,
    /// Bits needed to encode the current-state id.
    pub state_bits: u32,
}

fn hex(v: &BigUint) -> String {
    format!("0x{}", v.to_str_radix(16))
}

/// Splits the value and mask of a transition into lookup-field slots.
fn lookups_for_edge(node: &ParseNode, value: &BigUint, mask: &BigUint, p: &ParserSpec) -> Vec<LookupField> {
    let fw = p.lookup_field_width.max(1);
    let mut out = Vec::new();
    let total: u32 = node.key_width();
    let mut hi = total;
    for k in &node.key {
        let lo = hi - k.width;
        let mut chunk_hi = k.width;
        while chunk_hi > 0 {
            let w = chunk_hi.min(fw);
            let chunk_lo = chunk_hi - w;
            let shift = lo + chunk_lo;
            let ones = (BigUint::one() << w) - BigUint::one();
            let label =
                if w == k.width { k.label.clone() } else { format!("{}[{}:{}]", k.label, chunk_hi - 1, chunk_lo) };
            out.push(LookupField {
                field: label,
                width: w,
                value: hex(&((value >> shift) & &ones)),
                mask: hex(&((mask >> shift) & &ones)),
            });
            chunk_hi = chunk_lo;
        }
        hi = lo;
    }
    out
}

/// Emits one TCAM entry per (cluster, leaving transition) pair.
pub fn emit_state_table(cg: &ClusterGraph, p: &ParserSpec) -> StateTable {
    let g = &cg.graph;
    let mut entries = Vec::new();
    for c in 0..cg.clusters.len() {
        for ei in cg.exit_edges(c) {
            let e = &g.edges[ei];
            // Walk back to the root along join edges to recover the in-cycle path.
            let mut path_edges = Vec::new();
            let mut v = e.from;
            while let Some(j) = cg.join_edge[v] {
                path_edges.push(j);
                v = g.edges[j].from;
            }
            path_edges.reverse();
            let mut lookups = Vec::new();
            let mut extract = vec![];
            for &j in &path_edges {
                let je = &g.edges[j];
                lookups.extend(lookups_for_edge(&g.nodes[je.from], &je.value, &je.mask, p));
                extract.extend(g.nodes[je.from].header_names.iter().cloned());
            }
            lookups.extend(lookups_for_edge(&g.nodes[e.from], &e.value, &e.mask, p));
            extract.extend(g.nodes[e.from].header_names.iter().cloned());
            let next_state = match e.to {
                ParseTarget::Accept => "accept".to_string(),
                ParseTarget::State(t) => cg.state_name(cg.cluster_of[t]),
            };
            entries.push(StateEntry { state: cg.state_name(c), lookups, next_state, extract });
        }
    }
    let states = cg.clusters.len() as u64 + 1;
    let state_bits = (u64::BITS - (states - 1).leading_zeros()).max(1);
    StateTable { entry_count: entries.len(), entries, state_bits }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserVerdict {
    pub accepted: bool,
    pub entry_count: usize,
    pub capacity: u32,
    pub utilization_percent: f64,
    pub reason: Option<String>,
}

/// Checks the state table against the parser TCAM.
pub fn check_capacity(t: &StateTable, p: &ParserSpec) -> ParserVerdict {
    let capacity = p.tcam_entries;
    let utilization_percent =
        if capacity == 0 { f64::INFINITY } else { 100.0 * t.entry_count as f64 / f64::from(capacity) };
    let mut reason = None;
    if t.entry_count > capacity as usize {
        reason = Some(format!("{} entries exceed the {capacity}-entry parser TCAM", t.entry_count));
    } else if let Some(e) = t.entries.iter().find(|e| e.lookups.len() > p.lookup_fields_per_cycle as usize) {
        reason = Some(format!(
            "entry for state `{}` needs {} lookup fields, limit {}",
            e.state,
            e.lookups.len(),
            p.lookup_fields_per_cycle
        ));
    } else if let Some(e) = t.entries.iter().find(|e| e.lookups.iter().any(|l| l.width > p.lookup_field_width)) {
        reason = Some(format!("entry for state `{}` has a lookup wider than {} bits", e.state, p.lookup_field_width));
    } else if let Some(e) =
        t.entries.iter().find(|e| e.lookups.len() as u32 * p.lookup_field_width + t.state_bits > p.tcam_entry_width)
    {
        reason = Some(format!(
            "entry for state `{}` needs {} bits, wider than the {}-bit TCAM entry",
            e.state,
            e.lookups.len() as u32 * p.lookup_field_width + t.state_bits,
            p.tcam_entry_width
        ));
    }
    ParserVerdict { accepted: reason.is_none(), entry_count: t.entry_count, capacity, utilization_percent, reason }
}

/// Everything the parser phase produces.
#[derive(Clone, Debug)]
pub struct ParserMapping {
    pub clusters: ClusterGraph,
    pub table: StateTable,
    pub verdict: ParserVerdict,
}

pub fn map_parser(g: &ParseGraph, p: &ParserSpec) -> Result<ParserMapping, ParserMapError> {
    let clusters = cluster_parse_graph(g, p)?;
    let table = emit_state_table(&clusters, p);
    let verdict = check_capacity(&table, p);
    Ok(ParserMapping { clusters, table, verdict })
}

/// Shape of a parse graph for reporting.
pub fn graph_counts(g: &ParseGraph) -> (usize, usize) {
    (g.nodes.len(), g.edges.len())
}

/// Cluster membership keyed by state name, for display.
pub fn cluster_names(cg: &ClusterGraph) -> BTreeMap<String, Vec<String>> {
    cg.clusters
        .iter()
        .map(|c| {
            (cg.graph.nodes[c.root()].name.clone(), c.members.iter().map(|m| cg.graph.nodes[*m].name.clone()).collect())
        })
        .collect()
}
