use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::Serialize;

use super::{GraphKind, HeaderId, IrError, IrProgram, SelectKey, TransitionMatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseTarget {
    State(usize),
    Accept,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseNode {
    pub name: String,
    pub headers: Vec<HeaderId>,
    pub header_names: Vec<String>,
    /// Bits extracted by this state, validity bits excluded.
    pub header_bits: u32,
    pub key: Vec<SelectKey>,
}

impl ParseNode {
    pub fn key_width(&self) -> u32 {
        self.key.iter().map(|k| k.width).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseEdge {
    pub from: usize,
    pub to: ParseTarget,
    pub value: BigUint,
    /// A default transition has an all-zero mask.
    pub mask: BigUint,
}

impl ParseEdge {
    pub fn is_default(&self) -> bool {
        self.mask.is_zero()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseGraph {
    pub nodes: Vec<ParseNode>,
    pub edges: Vec<ParseEdge>,
    pub start: usize,
}

impl ParseGraph {
    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = (usize, &ParseEdge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.from == node)
    }

    pub fn predecessors(&self, node: usize) -> Vec<usize> {
        let mut preds: Vec<usize> =
            self.edges.iter().filter(|e| e.to == ParseTarget::State(node)).map(|e| e.from).collect();
        preds.sort_unstable();
        preds.dedup();
        preds
    }

    /// Kahn order preferring lower node indices; the graph is acyclic by construction.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            if let ParseTarget::State(t) = e.to {
                indeg[t] += 1;
                succ[e.from].push(t);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &t in &succ[v] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        order
    }
}

fn all_ones(width: u32) -> BigUint {
    (BigUint::one() << width) - BigUint::one()
}

/// Builds the parse graph of the program's first parser from the states
/// reachable from its start state. Accept is a sink target, not a node.
pub fn build_parse_graph(program: &IrProgram) -> Result<ParseGraph, IrError> {
    let parser = program
        .parsers
        .first()
        .ok_or_else(|| IrError::Malformed { path: "parsers".into(), message: "program declares no parser".into() })?;
    let by_name: BTreeMap<&str, usize> = parser.states.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();

    // Discover reachable states breadth first so node ids follow the walk.
    let start_decl = by_name[parser.init_state.as_str()];
    let mut node_of_decl: BTreeMap<usize, usize> = BTreeMap::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::from([start_decl]);
    node_of_decl.insert(start_decl, 0);
    order.push(start_decl);
    while let Some(d) = queue.pop_front() {
        for t in &parser.states[d].transitions {
            if let Some(next) = &t.next_state {
                let nd = by_name[next.as_str()];
                if let Entry::Vacant(e) = node_of_decl.entry(nd) {
                    e.insert(order.len());
                    order.push(nd);
                    queue.push_back(nd);
                }
            }
        }
    }

    let mut nodes = Vec::with_capacity(order.len());
    let mut edges = Vec::new();
    for (id, &d) in order.iter().enumerate() {
        let state = &parser.states[d];
        let header_bits = state
            .extracts
            .iter()
            .flat_map(|h| program.headers[h.0].fields.iter())
            .map(|f| program.field_width(*f))
            .sum();
        nodes.push(ParseNode {
            name: state.name.clone(),
            headers: state.extracts.clone(),
            header_names: state.extracts.iter().map(|h| program.headers[h.0].name.clone()).collect(),
            header_bits,
            key: state.key.clone(),
        });
        let key_width: u32 = state.key.iter().map(|k| k.width).sum();
        for t in &state.transitions {
            let to = match &t.next_state {
                Some(n) => ParseTarget::State(node_of_decl[&by_name[n.as_str()]]),
                None => ParseTarget::Accept,
            };
            let (value, mask) = match &t.matcher {
                TransitionMatch::Default => (BigUint::zero(), BigUint::zero()),
                TransitionMatch::Value { value, mask } => {
                    let full = all_ones(key_width);
                    (value & &full, mask.as_ref().map_or(full.clone(), |m| m & &full))
                }
            };
            edges.push(ParseEdge { from: id, to, value, mask });
        }
    }

    let graph = ParseGraph { nodes, edges, start: 0 };
    if graph.topological_order().len() != graph.nodes.len() {
        let element = find_cycle_member(&graph);
        return Err(IrError::Cycle { graph: GraphKind::ParseGraph, element });
    }
    Ok(graph)
}

fn find_cycle_member(g: &ParseGraph) -> String {
    // Nodes left after peeling sources and sinks lie on or between cycles;
    // the smallest one with a self-reaching path is reported.
    let n = g.nodes.len();
    for v in 0..n {
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = g.out_edges(v).filter_map(|(_, e)| state_of(e.to)).collect();
        while let Some(u) = stack.pop() {
            if u == v {
                return g.nodes[v].name.clone();
            }
            if !std::mem::replace(&mut seen[u], true) {
                stack.extend(g.out_edges(u).filter_map(|(_, e)| state_of(e.to)));
            }
        }
    }
    g.nodes[0].name.clone()
}

fn state_of(t: ParseTarget) -> Option<usize> {
    match t {
        ParseTarget::State(s) => Some(s),
        ParseTarget::Accept => None,
    }
}
