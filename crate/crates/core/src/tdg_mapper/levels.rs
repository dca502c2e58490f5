use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{DependencyKind, KindSet, Tdg};

/// Dependency graph with one edge per related pair, carrying the strictest kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrictDag {
    pub names: Vec<String>,
    pub tdg_order: Vec<usize>,
    /// Sorted by (from, to); kinds are never `None`.
    pub edges: Vec<(usize, usize, DependencyKind)>,
    pub stateful_groups: Vec<BTreeSet<usize>>,
}

impl StrictDag {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn preds(&self) -> Vec<Vec<(usize, DependencyKind)>> {
        let mut p = vec![Vec::new(); self.len()];
        for &(a, b, k) in &self.edges {
            p[b].push((a, k));
        }
        p
    }

    pub fn kind(&self, from: usize, to: usize) -> Option<DependencyKind> {
        self.edges.binary_search_by(|(a, b, _)| (*a, *b).cmp(&(from, to))).ok().map(|i| self.edges[i].2)
    }

    /// Adds an edge, keeping the stricter kind if the pair is already related.
    pub fn add_edge(&mut self, from: usize, to: usize, kind: DependencyKind) {
        match self.edges.binary_search_by(|(a, b, _)| (*a, *b).cmp(&(from, to))) {
            Ok(i) => self.edges[i].2 = self.edges[i].2.max(kind),
            Err(i) if kind != DependencyKind::None => self.edges.insert(i, (from, to, kind)),
            Err(_) => {}
        }
    }

    /// Kahn order that prefers lower node ids; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(a, b, _) in &self.edges {
            indeg[b] += 1;
            succ[a].push(b);
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
        (out.len() == n).then_some(out)
    }
}

/// Merges parallel edges, keeping the strictest kind, and drops `None` edges.
pub fn reduce_dependencies(t: &Tdg) -> StrictDag {
    let mut merged: BTreeMap<(usize, usize), KindSet> = BTreeMap::new();
    for e in &t.edges {
        let set = merged.entry((e.from, e.to)).or_default();
        *set = set.union(e.detected);
        set.insert(e.kind);
    }
    StrictDag {
        names: t.nodes.iter().map(|n| n.name.clone()).collect(),
        tdg_order: t.nodes.iter().map(|n| n.tdg_order).collect(),
        edges: merged.into_iter().filter(|(_, s)| !s.is_empty()).map(|((a, b), s)| (a, b, s.strictest())).collect(),
        stateful_groups: t.stateful_groups.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelAssignment {
    pub levels: Vec<u32>,
}

impl LevelAssignment {
    pub fn max_level(&self) -> Option<u32> {
        self.levels.iter().copied().max()
    }
}

fn level_from_preds(levels: &[u32], preds: &[(usize, DependencyKind)]) -> u32 {
    preds.iter().map(|&(u, k)| if k.is_strict() { levels[u] + 1 } else { levels[u] }).max().unwrap_or(0)
}

/// Labels tables so strict dependents sit one level higher and weak
/// dependents at least at the same level.
pub fn assign_levels(d: &StrictDag) -> LevelAssignment {
    let order = d.topological_order().expect("dependency graph is acyclic");
    let preds = d.preds();
    let mut levels = vec![0u32; d.len()];
    for v in order {
        levels[v] = level_from_preds(&levels, &preds[v]);
    }
    LevelAssignment { levels }
}

/// A stateful group whose members cannot share a level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColocationConflict {
    pub group: Vec<String>,
}

/// Raises the members of each stateful group to a common level and
/// re-propagates until stable.
pub fn colocate_levels(d: &StrictDag, base: &LevelAssignment) -> Result<LevelAssignment, ColocationConflict> {
    let order = d.topological_order().expect("dependency graph is acyclic");
    let preds = d.preds();
    let mut levels = base.levels.clone();
    let bound = d.len() as u32;
    loop {
        let mut changed = false;
        for g in &d.stateful_groups {
            let top = g.iter().map(|m| levels[*m]).max().unwrap_or(0);
            for &m in g {
                if levels[m] != top {
                    levels[m] = top;
                    changed = true;
                }
            }
        }
        for &v in &order {
            let want = level_from_preds(&levels, &preds[v]);
            if want > levels[v] {
                levels[v] = want;
                changed = true;
            }
        }
        if let Some(g) = d.stateful_groups.iter().find(|g| g.iter().any(|m| levels[*m] > bound)) {
            return Err(ColocationConflict { group: g.iter().map(|m| d.names[*m].clone()).collect() });
        }
        if !changed {
            return Ok(LevelAssignment { levels });
        }
    }
}
