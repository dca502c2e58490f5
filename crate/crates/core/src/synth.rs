//! Synthetic program generation for stress and property testing.
//!
//! A [`ProgramSketch`] is a compact description of one ingress pipeline
//! over a metadata header; [`ProgramSketch::to_ir_json`] expands it into a
//! frontend-style IR document that [`crate::ir::parse_ir`] accepts.

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use crate::ir::DependencyKind;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActionSketch {
    pub name: String,
    pub params: Vec<u32>,
    pub writes: Vec<String>,
    pub reads: Vec<String>,
    /// (register, destination field)
    pub register_reads: Vec<(String, String)>,
    /// (register, source field)
    pub register_writes: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSketch {
    pub name: String,
    /// (field, match kind)
    pub keys: Vec<(String, &'static str)>,
    pub size: u64,
    pub actions: Vec<String>,
    pub next: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CondSketch {
    pub name: String,
    pub reads: Vec<String>,
    pub true_next: Option<String>,
    pub false_next: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramSketch {
    pub name: String,
    /// Fields of the `meta` metadata header.
    pub meta_fields: Vec<(String, u32)>,
    /// (name, size, width)
    pub registers: Vec<(String, u64, u32)>,
    pub actions: Vec<ActionSketch>,
    pub tables: Vec<TableSketch>,
    pub conditionals: Vec<CondSketch>,
    pub init: Option<String>,
}

fn field_ref(f: &str) -> Value {
    let (h, n) = f.split_once('.').expect("qualified field name");
    json!({"type": "field", "value": [h, n]})
}

impl ProgramSketch {
    pub fn to_ir_json(&self) -> Value {
        let mut actions = Vec::new();
        for (id, a) in self.actions.iter().enumerate() {
            let mut prims = Vec::new();
            for (i, w) in a.writes.iter().enumerate() {
                let src = if let Some(r) = a.reads.get(i) {
                    field_ref(r)
                } else if !a.params.is_empty() {
                    json!({"type": "runtime_data", "value": 0})
                } else {
                    json!({"type": "hexstr", "value": "0x1"})
                };
                prims.push(json!({"op": "assign", "parameters": [field_ref(w), src]}));
            }
            for r in a.reads.iter().skip(a.writes.len()) {
                prims.push(json!({"op": "log_msg", "parameters": [field_ref(r)]}));
            }
            for (reg, dst) in &a.register_reads {
                prims.push(json!({"op": "register_read", "parameters": [
                    field_ref(dst), {"type": "register_array", "value": reg}, {"type": "hexstr", "value": "0x0"}]}));
            }
            for (reg, src) in &a.register_writes {
                prims.push(json!({"op": "register_write", "parameters": [
                    {"type": "register_array", "value": reg}, {"type": "hexstr", "value": "0x0"}, field_ref(src)]}));
            }
            actions.push(json!({
                "name": a.name,
                "id": id,
                "runtime_data": a.params.iter().enumerate().map(|(i, w)| json!({"name": format!("p{i}"), "bitwidth": w})).collect::<Vec<_>>(),
                "primitives": prims,
            }));
        }
        let action_id = |n: &str| self.actions.iter().position(|a| a.name == n).expect("action declared");
        let tables: Vec<Value> = self
            .tables
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let next: serde_json::Map<String, Value> =
                    t.actions.iter().map(|a| (a.clone(), json!(t.next))).collect();
                json!({
                    "name": t.name,
                    "id": id,
                    "key": t.keys.iter().map(|(f, k)| {
                        let (h, n) = f.split_once('.').expect("qualified field name");
                        json!({"match_type": k, "target": [h, n], "mask": null})
                    }).collect::<Vec<_>>(),
                    "match_type": t.keys.first().map_or("exact", |k| k.1),
                    "type": "simple",
                    "max_size": t.size,
                    "with_counters": false,
                    "direct_meters": null,
                    "action_ids": t.actions.iter().map(|a| action_id(a)).collect::<Vec<_>>(),
                    "actions": t.actions,
                    "base_default_next": t.next,
                    "next_tables": next,
                })
            })
            .collect();
        let conditionals: Vec<Value> = self
            .conditionals
            .iter()
            .enumerate()
            .map(|(id, c)| {
                let expr = c.reads.iter().fold(Value::Null, |acc, f| {
                    let cmp = json!({"type": "expression", "value": {"op": "==", "left": field_ref(f), "right": {"type": "hexstr", "value": "0x1"}}});
                    if acc.is_null() { cmp } else { json!({"type": "expression", "value": {"op": "and", "left": acc, "right": cmp}}) }
                });
                json!({"name": c.name, "id": id, "expression": if expr.is_null() { json!({"type": "bool", "value": true}) } else { expr },
                       "true_next": c.true_next, "false_next": c.false_next})
            })
            .collect();
        json!({
            "program": format!("{}.p4", self.name),
            "header_types": [
                {"name": "ethernet_t", "id": 0, "fields": [["dstAddr", 48, false], ["srcAddr", 48, false], ["etherType", 16, false]]},
                {"name": "meta_t", "id": 1, "fields": self.meta_fields.iter().map(|(n, w)| json!([n, w, false])).collect::<Vec<_>>()},
            ],
            "headers": [
                {"name": "ethernet", "id": 0, "header_type": "ethernet_t", "metadata": false},
                {"name": "meta", "id": 1, "header_type": "meta_t", "metadata": true},
            ],
            "header_stacks": [],
            "parsers": [{"name": "parser", "id": 0, "init_state": "start", "parse_states": [{
                "name": "start", "id": 0,
                "parser_ops": [{"op": "extract", "parameters": [{"type": "regular", "value": "ethernet"}]}],
                "transition_key": [],
                "transitions": [{"type": "default", "value": null, "mask": null, "next_state": null}]
            }]}],
            "register_arrays": self.registers.iter().enumerate().map(|(id, (n, size, w))| json!({"name": n, "id": id, "size": size, "bitwidth": w})).collect::<Vec<_>>(),
            "counter_arrays": [],
            "meter_arrays": [],
            "actions": actions,
            "pipelines": [
                {"name": "ingress", "id": 0, "init_table": self.init, "tables": tables, "conditionals": conditionals},
                {"name": "egress", "id": 1, "init_table": null, "tables": [], "conditionals": []},
            ],
        })
    }

    pub fn to_ir_string(&self) -> String {
        self.to_ir_json().to_string()
    }
}

/// A chain of `tables` tables whose dependency graph has exactly `edges`
/// edges: the `tables - 1` successor edges of the chain plus extra data
/// dependencies between non-adjacent tables, with kinds drawn from `kinds`.
pub fn chain_with_edges<R: Rng>(
    name: &str,
    tables: usize,
    edges: usize,
    kinds: &[DependencyKind],
    rng: &mut R,
) -> ProgramSketch {
    assert!(tables >= 1);
    let chain = tables - 1;
    let mut pairs: Vec<(usize, usize)> = (0..tables).flat_map(|i| (i + 2..tables).map(move |j| (i, j))).collect();
    assert!(edges >= chain && edges - chain <= pairs.len(), "edge count out of range for {tables} tables");
    pairs.shuffle(rng);
    pairs.truncate(edges - chain);
    pairs.sort_unstable();

    let mut meta_fields = Vec::new();
    let mut keys: Vec<Vec<(String, &'static str)>> = Vec::new();
    let mut reads: Vec<Vec<String>> = vec![Vec::new(); tables];
    for i in 0..tables {
        meta_fields.push((format!("k{i}"), 16));
        meta_fields.push((format!("w{i}"), 8));
        keys.push(vec![(format!("meta.k{i}"), "exact")]);
    }
    for &(i, j) in &pairs {
        match kinds[rng.gen_range(0..kinds.len())] {
            DependencyKind::Match => keys[j].push((format!("meta.w{i}"), "exact")),
            DependencyKind::ReverseMatch => keys[i].push((format!("meta.w{j}"), "exact")),
            _ => reads[j].push(format!("meta.w{i}")),
        }
    }
    for k in &mut keys {
        k.sort();
        k.dedup();
    }
    let mut actions = Vec::new();
    let mut table_list = Vec::new();
    for i in 0..tables {
        let mut r = reads[i].clone();
        r.sort();
        r.dedup();
        actions.push(ActionSketch {
            name: format!("a{i}"),
            params: vec![8],
            writes: vec![format!("meta.w{i}")],
            reads: r,
            ..Default::default()
        });
        let acts = vec![format!("a{i}")];
        table_list.push(TableSketch {
            name: format!("t{i}"),
            keys: keys[i].clone(),
            size: 256 + 64 * (i as u64 % 8),
            actions: acts,
            next: (i + 1 < tables).then(|| format!("t{}", i + 1)),
        });
    }
    ProgramSketch {
        name: name.to_string(),
        meta_fields,
        registers: vec![],
        actions,
        tables: table_list,
        conditionals: vec![],
        init: Some("t0".into()),
    }
}

/// A small random program: a few tables over a shared field pool, optional
/// branches and optional shared registers.
pub fn random_sketch<R: Rng>(name: &str, max_tables: usize, rng: &mut R) -> ProgramSketch {
    let n = rng.gen_range(1..=max_tables.max(1));
    let pool = rng.gen_range(3..=8);
    let meta_fields: Vec<(String, u32)> =
        (0..pool).map(|i| (format!("f{i}"), [8u32, 16, 32, 48][rng.gen_range(0..4)])).collect();
    let field = |i: usize| format!("meta.f{i}");
    let regs: Vec<(String, u64, u32)> = (0..rng.gen_range(0..=2))
        .map(|i| (format!("reg{i}"), [64u64, 1024, 8192][rng.gen_range(0..3)], [8u32, 32][rng.gen_range(0..2)]))
        .collect();

    let mut actions = Vec::new();
    let mut tables = Vec::new();
    for t in 0..n {
        let nk = rng.gen_range(0..=3usize);
        let mut keys = Vec::new();
        for _ in 0..nk {
            let kind = ["exact", "exact", "ternary", "lpm"][rng.gen_range(0..4)];
            keys.push((field(rng.gen_range(0..pool)), kind));
        }
        keys.sort();
        keys.dedup_by(|a, b| a.0 == b.0);
        let na = rng.gen_range(1..=3);
        let mut names = Vec::new();
        for a in 0..na {
            let mut act = ActionSketch {
                name: format!("t{t}_a{a}"),
                params: (0..rng.gen_range(0..=2)).map(|_| [8u32, 16, 32][rng.gen_range(0..3)]).collect(),
                ..Default::default()
            };
            if rng.gen_bool(0.6) {
                act.writes.push(field(rng.gen_range(0..pool)));
            }
            if rng.gen_bool(0.5) {
                act.reads.push(field(rng.gen_range(0..pool)));
            }
            if !regs.is_empty() && rng.gen_bool(0.3) {
                let r = regs[rng.gen_range(0..regs.len())].0.clone();
                act.register_reads.push((r.clone(), field(rng.gen_range(0..pool))));
                act.register_writes.push((r, field(rng.gen_range(0..pool))));
            }
            names.push(act.name.clone());
            actions.push(act);
        }
        let size = [1u64, 16, 256, 1024, 4096, 20_000, 100_000][rng.gen_range(0..7)];
        tables.push(TableSketch { name: format!("t{t}"), keys, size, actions: names, next: None });
    }

    // Control flow: a chain with occasional two-way branches that rejoin.
    let mut conditionals = Vec::new();
    let mut i = 0;
    let mut heads: Vec<String> = Vec::new();
    let mut tails: Vec<Vec<usize>> = Vec::new();
    while i < n {
        if i + 2 < n && rng.gen_bool(0.3) {
            let c = format!("c{}", conditionals.len());
            let reads = vec![field(rng.gen_range(0..pool))];
            conditionals.push(CondSketch {
                name: c.clone(),
                reads,
                true_next: Some(format!("t{i}")),
                false_next: Some(format!("t{}", i + 1)),
            });
            heads.push(c);
            tails.push(vec![i, i + 1]);
            i += 2;
        } else {
            heads.push(format!("t{i}"));
            tails.push(vec![i]);
            i += 1;
        }
    }
    for (k, ends) in tails.iter().enumerate() {
        let next = heads.get(k + 1).cloned();
        for &e in ends {
            tables[e].next = next.clone();
        }
    }
    ProgramSketch {
        name: name.to_string(),
        meta_fields,
        registers: regs,
        actions,
        tables,
        conditionals,
        init: heads.first().cloned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_tdg, parse_ir};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_hits_exact_edge_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kinds = [DependencyKind::Match, DependencyKind::Action, DependencyKind::ReverseMatch];
        let s = chain_with_edges("chain", 30, 70, &kinds, &mut rng);
        let p = parse_ir(&s.to_ir_string()).unwrap();
        let tdg = build_tdg(&p, "ingress").unwrap();
        assert_eq!(tdg.nodes.len(), 30);
        assert_eq!(tdg.edges.len(), 70);
    }

    #[test]
    fn random_sketches_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..50 {
            let s = random_sketch(&format!("r{k}"), 8, &mut rng);
            let p = parse_ir(&s.to_ir_string()).unwrap();
            build_tdg(&p, "ingress").unwrap();
        }
    }
}
