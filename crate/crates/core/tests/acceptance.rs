//! Acceptance suite: one PASS/FAIL line per criterion.

mod support;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmt_mapper::header_mapper::{brute_force_header_map, map_headers, waste_percent_of};
use rmt_mapper::hsl::{default_spec, ContainerClass, HardwareSpec, PhvSpec};
use rmt_mapper::ir::{build_parse_graph, parse_ir, DependencyKind, IrProgram, Tdg};
use rmt_mapper::parser_mapper::map_parser;
use rmt_mapper::report::{render_report, ReportFormat};
use rmt_mapper::synth::{chain_with_edges, random_sketch};
use rmt_mapper::tdg_mapper::{
    assign_levels, finish, map_dag, map_tdg, reduce_dependencies, ActionMode, ExternDemand, LatencyCosts, MatchClass,
    PlacementOptions, StageLedger, StatefulPolicy, StrictDag, TableDemand, TdgOptions,
};
use rmt_mapper::{compile, compile_documents, CompileOptions};

use support::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

const FIXTURES: [&str; 4] = ["qos_modifier", "traffic_anonymizer", "l2l3_simple", "l2l3_complex"];

fn fixture_path(name: &str) -> PathBuf {
    fixtures_dir().join("ir").join(format!("{name}.json"))
}

fn load_fixture(name: &str) -> IrProgram {
    parse_ir(&std::fs::read_to_string(fixture_path(name)).expect("fixture readable")).expect("fixture parses")
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.2}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

// 1. Waste formula against the benchmark (used, allocated, waste) rows.
fn waste_formula() -> Outcome {
    let rows = [
        ("QoS-Modifier", 1288u64, 1432u64, 10.05f64),
        ("Traffic-anony", 1064, 1208, 11.92),
        ("L2L3-simple", 2912, 3088, 5.69),
        ("L2L3-Complex", 1976, 2112, 6.43),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, used, alloc, expected) in rows {
        let w = waste_percent_of(used, alloc);
        worst = worst.max((w - expected).abs());
        parts.push(format!("{name} {w:.2}"));
    }
    outcome(worst <= 0.02, format!("max deviation {worst:.4} pp; {}", parts.join(", ")))
}

// 2. Parser entry bound on the 11-state, 31-edge graph, plus the pair-count property.
fn parse_entries() -> Outcome {
    let start = Instant::now();
    let parser = default_spec().parser;
    let program = load_fixture("l2l3_simple");
    let graph = build_parse_graph(&program).expect("parse graph");
    let m = map_parser(&graph, &parser).expect("parser maps");
    let shape_ok = graph.nodes.len() == 11 && graph.edges.len() == 31;
    let bound_ok = m.table.entry_count <= 31 && m.verdict.utilization_percent < 13.0 && m.verdict.accepted;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut trials = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=10);
        let g = random_parse_graph(&mut rng, n);
        let Ok(pm) = map_parser(&g, &parser) else { continue };
        trials += 1;
        if pm.table.entry_count != exit_pairs(&g, &pm.clusters.cluster_of) {
            mismatches += 1;
        }
    }
    let (fast, t) = within(start, Duration::from_secs(1));
    outcome(
        shape_ok && bound_ok && mismatches == 0 && fast,
        format!(
            "{} states / {} edges -> {} entries ({:.2}% of {}); pair-count property {}/{} graphs; {t}",
            graph.nodes.len(),
            graph.edges.len(),
            m.table.entry_count,
            m.verdict.utilization_percent,
            m.verdict.capacity,
            trials - mismatches,
            trials
        ),
    )
}

// 3. Level assignment against path enumeration on random DAGs.
fn level_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agree = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let density = rng.gen_range(0.05..0.6);
        let raw = random_dag(&mut rng, n, density);
        // Relabel nodes so ids are not already a topological order.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let edges: Vec<_> = raw.iter().map(|&(a, b, k)| (perm[a], perm[b], k)).collect();
        let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let dag = reduce_dependencies(&Tdg::from_edges(&refs, &edges));
        if assign_levels(&dag).levels == path_enumeration_levels(n, &edges) {
            agree += 1;
        }
    }
    let (fast, t) = within(start, Duration::from_secs(10));
    outcome(agree == 1000 && fast, format!("{agree}/1000 DAGs agree; {t}"))
}

fn contention_spec() -> HardwareSpec {
    let mut s = default_spec();
    s.num_stages = 12;
    s.stage.tcam_blocks = 6;
    s.stage.sram_blocks = 24;
    s.stage.vliw_slots = 8;
    s.stage.tcam_crossbar_width = 160;
    s.stage.sram_crossbar_width = 160;
    s.stage.action_crossbar_width = 256;
    s
}

// 4. Placement validity over random accepted programs.
fn placement_validity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut accepted, mut rejected, mut violations, mut splits, mut max_stages) = (0, 0, 0, 0, 0);
    let mut first_bad = None;
    let specs = [default_spec(), contention_spec()];
    while accepted < 500 && accepted + rejected < 20_000 {
        let sketch = random_sketch(&format!("p{}", accepted + rejected), 10, &mut rng);
        let program = parse_ir(&sketch.to_ir_string()).expect("synthetic program parses");
        let spec = &specs[rng.gen_range(0..specs.len())];
        let placement = PlacementOptions {
            action_mode: if rng.gen_bool(0.25) {
                ActionMode::Fixed(rng.gen_range(1..=64))
            } else {
                ActionMode::PerEntry
            },
            stateful_policy: if rng.gen_bool(0.5) { StatefulPolicy::Colocate } else { StatefulPolicy::Serialize },
            ..PlacementOptions::default()
        };
        let opts = TdgOptions { placement: placement.clone(), latency: LatencyCosts::default() };
        match map_tdg(&program, spec, &opts) {
            Ok(m) => {
                accepted += 1;
                max_stages = max_stages.max(m.stages_used);
                splits += m.pipelines.iter().flat_map(|p| &p.placements).filter(|p| p.portions.len() > 1).count();
                let bad = validate_mapping(&PipelineInput::all_from_program(&program), spec, &placement, &m);
                if !bad.is_empty() {
                    violations += bad.len();
                    first_bad.get_or_insert_with(|| format!("{}: {}", program.name, bad[0]));
                }
            }
            Err(_) => rejected += 1,
        }
    }
    let (fast, t) = within(start, Duration::from_secs(60));
    outcome(
        accepted == 500 && violations == 0 && fast,
        format!(
            "{accepted} accepted ({rejected} rejected), {splits} split tables, up to {max_stages} stages, \
             {violations} violations{}; {t}",
            first_bad.map(|b| format!(" first: {b}")).unwrap_or_default()
        ),
    )
}

#[derive(Clone, Copy)]
enum Item {
    ExactSmall,
    ExactBig,
    Ternary,
    Stateful,
}

fn demand(i: usize, item: Item) -> TableDemand {
    let base = TableDemand {
        name: format!("t{i}"),
        tdg_order: i,
        key_width: 32,
        entries: 1000,
        match_class: MatchClass::Exact,
        vliw_slots: 1,
        action_width: 16,
        action_crossbar_bits: 16,
        externs: vec![],
    };
    match item {
        Item::ExactSmall => base,
        Item::ExactBig => TableDemand { entries: 20_000, vliw_slots: 2, ..base },
        Item::Ternary => TableDemand { key_width: 40, entries: 4096, match_class: MatchClass::NonExact, ..base },
        Item::Stateful => TableDemand {
            key_width: 0,
            entries: 1,
            match_class: MatchClass::Keyless,
            action_width: 0,
            externs: vec![ExternDemand {
                id: 0,
                name: "reg".into(),
                kind: rmt_mapper::ir::ExternKind::Register,
                bits: 8192 * 32,
            }],
            ..base
        },
    }
}

fn tiny_spec() -> HardwareSpec {
    let mut s = default_spec();
    s.num_stages = 3;
    s.stage.tcam_blocks = 4;
    s.stage.sram_blocks = 16;
    s.stage.vliw_slots = 4;
    s
}

// 5. Soundness of the heuristic on every tiny instance, with the completeness gap.
fn tiny_soundness() -> Outcome {
    let start = Instant::now();
    let spec = tiny_spec();
    let items = [Item::ExactSmall, Item::ExactBig, Item::Ternary, Item::Stateful];
    let all_kinds = [
        DependencyKind::None,
        DependencyKind::Successor,
        DependencyKind::ReverseMatch,
        DependencyKind::Action,
        DependencyKind::Match,
    ];
    let coarse = [DependencyKind::None, DependencyKind::Successor, DependencyKind::Match];
    let (mut instances, mut heur_ok, mut brute_ok, mut unsound, mut gap, mut invalid) =
        (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let kinds: &[DependencyKind] = if n < 4 { &all_kinds } else { &coarse };
        let policies: &[StatefulPolicy] =
            if n < 4 { &[StatefulPolicy::Colocate, StatefulPolicy::Serialize] } else { &[StatefulPolicy::Colocate] };
        let kind_combos = kinds.len().pow(pairs.len() as u32);
        let item_combos = items.len().pow(n as u32);
        for kc in 0..kind_combos {
            let mut edges = Vec::new();
            let mut x = kc;
            for &(a, b) in &pairs {
                let k = kinds[x % kinds.len()];
                x /= kinds.len();
                if k != DependencyKind::None {
                    edges.push((a, b, k));
                }
            }
            for ic in 0..item_combos {
                let mut y = ic;
                let demands: Vec<TableDemand> = (0..n)
                    .map(|i| {
                        let it = items[y % items.len()];
                        y /= items.len();
                        demand(i, it)
                    })
                    .collect();
                let stateful: BTreeSet<usize> = (0..n).filter(|t| !demands[*t].externs.is_empty()).collect();
                let groups: Vec<BTreeSet<usize>> = if stateful.len() >= 2 { vec![stateful] } else { vec![] };
                let dag = StrictDag {
                    names: demands.iter().map(|d| d.name.clone()).collect(),
                    tdg_order: (0..n).collect(),
                    edges: edges.clone(),
                    stateful_groups: groups.clone(),
                };
                for &policy in policies {
                    instances += 1;
                    let opts = PlacementOptions { stateful_policy: policy, ..PlacementOptions::default() };
                    let mut ledger = StageLedger::default();
                    let heuristic = map_dag("ingress", &dag, &demands, &spec, &opts, &mut ledger)
                        .map(|p| finish(vec![p], ledger, &LatencyCosts::default()));
                    let feasible = brute_force_feasible(n, &edges, &demands, &groups, &spec, &opts);
                    brute_ok += u64::from(feasible);
                    match heuristic {
                        Ok(m) => {
                            heur_ok += 1;
                            if !feasible {
                                unsound += 1;
                            }
                            let input = PipelineInput {
                                name: "ingress".into(),
                                tables: dag.names.clone(),
                                tdg_order: dag.tdg_order.clone(),
                                edges: edges.clone(),
                                demands: demands.clone(),
                            };
                            if !validate_mapping(&[input], &spec, &opts, &m).is_empty() {
                                invalid += 1;
                            }
                        }
                        Err(_) if feasible => gap += 1,
                        Err(_) => {}
                    }
                }
            }
        }
    }
    let (fast, t) = within(start, Duration::from_secs(120));
    outcome(
        unsound == 0 && invalid == 0 && fast,
        format!(
            "{instances} instances, {heur_ok} heuristic accepts, {brute_ok} brute-force feasible, \
             {unsound} unsound, {invalid} invalid placements, completeness gap {gap} ({:.2}% of feasible); {t}",
            if brute_ok == 0 { 0.0 } else { 100.0 * gap as f64 / brute_ok as f64 }
        ),
    )
}

fn multisets(palette: &[u32], max_len: usize) -> Vec<Vec<u32>> {
    fn rec(palette: &[u32], from: usize, cur: &mut Vec<u32>, max_len: usize, out: &mut Vec<Vec<u32>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_len {
            return;
        }
        for i in from..palette.len() {
            cur.push(palette[i]);
            rec(palette, i, cur, max_len, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(palette, 0, &mut Vec::new(), max_len, &mut out);
    out
}

// 6. Header mapping against the exhaustive optimum on small instances.
fn knapsack_oracle() -> Outcome {
    let start = Instant::now();
    let palette = [4u32, 8, 12, 16, 24, 32, 40];
    let field_sets = multisets(&palette, 6);
    let mut phvs = Vec::new();
    for a in 0..=8u32 {
        for b in 0..=8 - a {
            for c in 0..=8 - a - b {
                if a + b + c > 0 {
                    phvs.push(PhvSpec {
                        containers: vec![
                            ContainerClass { width: 8, count: a },
                            ContainerClass { width: 16, count: b },
                            ContainerClass { width: 32, count: c },
                        ],
                    });
                }
            }
        }
    }
    let (mut instances, mut successes, mut unsound, mut over_bound, mut bad_assign, mut misses, mut oracle_disagree) =
        (0u64, 0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let mut worst_ratio = 1.0f64;
    for widths in &field_sets {
        let fields = header_fields(widths);
        let total: u32 = widths.iter().sum();
        for phv in &phvs {
            if u64::from(total) > phv.total_bits() {
                continue;
            }
            instances += 1;
            let opt = header_optimum(widths, phv);
            let lib = brute_force_header_map(&fields, phv).expect("within oracle limits");
            if lib.as_ref().map(|m| m.allocated_bits) != opt {
                oracle_disagree += 1;
            }
            match map_headers(&fields, phv) {
                Ok(m) => {
                    successes += 1;
                    let Some(best) = opt else {
                        unsound += 1;
                        continue;
                    };
                    let ratio = m.allocated_bits as f64 / best as f64;
                    worst_ratio = worst_ratio.max(ratio);
                    if ratio > 1.5 {
                        over_bound += 1;
                    }
                    let mut used = [0u32; 3];
                    let mut ok = m.assignments.len() == widths.len();
                    for (a, w) in m.assignments.iter().zip(widths) {
                        let bits: u32 = a.containers.iter().map(|c| c.width * c.count).sum();
                        ok &= a.width == *w && bits >= *w && bits == a.allocated_bits;
                        for c in &a.containers {
                            let k = [8, 16, 32].iter().position(|x| *x == c.width).expect("known class");
                            used[k] += c.count;
                        }
                    }
                    ok &= used.iter().zip(&phv.containers).all(|(u, c)| *u <= c.count);
                    if !ok {
                        bad_assign += 1;
                    }
                }
                Err(_) if opt.is_some() => misses += 1,
                Err(_) => {}
            }
        }
    }
    let (fast, t) = within(start, Duration::from_secs(60));
    outcome(
        unsound == 0 && over_bound == 0 && bad_assign == 0 && oracle_disagree == 0 && fast,
        format!(
            "{instances} instances, {successes} mapped, {unsound} unsound, {over_bound} over 1.5x, \
             worst ratio {worst_ratio:.3}, {bad_assign} bad assignments, {misses} feasible but unmapped, \
             {oracle_disagree} oracle disagreements; {t}"
        ),
    )
}

// 7. Full compilation of a 100-node, 200-edge program.
fn scale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds =
        [DependencyKind::Match, DependencyKind::Action, DependencyKind::ReverseMatch, DependencyKind::ReverseMatch];
    let sketch = chain_with_edges("scale_100", 100, 200, &kinds, &mut rng);
    let text = sketch.to_ir_string();
    let start = Instant::now();
    let report = compile_documents(&text, None, &CompileOptions::default()).expect("valid input");
    let (fast, t) = within(start, Duration::from_secs(10));
    let program = parse_ir(&text).expect("parses");
    let tdg = rmt_mapper::ir::build_tdg(&program, "ingress").expect("tdg");
    let shape = tdg.nodes.len() == 100 && tdg.edges.len() == 200;
    let verdict = match &report.verdict {
        rmt_mapper::report::Verdict::Accepted => {
            format!("accepted in {} stages", report.tdg.as_ref().map_or(0, |s| s.stages_used))
        }
        rmt_mapper::report::Verdict::Rejected { phase, resource, .. } => {
            format!("rejected in {} phase ({resource})", phase.as_str())
        }
    };
    outcome(shape && fast, format!("{} nodes / {} edges, {verdict}; {t}", tdg.nodes.len(), tdg.edges.len()))
}

// 8. Byte-identical reports, in process and through the binary.
fn determinism() -> Outcome {
    let hw = fixtures_dir().join("hw").join("rmt_benchmark.json");
    let mut same = 0;
    let mut notes = Vec::new();
    for name in FIXTURES {
        let path = fixture_path(name);
        let run = || {
            render_report(
                &compile(&path, Some(&hw), &CompileOptions::default()).expect("fixture compiles"),
                ReportFormat::Json,
            )
        };
        let a = run();
        let b = run();
        let cli = |_: u8| {
            Command::new(env!("CARGO_BIN_EXE_rmt-mapper"))
                .args(["--ir", path.to_str().expect("utf-8 path"), "--hw", hw.to_str().expect("utf-8 path")])
                .output()
                .expect("binary runs")
                .stdout
        };
        let (c, d) = (cli(0), cli(1));
        if a == b && c == d && c == a.as_bytes() {
            same += 1;
        } else {
            notes.push(name);
        }
    }
    outcome(
        same == FIXTURES.len(),
        format!(
            "{same}/{} fixtures byte-identical{}",
            FIXTURES.len(),
            if notes.is_empty() { String::new() } else { format!(", differing: {}", notes.join(", ")) }
        ),
    )
}

type Criterion = (u8, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        (1, "waste formula", waste_formula),
        (2, "parse-entry counting", parse_entries),
        (3, "level-assignment oracle", level_oracle),
        (4, "placement validity", placement_validity),
        (5, "tiny-instance soundness", tiny_soundness),
        (6, "knapsack oracle soundness", knapsack_oracle),
        (7, "scale and runtime", scale),
        (8, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let o = run();
        println!("criterion {id} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += u32::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
