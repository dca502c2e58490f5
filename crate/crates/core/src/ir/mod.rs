//! Target-independent program representation.
//!
//! The frontend emits one JSON document per program (the BMv2-style
//! context dump). [`parse_ir`] reads the subset needed for mapping:
//! header types and instances, the parser state machine, actions,
//! pipelines with their tables and conditionals, and the register,
//! counter and meter declarations. [`build_parse_graph`] and [`build_tdg`]
//! derive the two graphs the mappers work on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::Diagnostic;

mod parse;
mod parse_graph;
mod tdg;

pub use parse::parse_ir;
pub use parse_graph::{build_parse_graph, ParseEdge, ParseGraph, ParseNode, ParseTarget};
pub use tdg::{
    build_tdg, classify_dependency, detect_dependencies, ControlFlow, DependencyKind, KindSet, TableAccess, Tdg,
    TdgEdge, TdgNode,
};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub usize);
    };
}

id_type!(FieldId);
id_type!(HeaderId);
id_type!(ActionId);
id_type!(ExternId);

/// Name of the pseudo-field the frontend uses for a header's validity bit.
pub const VALIDITY_FIELD: &str = "$valid$";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderField {
    pub name: String,
    pub header_instance: String,
    pub width: u32,
    pub is_metadata: bool,
    /// Validity bits are tracked for dependency analysis only; they live in
    /// the PHV valid-bit vector, not in general-purpose containers.
    pub is_validity: bool,
}

impl HeaderField {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.header_instance, self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderInstance {
    pub name: String,
    pub header_type: String,
    pub is_metadata: bool,
    pub fields: Vec<FieldId>,
    pub validity: Option<FieldId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Ternary,
    Lpm,
    /// Placed like ternary; the frontend encodes ranges differently across versions.
    Range,
}

impl MatchKind {
    pub fn is_exact(self) -> bool {
        self == MatchKind::Exact
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchField {
    pub field: FieldId,
    pub kind: MatchKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternKind {
    Register,
    Counter,
    Meter,
}

impl ExternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExternKind::Register => "register",
            ExternKind::Counter => "counter",
            ExternKind::Meter => "meter",
        }
    }
}

/// Width of one indirect counter or meter cell in stateful memory.
pub const COUNTER_CELL_BITS: u32 = 64;
pub const METER_CELL_BITS: u32 = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternDecl {
    pub name: String,
    pub kind: ExternKind,
    pub size: u64,
    /// Bits per cell.
    pub width: u32,
}

impl ExternDecl {
    pub fn total_bits(&self) -> u64 {
        self.size * u64::from(self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExternOpKind {
    Read,
    Write,
    Count,
    Execute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExternOp {
    pub extern_id: ExternId,
    pub op: ExternOpKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionDef {
    pub name: String,
    pub reads: BTreeSet<FieldId>,
    pub writes: BTreeSet<FieldId>,
    pub extern_ops: Vec<ExternOp>,
    /// Sum of the action's runtime parameter widths.
    pub arg_width_total: u32,
}

/// A node of a pipeline's control graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Table(usize),
    Conditional(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogicalTable {
    pub name: String,
    pub match_fields: Vec<MatchField>,
    pub max_entries: u64,
    pub actions: Vec<ActionId>,
    /// Keyed by action name, or `__HIT__`/`__MISS__`; `None` ends the pipeline.
    pub next_table_map: BTreeMap<String, Option<NodeRef>>,
    pub base_default_next: Option<NodeRef>,
    pub extern_refs: BTreeSet<ExternId>,
    /// Position in a topological order of the control graph that prefers
    /// declaration order among ready nodes.
    pub tdg_order: usize,
}

impl LogicalTable {
    pub fn is_keyless(&self) -> bool {
        self.match_fields.is_empty()
    }

    /// True when every match field is exact; keyless tables count as exact.
    pub fn is_exact(&self) -> bool {
        self.match_fields.iter().all(|m| m.kind.is_exact())
    }

    pub fn next_nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.next_table_map.values().flatten().copied().chain(self.base_default_next)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conditional {
    pub name: String,
    pub reads: BTreeSet<FieldId>,
    pub true_next: Option<NodeRef>,
    pub false_next: Option<NodeRef>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub name: String,
    pub init: Option<NodeRef>,
    pub tables: Vec<LogicalTable>,
    pub conditionals: Vec<Conditional>,
}

impl Pipeline {
    pub fn node_name(&self, node: NodeRef) -> &str {
        match node {
            NodeRef::Table(i) => &self.tables[i].name,
            NodeRef::Conditional(i) => &self.conditionals[i].name,
        }
    }
}

/// One component of a parser state's select key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectKey {
    pub label: String,
    pub field: Option<FieldId>,
    pub width: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransitionMatch {
    Value { value: BigUint, mask: Option<BigUint> },
    Default,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub matcher: TransitionMatch,
    /// `None` transitions to accept.
    pub next_state: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseState {
    pub name: String,
    pub extracts: Vec<HeaderId>,
    pub key: Vec<SelectKey>,
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParserDef {
    pub name: String,
    pub init_state: String,
    pub states: Vec<ParseState>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrProgram {
    pub name: String,
    pub fields: Vec<HeaderField>,
    pub headers: Vec<HeaderInstance>,
    pub actions: Vec<ActionDef>,
    pub externs: Vec<ExternDecl>,
    pub parsers: Vec<ParserDef>,
    pub pipelines: Vec<Pipeline>,
    /// Notes and warnings about constructs that were read but not modeled.
    pub diagnostics: Vec<Diagnostic>,
}

impl IrProgram {
    pub fn field(&self, id: FieldId) -> &HeaderField {
        &self.fields[id.0]
    }

    pub fn action(&self, id: ActionId) -> &ActionDef {
        &self.actions[id.0]
    }

    pub fn extern_decl(&self, id: ExternId) -> &ExternDecl {
        &self.externs[id.0]
    }

    pub fn pipeline(&self, name: &str) -> Option<&Pipeline> {
        self.pipelines.iter().find(|p| p.name == name)
    }

    pub fn field_by_name(&self, header: &str, name: &str) -> Option<FieldId> {
        self.fields.iter().position(|f| f.header_instance == header && f.name == name).map(FieldId)
    }

    /// Fields that occupy PHV containers, in declaration order.
    pub fn phv_fields(&self) -> impl Iterator<Item = (FieldId, &HeaderField)> {
        self.fields.iter().enumerate().filter(|(_, f)| !f.is_validity).map(|(i, f)| (FieldId(i), f))
    }

    pub fn field_width(&self, id: FieldId) -> u32 {
        self.fields[id.0].width
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("malformed IR document at byte {offset} (line {line}, column {column}): {message}")]
    Syntax { offset: usize, line: usize, column: usize, message: String },
    #[error("invalid IR document at `{path}`: {message}")]
    Malformed { path: String, message: String },
    #[error("unsupported feature: {feature} (in `{element}`)")]
    Unsupported { feature: String, element: String },
    #[error("cyclic {graph}: `{element}` is on a cycle")]
    Cycle { graph: GraphKind, element: String },
    #[error("no pipeline named `{0}`")]
    UnknownPipeline(String),
}

impl IrError {
    /// Unsupported constructs and cycles describe the program, not a broken
    /// input file, and are reported as mapping rejections.
    pub fn is_rejection(&self) -> bool {
        matches!(self, IrError::Unsupported { .. } | IrError::Cycle { .. })
    }

    pub fn element(&self) -> String {
        match self {
            IrError::Unsupported { element, .. } | IrError::Cycle { element, .. } => element.clone(),
            IrError::Malformed { path, .. } => path.clone(),
            IrError::UnknownPipeline(p) => p.clone(),
            IrError::Syntax { offset, .. } => format!("byte {offset}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    ParseGraph,
    ControlFlow,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::ParseGraph => "parser state machine",
            GraphKind::ControlFlow => "control flow",
        })
    }
}
