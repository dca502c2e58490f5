//! Hardware specification language (HSL).
//!
//! One JSON document describes one V1Model switch: a `parser` section, a
//! `phv` container inventory, a per-`stage` resource description and two
//! top-level scalars, `num_stages` and `packing_factor`. All widths are in
//! bits and all depths in entries. See `schema/hsl.schema.json` for the
//! full schema and the defaults applied to optional keys.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diag::{byte_offset, Diagnostic};

pub const HSL_VERSION: &str = "1.0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserSpec {
    /// Lookahead window of the header identification unit (P_B).
    pub lookahead_bits: u32,
    /// Headers identified per cycle (H).
    pub max_headers_per_cycle: u32,
    /// Parser TCAM depth (P_L^T).
    pub tcam_entries: u32,
    pub tcam_entry_width: u32,
    /// Lookup fields per TCAM lookup (f_C^T).
    pub lookup_fields_per_cycle: u32,
    /// Width of one lookup field (f_W^T).
    pub lookup_field_width: u32,
    /// Bits extracted into the field buffer per cycle (P_W^E).
    pub extraction_width_per_cycle: u32,
}

impl ParserSpec {
    /// Header bits a single parser cycle can consume: the tighter of the
    /// lookahead window and the extraction width.
    pub fn cycle_bit_budget(&self) -> u32 {
        self.lookahead_bits.min(self.extraction_width_per_cycle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerClass {
    pub width: u32,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhvSpec {
    pub containers: Vec<ContainerClass>,
}

impl PhvSpec {
    pub fn total_bits(&self) -> u64 {
        self.containers.iter().map(|c| u64::from(c.width) * u64::from(c.count)).sum()
    }

    pub fn total_containers(&self) -> u64 {
        self.containers.iter().map(|c| u64::from(c.count)).sum()
    }
}

/// How the per-stage SRAM blocks are divided among match, action and
/// stateful memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SramPartitions {
    /// All three roles draw from one pool of `sram_blocks`.
    #[default]
    Shared,
    Fixed {
        match_blocks: u32,
        action_blocks: u32,
        stateful_blocks: u32,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PartitionsRepr {
    Keyword(String),
    Fixed { r#match: u32, action: u32, stateful: u32 },
}

impl Serialize for SramPartitions {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            SramPartitions::Shared => PartitionsRepr::Keyword("shared".into()),
            SramPartitions::Fixed { match_blocks, action_blocks, stateful_blocks } => {
                PartitionsRepr::Fixed { r#match: match_blocks, action: action_blocks, stateful: stateful_blocks }
            }
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SramPartitions {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match PartitionsRepr::deserialize(deserializer)? {
            PartitionsRepr::Keyword(k) if k == "shared" => Ok(SramPartitions::Shared),
            PartitionsRepr::Keyword(k) => {
                Err(de::Error::custom(format!("unknown partition keyword `{k}`, expected \"shared\"")))
            }
            PartitionsRepr::Fixed { r#match, action, stateful } => {
                Ok(SramPartitions::Fixed { match_blocks: r#match, action_blocks: action, stateful_blocks: stateful })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    /// TCAM blocks per stage (T), each `tcam_width` bits wide (T_W) and
    /// `tcam_depth` entries deep (T_L).
    pub tcam_blocks: u32,
    pub tcam_width: u32,
    pub tcam_depth: u32,
    /// SRAM blocks per stage (S), S_W bits by S_L entries.
    pub sram_blocks: u32,
    pub sram_width: u32,
    pub sram_depth: u32,
    #[serde(default)]
    pub sram_partitions: SramPartitions,
    /// Match crossbar width feeding the TCAM blocks (TCB_W).
    pub tcam_crossbar_width: u32,
    /// Match crossbar width feeding the SRAM hash units (SCB_W).
    pub sram_crossbar_width: u32,
    /// Action crossbar width (ACB_W).
    pub action_crossbar_width: u32,
    /// VLIW instruction slots (A_C).
    pub vliw_slots: u32,
    /// Cuckoo hash ways (HS_K).
    pub hash_ways: u32,
    /// Memory ports (M_P) of `memory_port_width` bits (M_BW).
    pub memory_ports: u32,
    pub memory_port_width: u32,
    /// Per-kind extern unit limits (`register`, `counter`, `meter`).
    /// Absent means unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extern_units: Option<BTreeMap<String, u32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub hsl_version: String,
    #[serde(default = "default_name")]
    pub name: String,
    /// Match-action stages (N).
    pub num_stages: u32,
    /// SRAM blocks per packing unit (p_f).
    #[serde(default = "default_packing_factor")]
    pub packing_factor: u32,
    pub parser: ParserSpec,
    pub phv: PhvSpec,
    pub stage: StageSpec,
}

fn default_name() -> String {
    "unnamed".to_string()
}

fn default_packing_factor() -> u32 {
    1
}

impl HardwareSpec {
    /// Compact canonical JSON encoding; field order is fixed by the struct.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("hardware spec serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hardware spec serializes")
    }

    /// SHA-256 of the canonical encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}

/// Result of reading an HSL document: the spec plus non-fatal diagnostics
/// (unknown keys, warnings from validation).
#[derive(Clone, Debug)]
pub struct ParsedHsl {
    pub spec: HardwareSpec,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Error)]
pub enum HslError {
    #[error("malformed HSL document at byte {offset} (line {line}, column {column}): {message}")]
    Syntax { offset: usize, line: usize, column: usize, message: String },
    #[error("invalid HSL document at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("HSL validation failed: {}", DiagList(.0))]
    Invalid(Vec<Diagnostic>),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().filter(|d| d.is_error()).enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", d.path, d.message)?;
        }
        Ok(())
    }
}

/// Parses and validates an HSL document.
///
/// Unknown keys are reported as warnings; error-level validation findings
/// fail the parse with [`HslError::Invalid`].
pub fn parse_hsl(document: &str) -> Result<ParsedHsl, HslError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(document);
    let mut record = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
    let ignored = serde_ignored::Deserializer::new(&mut de, &mut record);
    let spec: HardwareSpec = serde_path_to_error::deserialize(ignored).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => schema_error(path, &inner),
            _ => HslError::Syntax {
                offset: byte_offset(document, inner.line(), inner.column()),
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            },
        }
    })?;
    de.end().map_err(|inner| HslError::Syntax {
        offset: byte_offset(document, inner.line(), inner.column()),
        line: inner.line(),
        column: inner.column(),
        message: inner.to_string(),
    })?;

    let mut diagnostics: Vec<Diagnostic> =
        unknown.into_iter().map(|p| Diagnostic::warning(p, "unknown key ignored")).collect();
    let findings = validate_spec(&spec);
    if findings.iter().any(Diagnostic::is_error) {
        return Err(HslError::Invalid(findings));
    }
    diagnostics.extend(findings);
    Ok(ParsedHsl { spec, diagnostics })
}

fn schema_error(path: String, inner: &serde_json::Error) -> HslError {
    // serde_json appends " at line X column Y"; the path already locates it.
    let msg = inner.to_string();
    let message = match msg.rfind(" at line ") {
        Some(idx) => msg[..idx].to_string(),
        None => msg,
    };
    let path = if path == "." { "<root>".to_string() } else { path };
    HslError::Schema { path, message }
}

/// Checks every type invariant of a hardware spec. Returns an empty list iff
/// the spec is fully consistent; warnings flag suspicious but legal values.
pub fn validate_spec(spec: &HardwareSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if spec.hsl_version != HSL_VERSION {
        out.push(Diagnostic::error(
            "hsl_version",
            format!("unsupported version `{}`, expected `{HSL_VERSION}`", spec.hsl_version),
        ));
    }
    if spec.num_stages == 0 {
        out.push(Diagnostic::error("num_stages", "must be at least 1"));
    }
    if spec.packing_factor == 0 {
        out.push(Diagnostic::error("packing_factor", "must be at least 1"));
    }

    let p = &spec.parser;
    for (key, value) in [
        ("lookahead_bits", p.lookahead_bits),
        ("max_headers_per_cycle", p.max_headers_per_cycle),
        ("tcam_entries", p.tcam_entries),
        ("tcam_entry_width", p.tcam_entry_width),
        ("lookup_fields_per_cycle", p.lookup_fields_per_cycle),
        ("lookup_field_width", p.lookup_field_width),
        ("extraction_width_per_cycle", p.extraction_width_per_cycle),
    ] {
        if value == 0 {
            out.push(Diagnostic::error(format!("parser.{key}"), "must be at least 1"));
        }
    }
    if u64::from(p.lookup_fields_per_cycle) * u64::from(p.lookup_field_width) >= u64::from(p.tcam_entry_width)
        && p.tcam_entry_width > 0
    {
        out.push(Diagnostic::warning(
            "parser.tcam_entry_width",
            "lookup fields fill the whole entry; no bits remain for the state identifier",
        ));
    }

    if spec.phv.containers.is_empty() {
        out.push(Diagnostic::error("phv.containers", "at least one container class is required"));
    }
    let mut seen = BTreeMap::new();
    for (i, class) in spec.phv.containers.iter().enumerate() {
        if class.width == 0 {
            out.push(Diagnostic::error(format!("phv.containers[{i}].width"), "must be at least 1"));
        }
        if let Some(prev) = seen.insert(class.width, i) {
            out.push(Diagnostic::error(
                format!("phv.containers[{i}].width"),
                format!("width {} already declared by containers[{prev}]", class.width),
            ));
        }
        if class.count == 0 {
            out.push(Diagnostic::warning(format!("phv.containers[{i}].count"), "class has no containers"));
        }
    }

    let s = &spec.stage;
    if s.tcam_blocks > 0 {
        if s.tcam_width == 0 {
            out.push(Diagnostic::error("stage.tcam_width", "must be at least 1 when tcam_blocks > 0"));
        }
        if s.tcam_depth == 0 {
            out.push(Diagnostic::error("stage.tcam_depth", "must be at least 1 when tcam_blocks > 0"));
        }
        if s.tcam_crossbar_width == 0 {
            out.push(Diagnostic::warning(
                "stage.tcam_crossbar_width",
                "zero-width TCAM crossbar makes the TCAM blocks unusable",
            ));
        }
    }
    if s.sram_blocks > 0 {
        if s.sram_width == 0 {
            out.push(Diagnostic::error("stage.sram_width", "must be at least 1 when sram_blocks > 0"));
        }
        if s.sram_depth == 0 {
            out.push(Diagnostic::error("stage.sram_depth", "must be at least 1 when sram_blocks > 0"));
        }
        if s.sram_crossbar_width == 0 {
            out.push(Diagnostic::warning(
                "stage.sram_crossbar_width",
                "zero-width SRAM crossbar makes exact-match hash units unusable",
            ));
        }
    }
    if s.hash_ways == 0 {
        out.push(Diagnostic::error("stage.hash_ways", "must be at least 1"));
    }
    if s.vliw_slots == 0 {
        out.push(Diagnostic::warning("stage.vliw_slots", "no VLIW slots; no table with actions can be placed"));
    }
    if let SramPartitions::Fixed { match_blocks, action_blocks, stateful_blocks } = s.sram_partitions {
        let sum = u64::from(match_blocks) + u64::from(action_blocks) + u64::from(stateful_blocks);
        if sum > u64::from(s.sram_blocks) {
            out.push(Diagnostic::error(
                "stage.sram_partitions",
                format!("partition overflow: {sum} blocks partitioned but only {} available", s.sram_blocks),
            ));
        }
    }
    out
}

/// The benchmark profile: the RMT chip of Bosshart et al. (SIGCOMM 2013)
/// with the parser of Gibb et al. (ANCS 2013).
///
/// Source values: 32 stages; per stage 16 TCAM blocks of 2K x 40b and 106
/// SRAM blocks of 1K x 112b; 640b TCAM and 640b SRAM match crossbars;
/// 4-way cuckoo hashing; a 4Kb PHV split into 64 8b, 96 16b and 64 32b
/// containers; a 256 x 40b parser TCAM with a 48-byte window, 4 headers
/// and 48 bytes of extraction per cycle.
pub fn default_spec() -> HardwareSpec {
    HardwareSpec {
        hsl_version: HSL_VERSION.to_string(),
        name: "rmt-benchmark".to_string(),
        num_stages: 32,
        packing_factor: 4,
        parser: ParserSpec {
            lookahead_bits: 48 * 8,
            max_headers_per_cycle: 4,
            tcam_entries: 256,
            tcam_entry_width: 40,
            lookup_fields_per_cycle: 2,
            lookup_field_width: 16,
            extraction_width_per_cycle: 48 * 8,
        },
        phv: PhvSpec {
            containers: vec![
                ContainerClass { width: 8, count: 64 },
                ContainerClass { width: 16, count: 96 },
                ContainerClass { width: 32, count: 64 },
            ],
        },
        stage: StageSpec {
            tcam_blocks: 16,
            tcam_width: 40,
            tcam_depth: 2048,
            sram_blocks: 106,
            sram_width: 112,
            sram_depth: 1024,
            sram_partitions: SramPartitions::Shared,
            tcam_crossbar_width: 640,
            sram_crossbar_width: 640,
            action_crossbar_width: 4096,
            vliw_slots: 32,
            hash_ways: 4,
            memory_ports: 106,
            memory_port_width: 112,
            extern_units: None,
        },
    }
}
