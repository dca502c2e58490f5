//! Mapping-phase backend for V1Model RMT switches.
//!
//! The crate takes the target-independent IR emitted by the reference P4
//! frontend together with a hardware specification document and decides
//! whether the program fits the switch. Three mappings are computed in order:
//!
//! 1. header fields onto PHV containers ([`header_mapper`]),
//! 2. the parse graph onto the parser TCAM state table ([`parser_mapper`]),
//! 3. the table dependency graph onto physical match-action stages
//!    ([`tdg_mapper`]).
//!
//! [`compile::compile`] drives all three and produces a [`report::MappingReport`].

pub mod compile;
pub mod diag;
pub mod header_mapper;
pub mod hsl;
pub mod ir;
pub mod parser_mapper;
pub mod report;
pub mod synth;
pub mod tdg_mapper;

pub use compile::{compile, compile_documents, CompileOptions, InputError};
pub use diag::{Diagnostic, Severity};
pub use hsl::HardwareSpec;
pub use ir::IrProgram;
pub use report::MappingReport;
