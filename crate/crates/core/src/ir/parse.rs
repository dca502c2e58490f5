use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use serde_json::{Map, Value};

use super::tdg::topological_tdg_order;
use super::*;
use crate::diag::byte_offset;

/// Top-level keys that are understood but carry nothing the mappers use.
const IGNORED_KEYS: &[&str] = &[
    "__meta__",
    "errors",
    "enums",
    "field_lists",
    "learn_lists",
    "checksums",
    "force_arith",
    "extern_instances",
    "deparsers",
    "field_aliases",
    "header_union_types",
];

const CONSUMED_KEYS: &[&str] = &[
    "program",
    "header_types",
    "headers",
    "header_stacks",
    "parsers",
    "actions",
    "pipelines",
    "register_arrays",
    "counter_arrays",
    "meter_arrays",
    "calculations",
    "header_unions",
    "header_union_stacks",
    "parse_vsets",
];

/// Primitives that only read their operands.
const READ_ONLY_PRIMITIVES: &[&str] = &[
    "no_op",
    "exit",
    "log_msg",
    "assume",
    "assert",
    "_jump",
    "_jump_if_zero",
    "clone_ingress_pkt_to_egress",
    "clone_egress_pkt_to_egress",
    "recirculate",
    "resubmit",
    "truncate",
    "generate_digest",
];

type Result<T> = std::result::Result<T, IrError>;

/// Resolves a `next_tables` or `base_default_next` reference.
type NextResolver<'a> = dyn Fn(Option<&Value>, &str) -> Result<Option<NodeRef>> + 'a;

fn malformed(path: impl Into<String>, message: impl Into<String>) -> IrError {
    IrError::Malformed { path: path.into(), message: message.into() }
}

fn unsupported(feature: &str, element: impl Into<String>) -> IrError {
    IrError::Unsupported { feature: feature.to_string(), element: element.into() }
}

fn as_obj<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| malformed(path, "expected an object"))
}

fn req<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    o.get(key).ok_or_else(|| malformed(path, format!("missing key `{key}`")))
}

fn req_str<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str> {
    req(o, key, path)?.as_str().ok_or_else(|| malformed(format!("{path}.{key}"), "expected a string"))
}

fn req_u64(o: &Map<String, Value>, key: &str, path: &str) -> Result<u64> {
    req(o, key, path)?.as_u64().ok_or_else(|| malformed(format!("{path}.{key}"), "expected a non-negative integer"))
}

fn opt_str<'a>(o: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    o.get(key).and_then(Value::as_str)
}

fn opt_array<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a [Value]> {
    match o.get(key) {
        None | Some(Value::Null) => Ok(&[]),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(malformed(format!("{path}.{key}"), "expected an array")),
    }
}

fn req_array<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a [Value]> {
    req(o, key, path)?
        .as_array()
        .map(Vec::as_slice)
        .ok_or_else(|| malformed(format!("{path}.{key}"), "expected an array"))
}

fn parse_hex(s: &str, path: &str) -> Result<BigUint> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    if digits.is_empty() {
        return Ok(BigUint::default());
    }
    BigUint::parse_bytes(digits.as_bytes(), 16).ok_or_else(|| malformed(path, format!("invalid hex value `{s}`")))
}

struct HeaderType {
    fields: Vec<(String, u32)>,
    varbit: bool,
}

#[derive(Default)]
struct Builder {
    fields: Vec<HeaderField>,
    headers: Vec<HeaderInstance>,
    field_index: BTreeMap<(String, String), FieldId>,
    header_index: BTreeMap<String, HeaderId>,
    header_by_json_id: BTreeMap<u64, HeaderId>,
    stacks: BTreeMap<String, Vec<HeaderId>>,
    externs: Vec<ExternDecl>,
    extern_index: BTreeMap<(ExternKind, String), ExternId>,
    calculations: BTreeMap<String, BTreeSet<FieldId>>,
    actions: Vec<ActionDef>,
    action_index: BTreeMap<String, ActionId>,
    action_by_json_id: BTreeMap<u64, ActionId>,
    diagnostics: Vec<Diagnostic>,
}

/// Reads a frontend IR document.
///
/// Constructs outside the supported subset are rejected with
/// [`IrError::Unsupported`]; constructs that are read but not modeled are
/// recorded in [`IrProgram::diagnostics`].
pub fn parse_ir(ir_document: &str) -> Result<IrProgram> {
    let root: Value = serde_json::from_str(ir_document).map_err(|e| IrError::Syntax {
        offset: byte_offset(ir_document, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let top = as_obj(&root, "<root>")?;
    let mut b = Builder::default();

    for key in top.keys() {
        if IGNORED_KEYS.contains(&key.as_str()) {
            continue;
        }
        if !CONSUMED_KEYS.contains(&key.as_str()) {
            b.diagnostics.push(Diagnostic::warning(key.clone(), "unknown top-level key ignored"));
        }
    }
    for (key, feature) in [
        ("header_unions", "header unions"),
        ("header_union_stacks", "header unions"),
        ("parse_vsets", "parser value sets"),
    ] {
        if let Some(first) = opt_array(top, key, "<root>")?.first() {
            let name = first.get("name").and_then(Value::as_str).unwrap_or(key);
            return Err(unsupported(feature, name));
        }
    }

    let name = opt_str(top, "program")
        .map(|p| {
            let base = p.rsplit(['/', '\\']).next().unwrap_or(p);
            base.strip_suffix(".p4").unwrap_or(base).to_string()
        })
        .unwrap_or_else(|| "program".to_string());

    b.read_headers(top)?;
    b.read_externs(top)?;
    b.read_calculations(top)?;
    b.read_actions(top)?;
    let parsers = b.read_parsers(top)?;
    let pipelines = b.read_pipelines(top)?;

    Ok(IrProgram {
        name,
        fields: b.fields,
        headers: b.headers,
        actions: b.actions,
        externs: b.externs,
        parsers,
        pipelines,
        diagnostics: b.diagnostics,
    })
}

impl Builder {
    fn read_headers(&mut self, top: &Map<String, Value>) -> Result<()> {
        let mut types = BTreeMap::new();
        for (i, ht) in req_array(top, "header_types", "<root>")?.iter().enumerate() {
            let path = format!("header_types[{i}]");
            let o = as_obj(ht, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let mut fields = Vec::new();
            let mut varbit = false;
            for (j, f) in req_array(o, "fields", &path)?.iter().enumerate() {
                let fpath = format!("{path}.fields[{j}]");
                let arr = f.as_array().ok_or_else(|| malformed(&fpath, "expected [name, width, ...]"))?;
                let fname =
                    arr.first().and_then(Value::as_str).ok_or_else(|| malformed(&fpath, "missing field name"))?;
                match arr.get(1) {
                    Some(Value::Number(n)) => {
                        let w = n.as_u64().filter(|w| *w >= 1 && *w <= u64::from(u32::MAX));
                        let w = w.ok_or_else(|| malformed(&fpath, "field width must be a positive integer"))?;
                        fields.push((fname.to_string(), w as u32));
                    }
                    Some(Value::String(s)) if s == "*" => varbit = true,
                    _ => return Err(malformed(&fpath, "missing or invalid field width")),
                }
            }
            if o.get("max_length").is_some_and(|v| !v.is_null()) {
                varbit = true;
            }
            types.insert(name, HeaderType { fields, varbit });
        }

        for (i, h) in req_array(top, "headers", "<root>")?.iter().enumerate() {
            let path = format!("headers[{i}]");
            let o = as_obj(h, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let type_name = req_str(o, "header_type", &path)?.to_string();
            let is_metadata = o.get("metadata").and_then(Value::as_bool).unwrap_or(false);
            let ht = types.get(&type_name).ok_or_else(|| {
                malformed(format!("{path}.header_type"), format!("unknown header type `{type_name}`"))
            })?;
            if ht.varbit {
                return Err(unsupported("variable-length header", &name));
            }
            if self.header_index.contains_key(&name) {
                return Err(malformed(&path, format!("duplicate header instance `{name}`")));
            }
            let hid = HeaderId(self.headers.len());
            let mut field_ids = Vec::with_capacity(ht.fields.len());
            for (fname, width) in &ht.fields {
                let key = (name.clone(), fname.clone());
                if self.field_index.contains_key(&key) {
                    return Err(malformed(&path, format!("duplicate field `{name}.{fname}`")));
                }
                let fid = FieldId(self.fields.len());
                self.fields.push(HeaderField {
                    name: fname.clone(),
                    header_instance: name.clone(),
                    width: *width,
                    is_metadata,
                    is_validity: false,
                });
                self.field_index.insert(key, fid);
                field_ids.push(fid);
            }
            let validity = (!is_metadata).then(|| {
                let fid = FieldId(self.fields.len());
                self.fields.push(HeaderField {
                    name: VALIDITY_FIELD.to_string(),
                    header_instance: name.clone(),
                    width: 1,
                    is_metadata: false,
                    is_validity: true,
                });
                self.field_index.insert((name.clone(), VALIDITY_FIELD.to_string()), fid);
                fid
            });
            if let Some(id) = o.get("id").and_then(Value::as_u64) {
                self.header_by_json_id.insert(id, hid);
            }
            self.header_index.insert(name.clone(), hid);
            self.headers.push(HeaderInstance {
                name,
                header_type: type_name,
                is_metadata,
                fields: field_ids,
                validity,
            });
        }

        for (i, s) in opt_array(top, "header_stacks", "<root>")?.iter().enumerate() {
            let path = format!("header_stacks[{i}]");
            let o = as_obj(s, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let mut members = Vec::new();
            for id in opt_array(o, "header_ids", &path)? {
                let id = id.as_u64().ok_or_else(|| malformed(format!("{path}.header_ids"), "expected integers"))?;
                let hid = self
                    .header_by_json_id
                    .get(&id)
                    .ok_or_else(|| malformed(format!("{path}.header_ids"), format!("unknown header id {id}")))?;
                members.push(*hid);
            }
            if members.is_empty() {
                let mut idx = 0;
                while let Some(hid) = self.header_index.get(&format!("{name}[{idx}]")) {
                    members.push(*hid);
                    idx += 1;
                }
            }
            self.stacks.insert(name, members);
        }
        Ok(())
    }

    fn read_externs(&mut self, top: &Map<String, Value>) -> Result<()> {
        for (key, kind) in [
            ("register_arrays", ExternKind::Register),
            ("counter_arrays", ExternKind::Counter),
            ("meter_arrays", ExternKind::Meter),
        ] {
            for (i, e) in opt_array(top, key, "<root>")?.iter().enumerate() {
                let path = format!("{key}[{i}]");
                let o = as_obj(e, &path)?;
                let name = req_str(o, "name", &path)?.to_string();
                if o.get("is_direct").and_then(Value::as_bool).unwrap_or(false) {
                    return Err(unsupported("direct stateful memory", &name));
                }
                let size = req_u64(o, "size", &path)?;
                let width = match kind {
                    ExternKind::Register => u32::try_from(req_u64(o, "bitwidth", &path)?)
                        .map_err(|_| malformed(format!("{path}.bitwidth"), "bitwidth too large"))?,
                    ExternKind::Counter => COUNTER_CELL_BITS,
                    ExternKind::Meter => METER_CELL_BITS,
                };
                let id = ExternId(self.externs.len());
                self.extern_index.insert((kind, name.clone()), id);
                self.externs.push(ExternDecl { name, kind, size, width });
            }
        }
        Ok(())
    }

    fn read_calculations(&mut self, top: &Map<String, Value>) -> Result<()> {
        for (i, c) in opt_array(top, "calculations", "<root>")?.iter().enumerate() {
            let path = format!("calculations[{i}]");
            let o = as_obj(c, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let mut reads = BTreeSet::new();
            let mut sink = Vec::new();
            for (j, input) in opt_array(o, "input", &path)?.iter().enumerate() {
                self.collect_reads(input, &format!("{path}.input[{j}]"), &mut reads, &mut sink)?;
            }
            self.calculations.insert(name, reads);
        }
        Ok(())
    }

    fn resolve_field(&self, value: &Value, path: &str) -> Result<FieldId> {
        let arr = value.as_array().ok_or_else(|| malformed(path, "expected [header, field]"))?;
        let (Some(h), Some(f)) = (arr.first().and_then(Value::as_str), arr.get(1).and_then(Value::as_str)) else {
            return Err(malformed(path, "expected [header, field]"));
        };
        if let Some(id) = self.field_index.get(&(h.to_string(), f.to_string())) {
            return Ok(*id);
        }
        // Header stack fields are addressed through element 0.
        if let Some(first) = self.stacks.get(h).and_then(|m| m.first()) {
            let elem = &self.headers[first.0].name;
            if let Some(id) = self.field_index.get(&(elem.clone(), f.to_string())) {
                return Ok(*id);
            }
        }
        Err(malformed(path, format!("unresolved field `{h}.{f}`")))
    }

    fn resolve_header(&self, name: &str, path: &str) -> Result<HeaderId> {
        if let Some(id) = self.header_index.get(name) {
            return Ok(*id);
        }
        self.stacks
            .get(name)
            .and_then(|m| m.first().copied())
            .ok_or_else(|| malformed(path, format!("unresolved header `{name}`")))
    }

    fn validity_of(&self, hid: HeaderId, path: &str) -> Result<FieldId> {
        let h = &self.headers[hid.0];
        h.validity.ok_or_else(|| malformed(path, format!("metadata header `{}` has no validity bit", h.name)))
    }

    fn resolve_extern(&self, kind: ExternKind, name: &str, path: &str) -> Result<ExternId> {
        self.extern_index
            .get(&(kind, name.to_string()))
            .copied()
            .ok_or_else(|| malformed(path, format!("unresolved {} `{name}`", kind.as_str())))
    }

    /// Collects every field an expression reads. Extern references met on
    /// the way are appended to `externs`.
    fn collect_reads(
        &self,
        v: &Value,
        path: &str,
        reads: &mut BTreeSet<FieldId>,
        externs: &mut Vec<ExternId>,
    ) -> Result<()> {
        let Some(o) = v.as_object() else {
            return Ok(());
        };
        let Some(ty) = o.get("type").and_then(Value::as_str) else {
            // Bare operator node inside an "expression" wrapper.
            for key in ["left", "right", "cond"] {
                if let Some(sub) = o.get(key) {
                    self.collect_reads(sub, &format!("{path}.{key}"), reads, externs)?;
                }
            }
            return Ok(());
        };
        let value = o.get("value").unwrap_or(&Value::Null);
        match ty {
            "field" => {
                reads.insert(self.resolve_field(value, path)?);
            }
            "stack_field" => {
                reads.insert(self.resolve_field(value, path)?);
            }
            "header" => {
                let name = value.as_str().ok_or_else(|| malformed(path, "expected header name"))?;
                let hid = self.resolve_header(name, path)?;
                if let Some(valid) = self.headers[hid.0].validity {
                    reads.insert(valid);
                }
            }
            "header_stack" => {
                let name = value.as_str().ok_or_else(|| malformed(path, "expected stack name"))?;
                for hid in self.stacks.get(name).into_iter().flatten() {
                    reads.extend(self.headers[hid.0].fields.iter().copied());
                }
            }
            "expression" => self.collect_reads(value, &format!("{path}.value"), reads, externs)?,
            "register_array" | "counter_array" | "meter_array" => {
                let kind = match ty {
                    "register_array" => ExternKind::Register,
                    "counter_array" => ExternKind::Counter,
                    _ => ExternKind::Meter,
                };
                let name = value.as_str().ok_or_else(|| malformed(path, "expected extern name"))?;
                externs.push(self.resolve_extern(kind, name, path)?);
            }
            "calculation" => {
                let name = value.as_str().ok_or_else(|| malformed(path, "expected calculation name"))?;
                match self.calculations.get(name) {
                    Some(fields) => reads.extend(fields.iter().copied()),
                    None => return Err(malformed(path, format!("unresolved calculation `{name}`"))),
                }
            }
            "hexstr" | "bool" | "runtime_data" | "local" | "string" | "regular" | "lookahead" | "parameter_vector"
            | "extern" => {}
            other => return Err(malformed(path, format!("unknown operand type `{other}`"))),
        }
        Ok(())
    }

    fn read_actions(&mut self, top: &Map<String, Value>) -> Result<()> {
        let egress_spec = self.field_index.get(&("standard_metadata".into(), "egress_spec".into())).copied();
        for (i, a) in req_array(top, "actions", "<root>")?.iter().enumerate() {
            let path = format!("actions[{i}]");
            let o = as_obj(a, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            if has_atomic_annotation(o) {
                return Err(unsupported("atomic transaction", &name));
            }
            let mut arg_width_total = 0u32;
            for (j, rd) in opt_array(o, "runtime_data", &path)?.iter().enumerate() {
                let rpath = format!("{path}.runtime_data[{j}]");
                let w = req_u64(as_obj(rd, &rpath)?, "bitwidth", &rpath)?;
                arg_width_total = arg_width_total.saturating_add(u32::try_from(w).unwrap_or(u32::MAX));
            }

            let mut reads = BTreeSet::new();
            let mut writes = BTreeSet::new();
            let mut extern_ops = Vec::new();
            for (j, prim) in opt_array(o, "primitives", &path)?.iter().enumerate() {
                let ppath = format!("{path}.primitives[{j}]");
                let po = as_obj(prim, &ppath)?;
                let op = req_str(po, "op", &ppath)?;
                let params = opt_array(po, "parameters", &ppath)?;
                self.read_primitive(&name, op, params, &ppath, egress_spec, &mut reads, &mut writes, &mut extern_ops)?;
            }
            let id = ActionId(self.actions.len());
            if let Some(jid) = o.get("id").and_then(Value::as_u64) {
                self.action_by_json_id.insert(jid, id);
            }
            self.action_index.insert(name.clone(), id);
            self.actions.push(ActionDef { name, reads, writes, extern_ops, arg_width_total });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn read_primitive(
        &mut self,
        action: &str,
        op: &str,
        params: &[Value],
        path: &str,
        egress_spec: Option<FieldId>,
        reads: &mut BTreeSet<FieldId>,
        writes: &mut BTreeSet<FieldId>,
        extern_ops: &mut Vec<ExternOp>,
    ) -> Result<()> {
        let param_path = |k: usize| format!("{path}.parameters[{k}]");
        let read_rest = |b: &Self, from: usize, reads: &mut BTreeSet<FieldId>| -> Result<Vec<ExternId>> {
            let mut ex = Vec::new();
            for (k, p) in params.iter().enumerate().skip(from) {
                b.collect_reads(p, &param_path(k), reads, &mut ex)?;
            }
            Ok(ex)
        };
        let dest_field = |b: &Self, k: usize| -> Result<FieldId> {
            let p = params.get(k).ok_or_else(|| malformed(path, format!("`{op}` expects parameter {k}")))?;
            match p.get("type").and_then(Value::as_str) {
                Some("field") | Some("stack_field") => b.resolve_field(&p["value"], &param_path(k)),
                _ => Err(malformed(param_path(k), format!("`{op}` destination must be a field"))),
            }
        };
        let named = |k: usize| -> Result<&str> {
            params
                .get(k)
                .and_then(|p| p.get("value"))
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(param_path(k), "expected a named operand"))
        };
        let mut push_op = |id: ExternId, kind: ExternOpKind| extern_ops.push(ExternOp { extern_id: id, op: kind });

        match op {
            "assign" | "modify_field" => {
                let is_header = params.first().and_then(|p| p.get("type")).and_then(Value::as_str) == Some("header");
                if is_header {
                    return self.read_primitive(
                        action,
                        "assign_header",
                        params,
                        path,
                        egress_spec,
                        reads,
                        writes,
                        extern_ops,
                    );
                }
                writes.insert(dest_field(self, 0)?);
                read_rest(self, 1, reads)?;
            }
            "assign_header" => {
                let dst = self.resolve_header(named(0)?, &param_path(0))?;
                let src = self.resolve_header(named(1)?, &param_path(1))?;
                writes.extend(self.headers[dst.0].fields.iter().copied().chain(self.headers[dst.0].validity));
                reads.extend(self.headers[src.0].fields.iter().copied().chain(self.headers[src.0].validity));
            }
            "add_header" | "remove_header" | "setValid" | "setInvalid" => {
                let hid = self.resolve_header(named(0)?, &param_path(0))?;
                writes.insert(self.validity_of(hid, &param_path(0))?);
            }
            "mark_to_drop" | "drop" => {
                if let Some(f) = egress_spec {
                    writes.insert(f);
                }
            }
            "register_read" => {
                writes.insert(dest_field(self, 0)?);
                let reg = self.resolve_extern(ExternKind::Register, named(1)?, &param_path(1))?;
                push_op(reg, ExternOpKind::Read);
                read_rest(self, 2, reads)?;
            }
            "register_write" => {
                let reg = self.resolve_extern(ExternKind::Register, named(0)?, &param_path(0))?;
                push_op(reg, ExternOpKind::Write);
                read_rest(self, 1, reads)?;
            }
            "count" => {
                let c = self.resolve_extern(ExternKind::Counter, named(0)?, &param_path(0))?;
                push_op(c, ExternOpKind::Count);
                read_rest(self, 1, reads)?;
            }
            "execute_meter" => {
                let m = self.resolve_extern(ExternKind::Meter, named(0)?, &param_path(0))?;
                push_op(m, ExternOpKind::Execute);
                let mut ex = Vec::new();
                if let Some(p) = params.get(1) {
                    self.collect_reads(p, &param_path(1), reads, &mut ex)?;
                }
                writes.insert(dest_field(self, 2)?);
            }
            "modify_field_with_hash_based_offset" | "modify_field_rng_uniform" => {
                writes.insert(dest_field(self, 0)?);
                read_rest(self, 1, reads)?;
            }
            "push" | "pop" => {
                let name = named(0)?;
                let members =
                    self.stacks.get(name).ok_or_else(|| malformed(param_path(0), format!("unknown stack `{name}`")))?;
                for hid in members {
                    let h = &self.headers[hid.0];
                    let all: Vec<FieldId> = h.fields.iter().copied().chain(h.validity).collect();
                    reads.extend(all.iter().copied());
                    writes.extend(all);
                }
            }
            "assign_VL" => return Err(unsupported("variable-length header", action)),
            "assign_union" | "assign_header_union" => return Err(unsupported("header unions", action)),
            "atomic" | "_atomic" => return Err(unsupported("atomic transaction", action)),
            op if READ_ONLY_PRIMITIVES.contains(&op) => {
                read_rest(self, 0, reads)?;
            }
            other => {
                self.diagnostics.push(Diagnostic::warning(
                    path,
                    format!("unknown primitive `{other}` in action `{action}`; operands treated as read and written"),
                ));
                let mut touched = BTreeSet::new();
                let ex = read_rest(self, 0, &mut touched)?;
                reads.extend(touched.iter().copied());
                writes.extend(touched);
                for id in ex {
                    push_op(id, ExternOpKind::Write);
                }
            }
        }
        Ok(())
    }

    fn read_parsers(&mut self, top: &Map<String, Value>) -> Result<Vec<ParserDef>> {
        let list = req_array(top, "parsers", "<root>")?;
        if list.len() > 1 {
            self.diagnostics.push(Diagnostic::warning("parsers", "more than one parser; only the first is mapped"));
        }
        let mut out = Vec::new();
        for (i, p) in list.iter().enumerate() {
            let path = format!("parsers[{i}]");
            let o = as_obj(p, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let init_state = req_str(o, "init_state", &path)?.to_string();
            let mut states = Vec::new();
            for (j, s) in req_array(o, "parse_states", &path)?.iter().enumerate() {
                states.push(self.read_state(s, &format!("{path}.parse_states[{j}]"))?);
            }
            let names: BTreeSet<&str> = states.iter().map(|s| s.name.as_str()).collect();
            if !names.contains(init_state.as_str()) {
                return Err(malformed(format!("{path}.init_state"), format!("unknown state `{init_state}`")));
            }
            for s in &states {
                for t in &s.transitions {
                    if let Some(next) = &t.next_state {
                        if !names.contains(next.as_str()) {
                            return Err(malformed(
                                format!("{path}.{}", s.name),
                                format!("transition to unknown state `{next}`"),
                            ));
                        }
                    }
                }
            }
            out.push(ParserDef { name, init_state, states });
        }
        Ok(out)
    }

    fn read_state(&mut self, s: &Value, path: &str) -> Result<ParseState> {
        let o = as_obj(s, path)?;
        let name = req_str(o, "name", path)?.to_string();
        let mut extracts = Vec::new();
        for (k, op) in opt_array(o, "parser_ops", path)?.iter().enumerate() {
            let opath = format!("{path}.parser_ops[{k}]");
            let oo = as_obj(op, &opath)?;
            match req_str(oo, "op", &opath)? {
                "extract" => {
                    let params = req_array(oo, "parameters", &opath)?;
                    let p = params.first().ok_or_else(|| malformed(&opath, "extract needs a parameter"))?;
                    let ty = p.get("type").and_then(Value::as_str).unwrap_or("regular");
                    let hname = p
                        .get("value")
                        .and_then(Value::as_str)
                        .ok_or_else(|| malformed(&opath, "expected header name"))?;
                    match ty {
                        "regular" => extracts.push(self.resolve_header(hname, &opath)?),
                        "stack" => {
                            self.diagnostics.push(Diagnostic::note(
                                opath.clone(),
                                format!("stack extraction of `{hname}` sized by its element type"),
                            ));
                            extracts.push(self.resolve_header(hname, &opath)?);
                        }
                        "union" | "union_stack" => return Err(unsupported("header unions", &name)),
                        other => return Err(malformed(&opath, format!("unknown extract target `{other}`"))),
                    }
                }
                "extract_VL" => return Err(unsupported("variable-length header", &name)),
                "set" | "verify" | "primitive" | "advance" | "shift" => {}
                other => {
                    self.diagnostics.push(Diagnostic::warning(opath, format!("unknown parser op `{other}` ignored")));
                }
            }
        }

        let mut key = Vec::new();
        for (k, kv) in opt_array(o, "transition_key", path)?.iter().enumerate() {
            let kpath = format!("{path}.transition_key[{k}]");
            let ko = as_obj(kv, &kpath)?;
            match req_str(ko, "type", &kpath)? {
                "field" | "stack_field" => {
                    let fid = self.resolve_field(req(ko, "value", &kpath)?, &kpath)?;
                    let f = &self.fields[fid.0];
                    key.push(SelectKey { label: f.qualified_name(), field: Some(fid), width: f.width });
                }
                "lookahead" => {
                    let arr = req(ko, "value", &kpath)?
                        .as_array()
                        .ok_or_else(|| malformed(&kpath, "expected [offset, width]"))?;
                    let off = arr.first().and_then(Value::as_u64).unwrap_or(0);
                    let width = arr.get(1).and_then(Value::as_u64).filter(|w| *w >= 1);
                    let width = width.ok_or_else(|| malformed(&kpath, "lookahead width must be positive"))? as u32;
                    key.push(SelectKey { label: format!("lookahead[{off}:{width}]"), field: None, width });
                }
                other => return Err(malformed(&kpath, format!("unknown transition key type `{other}`"))),
            }
        }

        let mut transitions = Vec::new();
        for (k, t) in opt_array(o, "transitions", path)?.iter().enumerate() {
            let tpath = format!("{path}.transitions[{k}]");
            let to = as_obj(t, &tpath)?;
            let next_state = match to.get("next_state") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(malformed(format!("{tpath}.next_state"), "expected a state name or null")),
            };
            let ty = opt_str(to, "type").unwrap_or("default");
            let matcher = match ty {
                "default" => TransitionMatch::Default,
                "hexstr" => {
                    let value = parse_hex(req_str(to, "value", &tpath)?, &tpath)?;
                    let mask = match to.get("mask") {
                        None | Some(Value::Null) => None,
                        Some(Value::String(m)) => Some(parse_hex(m, &tpath)?),
                        Some(_) => return Err(malformed(format!("{tpath}.mask"), "expected a hex string or null")),
                    };
                    TransitionMatch::Value { value, mask }
                }
                "parse_vset" => return Err(unsupported("parser value sets", &name)),
                other => return Err(malformed(&tpath, format!("unknown transition type `{other}`"))),
            };
            transitions.push(Transition { matcher, next_state });
        }
        if transitions.is_empty() {
            // A state without transitions falls through to accept.
            transitions.push(Transition { matcher: TransitionMatch::Default, next_state: None });
        }
        Ok(ParseState { name, extracts, key, transitions })
    }

    fn read_pipelines(&mut self, top: &Map<String, Value>) -> Result<Vec<Pipeline>> {
        let mut out = Vec::new();
        for (i, p) in req_array(top, "pipelines", "<root>")?.iter().enumerate() {
            let path = format!("pipelines[{i}]");
            let o = as_obj(p, &path)?;
            let name = req_str(o, "name", &path)?.to_string();
            let table_values = opt_array(o, "tables", &path)?;
            let cond_values = opt_array(o, "conditionals", &path)?;

            let mut nodes: BTreeMap<String, NodeRef> = BTreeMap::new();
            for (j, t) in table_values.iter().enumerate() {
                let tpath = format!("{path}.tables[{j}]");
                let tname = req_str(as_obj(t, &tpath)?, "name", &tpath)?;
                if nodes.insert(tname.to_string(), NodeRef::Table(j)).is_some() {
                    return Err(malformed(tpath, format!("duplicate control node `{tname}`")));
                }
            }
            for (j, c) in cond_values.iter().enumerate() {
                let cpath = format!("{path}.conditionals[{j}]");
                let cname = req_str(as_obj(c, &cpath)?, "name", &cpath)?;
                if nodes.insert(cname.to_string(), NodeRef::Conditional(j)).is_some() {
                    return Err(malformed(cpath, format!("duplicate control node `{cname}`")));
                }
            }
            let resolve = |v: Option<&Value>, at: &str| -> Result<Option<NodeRef>> {
                match v {
                    None | Some(Value::Null) => Ok(None),
                    Some(Value::String(s)) => nodes
                        .get(s)
                        .copied()
                        .map(Some)
                        .ok_or_else(|| malformed(at, format!("unknown control node `{s}`"))),
                    Some(_) => Err(malformed(at, "expected a node name or null")),
                }
            };

            let mut tables = Vec::new();
            for (j, t) in table_values.iter().enumerate() {
                let tpath = format!("{path}.tables[{j}]");
                tables.push(self.read_table(t, &tpath, &resolve)?);
                tables[j].tdg_order = j;
            }
            let mut conditionals = Vec::new();
            for (j, c) in cond_values.iter().enumerate() {
                let cpath = format!("{path}.conditionals[{j}]");
                let co = as_obj(c, &cpath)?;
                let cname = req_str(co, "name", &cpath)?.to_string();
                let mut reads = BTreeSet::new();
                let mut ex = Vec::new();
                if let Some(e) = co.get("expression") {
                    self.collect_reads(e, &format!("{cpath}.expression"), &mut reads, &mut ex)?;
                }
                if !ex.is_empty() {
                    return Err(unsupported("direct stateful memory", &cname));
                }
                conditionals.push(Conditional {
                    name: cname,
                    reads,
                    true_next: resolve(co.get("true_next"), &format!("{cpath}.true_next"))?,
                    false_next: resolve(co.get("false_next"), &format!("{cpath}.false_next"))?,
                });
            }
            let init = resolve(o.get("init_table"), &format!("{path}.init_table"))?;
            let mut pipeline = Pipeline { name, init, tables, conditionals };
            // Cyclic control flow keeps declaration order here and is
            // rejected when the dependency graph is built.
            if let Ok(order) = topological_tdg_order(&pipeline) {
                for (t, ord) in pipeline.tables.iter_mut().zip(order) {
                    t.tdg_order = ord;
                }
            }
            out.push(pipeline);
        }
        Ok(out)
    }

    fn read_table(&mut self, t: &Value, path: &str, resolve: &NextResolver<'_>) -> Result<LogicalTable> {
        let o = as_obj(t, path)?;
        let name = req_str(o, "name", path)?.to_string();
        if o.get("with_counters").and_then(Value::as_bool).unwrap_or(false)
            || o.get("direct_meters").is_some_and(|v| !v.is_null())
        {
            return Err(unsupported("direct stateful memory", &name));
        }
        if let Some(ty) = opt_str(o, "type") {
            if ty != "simple" {
                self.diagnostics.push(Diagnostic::note(path, format!("table type `{ty}` mapped as a simple table")));
            }
        }

        let mut match_fields = Vec::new();
        for (k, kv) in opt_array(o, "key", path)?.iter().enumerate() {
            let kpath = format!("{path}.key[{k}]");
            let ko = as_obj(kv, &kpath)?;
            let kind = match req_str(ko, "match_type", &kpath)? {
                "exact" | "valid" => MatchKind::Exact,
                "ternary" | "optional" => MatchKind::Ternary,
                "lpm" => MatchKind::Lpm,
                "range" => MatchKind::Range,
                other => return Err(malformed(&kpath, format!("unknown match type `{other}`"))),
            };
            let target = req(ko, "target", &kpath)?;
            let field = match target {
                Value::String(h) => {
                    let hid = self.resolve_header(h, &kpath)?;
                    self.validity_of(hid, &kpath)?
                }
                other => self.resolve_field(other, &kpath)?,
            };
            match_fields.push(MatchField { field, kind });
        }

        let max_entries = req_u64(o, "max_size", path)?;
        if max_entries == 0 {
            return Err(malformed(format!("{path}.max_size"), "a table holds at least one entry"));
        }

        let mut actions = Vec::new();
        if let Some(ids) = o.get("action_ids").and_then(Value::as_array) {
            for id in ids {
                let id = id.as_u64().ok_or_else(|| malformed(format!("{path}.action_ids"), "expected integers"))?;
                let aid = self
                    .action_by_json_id
                    .get(&id)
                    .ok_or_else(|| malformed(format!("{path}.action_ids"), format!("unknown action id {id}")))?;
                actions.push(*aid);
            }
        } else {
            for a in opt_array(o, "actions", path)? {
                let an = a.as_str().ok_or_else(|| malformed(format!("{path}.actions"), "expected action names"))?;
                let aid = self
                    .action_index
                    .get(an)
                    .ok_or_else(|| malformed(format!("{path}.actions"), format!("unknown action `{an}`")))?;
                actions.push(*aid);
            }
        }

        let mut next_table_map = BTreeMap::new();
        if let Some(nt) = o.get("next_tables") {
            let nto = as_obj(nt, &format!("{path}.next_tables"))?;
            for (k, v) in nto {
                next_table_map.insert(k.clone(), resolve(Some(v), &format!("{path}.next_tables.{k}"))?);
            }
        }
        let base_default_next = resolve(o.get("base_default_next"), &format!("{path}.base_default_next"))?;

        let extern_refs =
            actions.iter().flat_map(|a| self.actions[a.0].extern_ops.iter().map(|op| op.extern_id)).collect();

        Ok(LogicalTable {
            name,
            match_fields,
            max_entries,
            actions,
            next_table_map,
            base_default_next,
            extern_refs,
            tdg_order: 0,
        })
    }
}

fn has_atomic_annotation(o: &Map<String, Value>) -> bool {
    match o.get("annotations") {
        Some(Value::Array(a)) => a.iter().any(|v| v.as_str().is_some_and(|s| s.trim_start_matches('@') == "atomic")),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn minimal() -> Value {
        json!({
            "program": "minimal.p4",
            "header_types": [{"name": "h_t", "id": 0, "fields": [["f", 8, false]]}],
            "headers": [{"name": "h", "id": 0, "header_type": "h_t", "metadata": false}],
            "parsers": [{
                "name": "parser", "id": 0, "init_state": "start",
                "parse_states": [{
                    "name": "start", "id": 0,
                    "parser_ops": [{"op": "extract", "parameters": [{"type": "regular", "value": "h"}]}],
                    "transition_key": [],
                    "transitions": [{"type": "default", "value": null, "mask": null, "next_state": null}]
                }]
            }],
            "actions": [{"name": "set_f", "id": 0, "runtime_data": [{"name": "v", "bitwidth": 8}],
                "primitives": [{"op": "assign", "parameters": [
                    {"type": "field", "value": ["h", "f"]}, {"type": "runtime_data", "value": 0}]}]}],
            "pipelines": [{
                "name": "ingress", "id": 0, "init_table": "t",
                "tables": [{"name": "t", "id": 0, "key": [{"match_type": "exact", "target": ["h", "f"], "mask": null}],
                    "match_type": "exact", "type": "simple", "max_size": 16, "with_counters": false,
                    "direct_meters": null, "action_ids": [0], "actions": ["set_f"],
                    "base_default_next": null, "next_tables": {"set_f": null}}],
                "conditionals": []
            }]
        })
    }

    #[test]
    fn minimal_program_has_one_field_and_one_table() {
        let p = parse_ir(&minimal().to_string()).unwrap();
        assert_eq!(p.name, "minimal");
        assert_eq!(p.phv_fields().count(), 1);
        assert_eq!(p.pipelines[0].tables.len(), 1);
        let t = &p.pipelines[0].tables[0];
        assert_eq!(t.max_entries, 16);
        let a = p.action(t.actions[0]);
        assert_eq!(a.arg_width_total, 8);
        assert_eq!(a.writes.len(), 1);
        assert!(p.diagnostics.is_empty(), "{:?}", p.diagnostics);
    }

    #[test]
    fn varbit_field_is_unsupported() {
        let mut doc = minimal();
        doc["header_types"][0]["fields"] = json!([["f", 8, false], ["opts", "*"]]);
        doc["header_types"][0]["max_length"] = json!(40);
        let err = parse_ir(&doc.to_string()).unwrap_err();
        assert_eq!(err.to_string(), "unsupported feature: variable-length header (in `h`)");
        assert!(err.is_rejection());
    }

    #[test]
    fn truncated_document_reports_byte_offset() {
        let text = serde_json::to_string_pretty(&minimal()).unwrap();
        let cut = &text[..text.len() - 40];
        match parse_ir(cut) {
            Err(IrError::Syntax { offset, .. }) => assert!(offset > 0 && offset <= cut.len()),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_primitives_are_diagnosed() {
        let mut doc = minimal();
        doc["mystery"] = json!(1);
        doc["actions"][0]["primitives"]
            .as_array_mut()
            .unwrap()
            .push(json!({"op": "frobnicate", "parameters": [{"type": "field", "value": ["h", "f"]}]}));
        let p = parse_ir(&doc.to_string()).unwrap();
        assert_eq!(p.diagnostics.len(), 2);
        assert!(p.diagnostics.iter().any(|d| d.path == "mystery"));
        assert!(p.diagnostics.iter().any(|d| d.message.contains("frobnicate")));
    }

    #[test]
    fn atomic_action_is_unsupported() {
        let mut doc = minimal();
        doc["actions"][0]["annotations"] = json!(["@atomic"]);
        let err = parse_ir(&doc.to_string()).unwrap_err();
        assert!(matches!(err, IrError::Unsupported { ref feature, .. } if feature == "atomic transaction"));
    }

    #[test]
    fn direct_counters_are_unsupported() {
        let mut doc = minimal();
        doc["pipelines"][0]["tables"][0]["with_counters"] = json!(true);
        let err = parse_ir(&doc.to_string()).unwrap_err();
        assert!(matches!(err, IrError::Unsupported { ref feature, .. } if feature == "direct stateful memory"));
    }

    #[test]
    fn unresolved_field_is_malformed() {
        let mut doc = minimal();
        doc["pipelines"][0]["tables"][0]["key"][0]["target"] = json!(["h", "nope"]);
        let err = parse_ir(&doc.to_string()).unwrap_err();
        assert!(matches!(err, IrError::Malformed { .. }));
        assert!(!err.is_rejection());
    }

    #[test]
    fn register_ops_are_recorded_as_extern_refs() {
        let mut doc = minimal();
        doc["register_arrays"] = json!([{"name": "r", "id": 0, "size": 64, "bitwidth": 32}]);
        doc["actions"][0]["primitives"].as_array_mut().unwrap().push(json!({
            "op": "register_write",
            "parameters": [{"type": "register_array", "value": "r"}, {"type": "hexstr", "value": "0x0"},
                           {"type": "field", "value": ["h", "f"]}]
        }));
        let p = parse_ir(&doc.to_string()).unwrap();
        let t = &p.pipelines[0].tables[0];
        assert_eq!(t.extern_refs.len(), 1);
        assert_eq!(p.externs[0].total_bits(), 2048);
    }

    #[test]
    fn validity_match_resolves_to_validity_bit() {
        let mut doc = minimal();
        doc["pipelines"][0]["tables"][0]["key"] = json!([{"match_type": "exact", "target": ["h", "$valid$"]}]);
        let p = parse_ir(&doc.to_string()).unwrap();
        let f = p.field(p.pipelines[0].tables[0].match_fields[0].field);
        assert!(f.is_validity);
        assert_eq!(f.width, 1);
    }
}
