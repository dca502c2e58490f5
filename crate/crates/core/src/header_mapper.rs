//! Header field to PHV container assignment.
//!
//! Each field is covered by whole containers and no container holds two
//! fields. Fields are handled largest first with declaration order breaking
//! ties. For each field, every minimal cover the remaining inventory allows
//! is tried and scored by its own allocation plus the cheaper of two greedy
//! completions (largest first, smallest first) of the fields still waiting;
//! the best score wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsl::PhvSpec;
use crate::ir::HeaderField;

/// Containers of one class given to one field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerUse {
    pub width: u32,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldAssignment {
    /// `header.field`
    pub field: String,
    pub width: u32,
    pub containers: Vec<ContainerUse>,
    pub allocated_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeaderMapping {
    /// In field declaration order.
    pub assignments: Vec<FieldAssignment>,
    pub used_bits: u64,
    pub allocated_bits: u64,
    pub waste_fraction: f64,
    /// Containers consumed per class, in inventory order.
    pub class_usage: Vec<ContainerUse>,
}

impl HeaderMapping {
    fn from_covers(fields: &[(String, u32)], covers: Vec<Cover>, classes: &[u32]) -> Self {
        let mut usage = vec![0u32; classes.len()];
        let mut assignments = Vec::with_capacity(fields.len());
        for ((name, width), cover) in fields.iter().zip(covers) {
            for (u, c) in usage.iter_mut().zip(&cover.counts) {
                *u += c;
            }
            assignments.push(FieldAssignment {
                field: name.clone(),
                width: *width,
                containers: cover.uses(classes),
                allocated_bits: cover.bits,
            });
        }
        let used_bits = fields.iter().map(|(_, w)| u64::from(*w)).sum();
        let allocated_bits = assignments.iter().map(|a| u64::from(a.allocated_bits)).sum();
        HeaderMapping {
            assignments,
            used_bits,
            allocated_bits,
            waste_fraction: waste_fraction(used_bits, allocated_bits),
            class_usage: classes.iter().zip(usage).map(|(&width, count)| ContainerUse { width, count }).collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderMapError {
    #[error("PHV capacity exceeded: no containers left for field `{field}` ({width} bits)")]
    CapacityExceeded { field: String, width: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {fields} fields, {containers} containers")]
    TooLarge { fields: usize, containers: u64 },
}

fn waste_fraction(used: u64, allocated: u64) -> f64 {
    if allocated == 0 {
        0.0
    } else {
        (allocated - used) as f64 / allocated as f64
    }
}

/// Padding waste as a percentage of allocated container bits.
pub fn waste_percent(m: &HeaderMapping) -> f64 {
    waste_percent_of(m.used_bits, m.allocated_bits)
}

pub fn waste_percent_of(used_bits: u64, allocated_bits: u64) -> f64 {
    100.0 * waste_fraction(used_bits, allocated_bits)
}

/// Container counts per class, indexed like the inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Cover {
    counts: Vec<u32>,
    bits: u32,
    containers: u32,
}

impl Cover {
    fn uses(&self, classes: &[u32]) -> Vec<ContainerUse> {
        let mut v: Vec<ContainerUse> = classes
            .iter()
            .zip(&self.counts)
            .filter(|(_, c)| **c > 0)
            .map(|(&width, &count)| ContainerUse { width, count })
            .collect();
        v.sort_by_key(|c| std::cmp::Reverse(c.width));
        v
    }
}

/// Every minimal cover of `width` drawable from `avail`, cheapest first.
///
/// A cover is minimal when dropping any one container leaves the field
/// uncovered; non-minimal covers only add waste.
fn minimal_covers(width: u32, classes: &[u32], avail: &[u32]) -> Vec<Cover> {
    let mut out = Vec::new();
    let mut counts = vec![0u32; classes.len()];
    enumerate(width, classes, avail, 0, 0, &mut counts, &mut out);
    out.sort_by(|a, b| {
        a.bits.cmp(&b.bits).then(a.containers.cmp(&b.containers)).then_with(|| {
            // Prefer wider classes on full ties.
            let wa = a.uses(classes).into_iter().map(|u| (u.width, u.count));
            let wb = b.uses(classes).into_iter().map(|u| (u.width, u.count));
            wb.cmp(wa)
        })
    });
    out
}

fn enumerate(
    width: u32,
    classes: &[u32],
    avail: &[u32],
    idx: usize,
    sum: u32,
    counts: &mut Vec<u32>,
    out: &mut Vec<Cover>,
) {
    if sum >= width {
        let minimal = classes.iter().zip(counts.iter()).all(|(w, c)| *c == 0 || sum - w < width);
        if minimal {
            out.push(Cover { counts: counts.clone(), bits: sum, containers: counts.iter().sum() });
        }
        return;
    }
    if idx == classes.len() || classes[idx] == 0 {
        if idx < classes.len() {
            enumerate(width, classes, avail, idx + 1, sum, counts, out);
        }
        return;
    }
    let w = classes[idx];
    let need = (width - sum).div_ceil(w);
    for c in 0..=need.min(avail[idx]) {
        counts[idx] = c;
        enumerate(width, classes, avail, idx + 1, sum + c * w, counts, out);
    }
    counts[idx] = 0;
}

fn take(avail: &mut [u32], cover: &Cover) {
    for (a, c) in avail.iter_mut().zip(&cover.counts) {
        *a -= c;
    }
}

/// Total allocation of a greedy completion in the given order, or `None` if it runs dry.
fn greedy_completion(widths: &[u32], classes: &[u32], avail: &[u32]) -> Option<u64> {
    let mut avail = avail.to_vec();
    let mut total = 0u64;
    for &w in widths {
        let best = minimal_covers(w, classes, &avail).into_iter().next()?;
        take(&mut avail, &best);
        total += u64::from(best.bits);
    }
    Some(total)
}

fn prepare(fields: &[HeaderField]) -> Vec<(String, u32)> {
    fields.iter().map(|f| (f.qualified_name(), f.width)).collect()
}

/// Assigns every field to PHV containers.
pub fn map_headers(fields: &[HeaderField], phv: &PhvSpec) -> Result<HeaderMapping, HeaderMapError> {
    let named = prepare(fields);
    let classes: Vec<u32> = phv.containers.iter().map(|c| c.width).collect();
    let mut avail: Vec<u32> = phv.containers.iter().map(|c| c.count).collect();

    let mut order: Vec<usize> = (0..named.len()).collect();
    order.sort_by(|&a, &b| named[b].1.cmp(&named[a].1).then(a.cmp(&b)));

    let mut covers: Vec<Option<Cover>> = vec![None; named.len()];
    for (pos, &fi) in order.iter().enumerate() {
        let width = named[fi].1;
        let candidates = minimal_covers(width, &classes, &avail);
        if candidates.is_empty() {
            return Err(HeaderMapError::CapacityExceeded { field: named[fi].0.clone(), width });
        }
        let rest: Vec<u32> = order[pos + 1..].iter().map(|&i| named[i].1).collect();
        let mut chosen = 0;
        let mut best: Option<u64> = None;
        for (ci, cand) in candidates.iter().enumerate() {
            let mut left = avail.clone();
            take(&mut left, cand);
            let ascending: Vec<u32> = rest.iter().rev().copied().collect();
            let tail = [greedy_completion(&rest, &classes, &left), greedy_completion(&ascending, &classes, &left)]
                .into_iter()
                .flatten()
                .min();
            if let Some(tail) = tail {
                let score = u64::from(cand.bits) + tail;
                if best.is_none_or(|b| score < b) {
                    best = Some(score);
                    chosen = ci;
                }
            }
        }
        let cover = candidates.into_iter().nth(chosen).expect("candidate index in range");
        take(&mut avail, &cover);
        covers[fi] = Some(cover);
    }
    let covers = covers.into_iter().map(|c| c.expect("every field assigned")).collect();
    Ok(HeaderMapping::from_covers(&named, covers, &classes))
}

pub const ORACLE_MAX_FIELDS: usize = 6;
pub const ORACLE_MAX_CONTAINERS: u64 = 8;

/// Exhaustive minimum-allocation assignment for small instances.
///
/// Returns `Ok(None)` when no assignment covers every field.
pub fn brute_force_header_map(fields: &[HeaderField], phv: &PhvSpec) -> Result<Option<HeaderMapping>, OracleError> {
    let containers = phv.total_containers();
    if fields.len() > ORACLE_MAX_FIELDS || containers > ORACLE_MAX_CONTAINERS {
        return Err(OracleError::TooLarge { fields: fields.len(), containers });
    }
    let named = prepare(fields);
    let widths: Vec<u32> = named.iter().map(|(_, w)| *w).collect();
    let classes: Vec<u32> = phv.containers.iter().map(|c| c.width).collect();
    let mut avail: Vec<u32> = phv.containers.iter().map(|c| c.count).collect();
    let mut current = Vec::with_capacity(widths.len());
    let mut best: Option<(u64, Vec<Cover>)> = None;
    search(&widths, &classes, &mut avail, 0, &mut current, &mut best);
    Ok(best.map(|(_, covers)| HeaderMapping::from_covers(&named, covers, &classes)))
}

fn search(
    widths: &[u32],
    classes: &[u32],
    avail: &mut Vec<u32>,
    total: u64,
    current: &mut Vec<Cover>,
    best: &mut Option<(u64, Vec<Cover>)>,
) {
    let i = current.len();
    if i == widths.len() {
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            *best = Some((total, current.clone()));
        }
        return;
    }
    for cover in minimal_covers(widths[i], classes, avail) {
        take(avail, &cover);
        let bits = u64::from(cover.bits);
        current.push(cover);
        search(widths, classes, avail, total + bits, current, best);
        let cover = current.pop().expect("pushed above");
        for (a, c) in avail.iter_mut().zip(&cover.counts) {
            *a += c;
        }
    }
}
