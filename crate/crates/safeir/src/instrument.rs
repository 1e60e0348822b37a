//! Instrumentation passes: full per-dereference checking, elision of checks
//! for statically safe pointers, and insertion of the boundary checks that
//! make the elision sound (cast, load, param, return, and optional heap
//! checks).

use std::collections::HashMap;

use serde::Serialize;

use crate::ir::*;
use crate::nofree::{self, insert_heap_checks, NofreeDb};
use crate::typeflow;

/// A dynamic check decided by a pass, before materialization into the IR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckSite {
    pub kind: CheckKind,
    pub function: String,
    /// Block index and instruction index of the anchor instruction.
    pub block: usize,
    pub instr: usize,
    /// Value the check inspects.
    pub value: String,
    /// Checked byte size; always positive (zero-sized pointees get a one-byte
    /// liveness probe).
    pub size: u64,
    pub origin: PassOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassOrigin {
    Baseline,
    Boundary,
    HeapTemporal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AddedCounts {
    pub cast: usize,
    pub load: usize,
    pub param: usize,
    pub ret: usize,
    pub heap: usize,
}

impl AddedCounts {
    pub fn total(&self) -> usize {
        self.cast + self.load + self.param + self.ret + self.heap
    }
}

/// Check accounting for one function.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FunctionStats {
    pub baseline: usize,
    pub elided: usize,
    pub added: AddedCounts,
    pub remaining: usize,
    pub remaining_pct: f64,
}

impl FunctionStats {
    fn finish(mut self) -> Self {
        self.remaining = self.baseline - self.elided + self.added.total();
        self.remaining_pct = 100.0 * self.remaining as f64 / self.baseline.max(1) as f64;
        self
    }
}

/// Check accounting for a whole module.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstrumentationStats {
    pub functions: HashMap<String, FunctionStats>,
    pub total: FunctionStats,
}

impl InstrumentationStats {
    fn from_functions(functions: HashMap<String, FunctionStats>) -> Self {
        let mut total = FunctionStats::default();
        for f in functions.values() {
            total.baseline += f.baseline;
            total.elided += f.elided;
            total.added.cast += f.added.cast;
            total.added.load += f.added.load;
            total.added.param += f.added.param;
            total.added.ret += f.added.ret;
            total.added.heap += f.added.heap;
        }
        InstrumentationStats {
            functions,
            total: total.finish(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InstrumentError {
    #[error("module is already instrumented ({0})")]
    AlreadyInstrumented(InstrMode),
    #[error(transparent)]
    Analysis(#[from] typeflow::AnalysisError),
}

/// Baseline DEREF sites of one function: one check in front of every load
/// and store. Foreign functions are instrumented identically; heap frees are
/// handled by the runtime interceptor, not a static check.
fn baseline_sites(module: &ProgramModule, func: &FunctionDef) -> Vec<CheckSite> {
    let shapes = collect_value_shapes(module, func);
    let mut sites = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            let (addr, size) = match &instr.op {
                Op::Load { addr, shape } => (addr, shape.byte_size()),
                Op::Store { addr, value } => {
                    (addr, shapes.get(value).map(|s| s.byte_size()).unwrap_or(1))
                }
                _ => continue,
            };
            sites.push(CheckSite {
                kind: CheckKind::Deref,
                function: func.name.clone(),
                block: bi,
                instr: ii,
                value: addr.clone(),
                size: size.max(1),
                origin: PassOrigin::Baseline,
            });
        }
    }
    sites
}

fn probe_size(n: u64) -> u64 {
    // Zero-sized pointees still need a liveness probe; a zero-byte check
    // would be vacuous and miss dangling casts.
    n.max(1)
}

/// One CAST site per `castsafe`, sized to the target pointee. The cast
/// produces a fresh value, so raw and safe versions stay distinct downstream.
pub fn place_cast_checks(func: &FunctionDef) -> Vec<CheckSite> {
    if func.attrs.foreign {
        return Vec::new();
    }
    let mut sites = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            if let Op::CastToSafe { value, shape } = &instr.op {
                let size = scalar_pointee(shape).map(TypeShape::byte_size).unwrap_or(0);
                sites.push(CheckSite {
                    kind: CheckKind::Cast,
                    function: func.name.clone(),
                    block: bi,
                    instr: ii,
                    value: value.clone(),
                    size: probe_size(size),
                    origin: PassOrigin::Boundary,
                });
            }
        }
    }
    sites
}

/// One LOAD site after every load whose result shape is a safe pointer:
/// memory contents may have been corrupted by unsafe or foreign code, so a
/// stored safe pointer must be revalidated when it enters the scope.
pub fn place_load_checks(func: &FunctionDef) -> Vec<CheckSite> {
    if func.attrs.foreign {
        return Vec::new();
    }
    let mut sites = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            if let Op::Load { shape, .. } = &instr.op {
                if decl_kind_of_shape(shape) != ValueKind::Pointer(PtrKind::Safe) {
                    continue;
                }
                let Some(result) = &instr.result else {
                    continue;
                };
                let size = scalar_pointee(shape).map(TypeShape::byte_size).unwrap_or(0);
                sites.push(CheckSite {
                    kind: CheckKind::Load,
                    function: func.name.clone(),
                    block: bi,
                    instr: ii,
                    value: result.clone(),
                    size: probe_size(size),
                    origin: PassOrigin::Boundary,
                });
            }
        }
    }
    sites
}

/// Prologue checks for externally visible functions: foreign callers link by
/// ABI only, so declared-safe parameters must be validated on entry. Applies
/// regardless of visible call sites, since foreign callers are invisible.
pub fn place_param_checks(func: &FunctionDef) -> Vec<CheckSite> {
    if func.attrs.foreign || !func.attrs.extern_visible || func.blocks.is_empty() {
        return Vec::new();
    }
    let mut sites = Vec::new();
    for p in &func.params {
        if p.kind != ValueKind::Pointer(PtrKind::Safe) {
            continue;
        }
        let size = scalar_pointee(&p.shape).map(TypeShape::byte_size).unwrap_or(0);
        sites.push(CheckSite {
            kind: CheckKind::Param,
            function: func.name.clone(),
            block: 0,
            instr: 0,
            value: p.name.clone(),
            size: probe_size(size),
            origin: PassOrigin::Boundary,
        });
    }
    sites
}

/// One RETURN site after each call whose declared return kind is safe,
/// catching a callee returning a pointer into its own (now dead) stack frame.
pub fn place_return_checks(module: &ProgramModule, func: &FunctionDef) -> Vec<CheckSite> {
    if func.attrs.foreign {
        return Vec::new();
    }
    let mut sites = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            let Op::Call {
                callee: Callee::Direct(name),
                ..
            } = &instr.op
            else {
                continue;
            };
            let Some(target) = module.function(name) else {
                continue;
            };
            let Some((shape, ValueKind::Pointer(PtrKind::Safe))) = &target.ret else {
                continue;
            };
            let Some(result) = &instr.result else {
                continue;
            };
            let size = scalar_pointee(shape).map(TypeShape::byte_size).unwrap_or(0);
            sites.push(CheckSite {
                kind: CheckKind::Ret,
                function: func.name.clone(),
                block: bi,
                instr: ii,
                value: result.clone(),
                size: probe_size(size),
                origin: PassOrigin::Boundary,
            });
        }
    }
    sites
}

/// Where a pseudo-instruction goes relative to its anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Before,
    After,
    EntryTop,
}

fn placement_for(kind: CheckKind) -> Placement {
    match kind {
        CheckKind::Deref | CheckKind::Cast | CheckKind::Heap => Placement::Before,
        CheckKind::Load | CheckKind::Ret => Placement::After,
        CheckKind::Param => Placement::EntryTop,
    }
}

fn site_instr(site: &CheckSite, anchor_loc: &SourceLoc) -> Instr {
    let op = match site.kind {
        CheckKind::Deref => Op::Check {
            addr: site.value.clone(),
            size: site.size,
        },
        kind => Op::Ensure {
            kind,
            addr: site.value.clone(),
            size: site.size,
        },
    };
    Instr {
        result: None,
        op,
        loc: anchor_loc.clone(),
    }
}

/// Rebuild a function with the given check sites materialized as
/// pseudo-instructions. Inserted checks inherit their anchor's source
/// location, so violation reports point at the boundary, not at the
/// synthesized check line.
fn materialize(func: &FunctionDef, sites: &[CheckSite]) -> FunctionDef {
    let mut by_anchor: HashMap<(usize, usize), Vec<&CheckSite>> = HashMap::new();
    let mut entry_top: Vec<&CheckSite> = Vec::new();
    for site in sites {
        match placement_for(site.kind) {
            Placement::EntryTop => entry_top.push(site),
            _ => by_anchor
                .entry((site.block, site.instr))
                .or_default()
                .push(site),
        }
    }
    let mut new_func = func.clone();
    for (bi, block) in func.blocks.iter().enumerate() {
        let mut instrs = Vec::with_capacity(block.instrs.len());
        if bi == 0 {
            let entry_loc = block
                .instrs
                .first()
                .map(|i| i.loc.clone())
                .unwrap_or_else(SourceLoc::synthetic);
            for site in &entry_top {
                instrs.push(site_instr(site, &entry_loc));
            }
        }
        for (ii, instr) in block.instrs.iter().enumerate() {
            let anchored = by_anchor.get(&(bi, ii));
            if let Some(anchored) = anchored {
                for site in anchored
                    .iter()
                    .filter(|s| placement_for(s.kind) == Placement::Before)
                {
                    instrs.push(site_instr(site, &instr.loc));
                }
            }
            instrs.push(instr.clone());
            if let Some(anchored) = anchored {
                for site in anchored
                    .iter()
                    .filter(|s| placement_for(s.kind) == Placement::After)
                {
                    instrs.push(site_instr(site, &instr.loc));
                }
            }
        }
        new_func.blocks[bi].instrs = instrs;
    }
    new_func
}

/// Full instrumentation: a DEREF check in front of every load and store,
/// foreign code included.
pub fn instrument_baseline(
    module: &ProgramModule,
) -> Result<(ProgramModule, InstrumentationStats), InstrumentError> {
    if let Some(mode) = module.instrumented {
        return Err(InstrumentError::AlreadyInstrumented(mode));
    }
    let mut out = module.clone();
    let mut stats = HashMap::new();
    for (fi, func) in module.functions.iter().enumerate() {
        let sites = baseline_sites(module, func);
        let fstats = FunctionStats {
            baseline: sites.len(),
            ..Default::default()
        };
        out.functions[fi] = materialize(func, &sites);
        stats.insert(func.name.clone(), fstats.finish());
    }
    out.instrumented = Some(InstrMode::Baseline);
    Ok((out, InstrumentationStats::from_functions(stats)))
}

/// Check-hoisting instrumentation: start from the baseline sites, elide
/// every DEREF whose address is statically safe, then add the boundary
/// checks (and heap checks when requested) that justify the elision.
pub fn instrument_safeffi(
    module: &ProgramModule,
    heap_checks: bool,
    db: &NofreeDb,
) -> Result<(ProgramModule, InstrumentationStats), InstrumentError> {
    if let Some(mode) = module.instrumented {
        return Err(InstrumentError::AlreadyInstrumented(mode));
    }
    // Heap checks need deallocation verdicts for this module's own functions.
    let full_db = if heap_checks {
        let graph = nofree::build_call_graph(module);
        Some(nofree::compute_nofree(&graph, db))
    } else {
        None
    };

    let mut out = module.clone();
    let mut stats = HashMap::new();
    for (fi, func) in module.functions.iter().enumerate() {
        let km = typeflow::infer_kinds_in(module, func)?;
        let all = baseline_sites(module, func);
        let baseline = all.len();
        let mut kept = Vec::new();
        let mut elided = 0usize;
        for site in all {
            // Foreign code keeps every check; elsewhere safe addresses are
            // covered by the boundary checks below.
            let safe =
                !func.attrs.foreign && typeflow::is_safe_pointer(&km, &func.name, &site.value)?;
            if safe {
                elided += 1;
            } else {
                kept.push(site);
            }
        }

        let cast = place_cast_checks(func);
        let load = place_load_checks(func);
        let param = place_param_checks(func);
        let ret = place_return_checks(module, func);
        let heap = match &full_db {
            Some(db) => insert_heap_checks(module, func, db, &km),
            None => Vec::new(),
        };

        let fstats = FunctionStats {
            baseline,
            elided,
            added: AddedCounts {
                cast: cast.len(),
                load: load.len(),
                param: param.len(),
                ret: ret.len(),
                heap: heap.len(),
            },
            ..Default::default()
        };

        let mut sites = kept;
        sites.extend(cast);
        sites.extend(load);
        sites.extend(param);
        sites.extend(ret);
        sites.extend(heap);
        out.functions[fi] = materialize(func, &sites);
        stats.insert(func.name.clone(), fstats.finish());
    }
    out.instrumented = Some(if heap_checks {
        InstrMode::SafeFfiHeap
    } else {
        InstrMode::SafeFfi
    });
    Ok((out, InstrumentationStats::from_functions(stats)))
}

/// Instrument under the given mode.
pub fn instrument(
    module: &ProgramModule,
    mode: InstrMode,
    db: &NofreeDb,
) -> Result<(ProgramModule, InstrumentationStats), InstrumentError> {
    match mode {
        InstrMode::Baseline => instrument_baseline(module),
        InstrMode::SafeFfi => instrument_safeffi(module, false, db),
        InstrMode::SafeFfiHeap => instrument_safeffi(module, true, db),
    }
}

/// Scan an instrumented module and verify the completeness partition: every
/// load/store either has a DEREF check immediately in front of it or its
/// address is statically safe. Returns offending instruction descriptions.
pub fn unchecked_raw_dereferences(module: &ProgramModule) -> Vec<String> {
    let mut offenders = Vec::new();
    for func in &module.functions {
        let Ok(km) = typeflow::infer_kinds_in(module, func) else {
            offenders.push(format!("@{}: kind analysis failed", func.name));
            continue;
        };
        for block in &func.blocks {
            for (ii, instr) in block.instrs.iter().enumerate() {
                let addr = match &instr.op {
                    Op::Load { addr, .. } | Op::Store { addr, .. } => addr,
                    _ => continue,
                };
                let safe = !func.attrs.foreign
                    && typeflow::is_safe_pointer(&km, &func.name, addr).unwrap_or(false);
                if safe {
                    continue;
                }
                let checked = ii > 0
                    && matches!(&block.instrs[ii - 1].op,
                        Op::Check { addr: a, .. } if a == addr);
                if !checked {
                    offenders.push(format!("@{} {}#{}", func.name, block.label, ii));
                }
            }
        }
    }
    offenders
}
