//! Deterministic tag-based shadow-memory sanitizer and small-step IR
//! interpreter. Allocations carry 8-bit tags mirrored into a granule-indexed
//! shadow map; pointers carry their tag in the top byte. A check passes iff
//! every granule it touches holds the pointer's tag and the owning
//! allocation is alive. Frees are intercepted regardless of instrumentation
//! mode.
//!
//! The interpreter is strictly single-threaded and fully deterministic:
//! sequential tag assignment, bump allocation, and a sparse byte-map memory
//! image with synthetic addresses.

use std::collections::HashMap;

use serde::Serialize;

use crate::ir::*;

/// Low 56 bits hold the address; the top byte is the tag.
pub const ADDR_MASK: u64 = 0x00FF_FFFF_FFFF_FFFF;

pub fn tag_of(value: u64) -> u8 {
    (value >> 56) as u8
}

pub fn addr_of(value: u64) -> u64 {
    value & ADDR_MASK
}

pub fn with_tag(addr: u64, tag: u8) -> u64 {
    (addr & ADDR_MASK) | ((tag as u64) << 56)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    /// Shadow tagging granularity in bytes.
    pub granule: u64,
    pub heap_base: u64,
    pub stack_base: u64,
    pub global_base: u64,
    pub max_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            granule: 16,
            heap_base: 0x1000_0000,
            stack_base: 0x2000_0000,
            global_base: 0x3000_0000,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocKind {
    Heap,
    Stack,
    Global,
}

#[derive(Debug, Clone)]
pub struct Allocation {
    pub base: u64,
    pub size: u64,
    pub tag: u8,
    pub alive: bool,
    pub kind: AllocKind,
}

#[derive(Debug, Clone, Copy)]
struct GranuleInfo {
    tag: u8,
    alloc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    TagMismatch,
    NullDeref,
    DoubleFree,
    InvalidFree,
}

/// What raised a violation: an inserted check, or the free interceptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckRef {
    Site(CheckKind),
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub check: CheckRef,
    pub function: String,
    pub loc: SourceLoc,
    pub fault_addr: u64,
    pub expected_tag: u8,
    pub found_tag: u8,
}

/// Predicate failure before it is attributed to a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredFault {
    pub kind: ViolationKind,
    pub fault_addr: u64,
    pub expected_tag: u8,
    pub found_tag: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CheckCounters {
    pub deref: u64,
    pub cast: u64,
    pub load: u64,
    pub param: u64,
    pub ret: u64,
    pub heap: u64,
}

impl CheckCounters {
    fn bump(&mut self, kind: CheckKind) {
        match kind {
            CheckKind::Deref => self.deref += 1,
            CheckKind::Cast => self.cast += 1,
            CheckKind::Load => self.load += 1,
            CheckKind::Param => self.param += 1,
            CheckKind::Ret => self.ret += 1,
            CheckKind::Heap => self.heap += 1,
        }
    }

    /// Boundary (`ensure`) executions: everything but deref checks.
    pub fn ensures(&self) -> u64 {
        self.cast + self.load + self.param + self.ret + self.heap
    }

    pub fn total(&self) -> u64 {
        self.deref + self.ensures()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub instructions_retired: u64,
    pub checks: CheckCounters,
    pub ensures_executed: u64,
    pub frees_intercepted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunVerdict {
    CleanExit(i64),
    Violation(Violation),
    Timeout,
}

impl RunVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, RunVerdict::Violation(_))
    }

    pub fn is_clean(&self) -> bool {
        matches!(self, RunVerdict::CleanExit(_))
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            RunVerdict::Violation(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: RunVerdict,
    pub counters: Counters,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("entry function @{0} not found")]
    UnknownEntry(String),
    #[error("entry function @{0} must take no parameters")]
    EntryHasParams(String),
    #[error("call to unresolved @{0}: externals have no executable body")]
    UnresolvedCall(String),
    #[error("indirect calls are not executable in this runtime")]
    IndirectCall,
    #[error("in @{function}: value %{value} is unbound")]
    UnboundValue { function: String, value: String },
    #[error("malformed module at runtime: {0}")]
    Malformed(String),
    #[error("step limit does not permit execution start")]
    NoBudget,
}

/// Tagged shadow memory, the allocation table, and the byte-level image.
#[derive(Debug, Clone)]
pub struct ShadowState {
    granule: u64,
    shadow: HashMap<u64, GranuleInfo>,
    allocations: Vec<Allocation>,
    alloc_by_base: HashMap<u64, usize>,
    memory: HashMap<u64, u8>,
    next_tag: u8,
    heap_cursor: u64,
    stack_cursor: u64,
    global_cursor: u64,
    live_bytes: u64,
    allocated_bytes: u64,
    released_bytes: u64,
}

impl ShadowState {
    pub fn new(config: &RunConfig) -> Self {
        ShadowState {
            granule: config.granule.max(1),
            shadow: HashMap::new(),
            allocations: Vec::new(),
            alloc_by_base: HashMap::new(),
            memory: HashMap::new(),
            next_tag: 1,
            heap_cursor: config.heap_base,
            stack_cursor: config.stack_base,
            global_cursor: config.global_base,
            live_bytes: 0,
            allocated_bytes: 0,
            released_bytes: 0,
        }
    }

    pub fn granule(&self) -> u64 {
        self.granule
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn allocated_bytes(&self) -> u64 {
        self.allocated_bytes
    }

    pub fn released_bytes(&self) -> u64 {
        self.released_bytes
    }

    pub fn allocation(&self, id: usize) -> &Allocation {
        &self.allocations[id]
    }

    /// Deterministic tag sequence 1, 2, ..., 255, 1, ... (0 is reserved for
    /// unallocated memory).
    fn fresh_tag(&mut self) -> u8 {
        let tag = self.next_tag;
        self.next_tag = if self.next_tag == 255 {
            1
        } else {
            self.next_tag + 1
        };
        tag
    }

    fn granules_of(&self, base: u64, size: u64) -> std::ops::RangeInclusive<u64> {
        let first = base / self.granule;
        let last = (base + size.max(1) - 1) / self.granule;
        first..=last
    }

    /// Allocate `size` bytes (rounded up to whole granules, at least one)
    /// and return the allocation id and tagged base pointer.
    pub fn allocate(&mut self, size: u64, kind: AllocKind) -> (usize, u64) {
        let granules = size.max(1).div_ceil(self.granule);
        let footprint = granules * self.granule;
        let cursor = match kind {
            AllocKind::Heap => &mut self.heap_cursor,
            AllocKind::Stack => &mut self.stack_cursor,
            AllocKind::Global => &mut self.global_cursor,
        };
        let base = *cursor;
        *cursor += footprint;
        let tag = self.fresh_tag();
        let id = self.allocations.len();
        self.allocations.push(Allocation {
            base,
            size,
            tag,
            alive: true,
            kind,
        });
        self.alloc_by_base.insert(base, id);
        for g in self.granules_of(base, footprint) {
            self.shadow.insert(g, GranuleInfo { tag, alloc: id });
        }
        self.live_bytes += size;
        self.allocated_bytes += size;
        (id, with_tag(base, tag))
    }

    /// Kill an allocation and retag its granules, so stale pointers fault on
    /// their next checked use.
    fn kill(&mut self, id: usize) {
        let (base, size, granule_footprint) = {
            let a = &self.allocations[id];
            if !a.alive {
                return;
            }
            let granules = a.size.max(1).div_ceil(self.granule);
            (a.base, a.size, granules * self.granule)
        };
        self.allocations[id].alive = false;
        let quarantine = self.fresh_tag();
        for g in self.granules_of(base, granule_footprint) {
            self.shadow.insert(
                g,
                GranuleInfo {
                    tag: quarantine,
                    alloc: id,
                },
            );
        }
        self.live_bytes -= size;
        self.released_bytes += size;
        debug_assert_eq!(self.live_bytes, self.allocated_bytes - self.released_bytes);
    }

    /// Release a stack slot at function return.
    pub fn release_stack(&mut self, id: usize) {
        self.kill(id);
    }

    pub fn read_bytes(&self, addr: u64, size: u64) -> u64 {
        let mut out = 0u64;
        for i in 0..size.min(8) {
            let byte = *self.memory.get(&(addr + i)).unwrap_or(&0);
            out |= (byte as u64) << (8 * i);
        }
        out
    }

    pub fn write_bytes(&mut self, addr: u64, value: u64, size: u64) {
        for i in 0..size.min(8) {
            self.memory.insert(addr + i, (value >> (8 * i)) as u8);
        }
    }
}

/// The shared check predicate behind both `check` and `ensure` sites: the
/// address must be non-null and every granule of `[addr, addr+size)` must
/// carry exactly the pointer's tag with its allocation still alive.
pub fn check_predicate(state: &ShadowState, value: u64, size: u64) -> Result<(), PredFault> {
    let addr = addr_of(value);
    let ptag = tag_of(value);
    if addr == 0 {
        return Err(PredFault {
            kind: ViolationKind::NullDeref,
            fault_addr: 0,
            expected_tag: ptag,
            found_tag: 0,
        });
    }
    for g in state.granules_of(addr, size) {
        match state.shadow.get(&g) {
            None => {
                return Err(PredFault {
                    kind: ViolationKind::TagMismatch,
                    fault_addr: g * state.granule,
                    expected_tag: ptag,
                    found_tag: 0,
                })
            }
            Some(info) => {
                if info.tag != ptag || !state.allocations[info.alloc].alive {
                    return Err(PredFault {
                        kind: ViolationKind::TagMismatch,
                        fault_addr: g * state.granule,
                        expected_tag: ptag,
                        found_tag: info.tag,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Free interceptor, called for every heap free regardless of mode. Freeing
/// null is a no-op; freeing anything that is not the tagged base of a live
/// heap allocation faults; a dead allocation faults as a double free.
/// Successful frees retag the granules to catch later use.
pub fn intercept_free(state: &mut ShadowState, value: u64) -> Result<(), PredFault> {
    let addr = addr_of(value);
    let ptag = tag_of(value);
    if addr == 0 {
        return Ok(());
    }
    let Some(&id) = state.alloc_by_base.get(&addr) else {
        let found = state
            .shadow
            .get(&(addr / state.granule))
            .map(|g| g.tag)
            .unwrap_or(0);
        return Err(PredFault {
            kind: ViolationKind::InvalidFree,
            fault_addr: addr,
            expected_tag: ptag,
            found_tag: found,
        });
    };
    let (alive, kind, tag, size) = {
        let a = &state.allocations[id];
        (a.alive, a.kind, a.tag, a.size)
    };
    if !alive {
        return Err(PredFault {
            kind: ViolationKind::DoubleFree,
            fault_addr: addr,
            expected_tag: ptag,
            found_tag: tag,
        });
    }
    if kind != AllocKind::Heap || tag != ptag {
        return Err(PredFault {
            kind: ViolationKind::InvalidFree,
            fault_addr: addr,
            expected_tag: ptag,
            found_tag: tag,
        });
    }
    let _ = size;
    state.kill(id);
    Ok(())
}

struct Frame<'m> {
    func: &'m FunctionDef,
    block: usize,
    idx: usize,
    values: HashMap<String, u64>,
    allocas: Vec<usize>,
}

struct Interp<'m> {
    module: &'m ProgramModule,
    state: ShadowState,
    counters: Counters,
    frames: Vec<Frame<'m>>,
    globals: HashMap<String, u64>,
    max_steps: u64,
    /// Per-function value byte sizes, for store widths.
    size_cache: HashMap<String, HashMap<String, u64>>,
}

/// Run an instrumented (or plain) module from `entry` to completion.
pub fn execute(
    module: &ProgramModule,
    entry: &str,
    config: &RunConfig,
) -> Result<Outcome, EngineError> {
    let mut state = ShadowState::new(config);
    let mut globals = HashMap::new();
    for g in &module.globals {
        let (_, ptr) = state.allocate(g.shape.byte_size(), AllocKind::Global);
        if let Some(init) = g.init {
            let size = g.shape.byte_size().clamp(1, 8);
            state.write_bytes(addr_of(ptr), init as u64, size);
        }
        globals.insert(g.name.clone(), ptr);
    }
    let entry_fn = module
        .function(entry)
        .ok_or_else(|| EngineError::UnknownEntry(entry.to_string()))?;
    if !entry_fn.params.is_empty() {
        return Err(EngineError::EntryHasParams(entry.to_string()));
    }
    if entry_fn.blocks.is_empty() {
        return Err(EngineError::Malformed(format!(
            "entry @{entry} has no body"
        )));
    }
    let mut interp = Interp {
        module,
        state,
        counters: Counters::default(),
        frames: vec![Frame {
            func: entry_fn,
            block: 0,
            idx: 0,
            values: HashMap::new(),
            allocas: Vec::new(),
        }],
        globals,
        max_steps: config.max_steps,
        size_cache: HashMap::new(),
    };
    interp.run()
}

impl<'m> Interp<'m> {
    fn run(&mut self) -> Result<Outcome, EngineError> {
        loop {
            if self.counters.instructions_retired >= self.max_steps {
                return Ok(self.finish(RunVerdict::Timeout));
            }
            let (func, bi, ii) = {
                let frame = self
                    .frames
                    .last()
                    .expect("frame stack never empties mid-run");
                (frame.func, frame.block, frame.idx)
            };
            let block = &func.blocks[bi];
            let Some(instr) = block.instrs.get(ii) else {
                return Err(EngineError::Malformed(format!(
                    "fell off block {} in @{}",
                    block.label, func.name
                )));
            };
            self.counters.instructions_retired += 1;
            match self.step(instr)? {
                StepResult::Continue => {}
                StepResult::Done(verdict) => return Ok(self.finish(verdict)),
            }
        }
    }

    fn finish(&mut self, verdict: RunVerdict) -> Outcome {
        self.counters.ensures_executed = self.counters.checks.ensures();
        Outcome {
            verdict,
            counters: self.counters,
        }
    }

    fn value(&self, name: &str) -> Result<u64, EngineError> {
        let frame = self.frames.last().expect("active frame");
        frame
            .values
            .get(name)
            .copied()
            .ok_or_else(|| EngineError::UnboundValue {
                function: frame.func.name.clone(),
                value: name.to_string(),
            })
    }

    fn bind(&mut self, instr: &Instr, value: u64) {
        if let Some(name) = &instr.result {
            self.frames
                .last_mut()
                .expect("active frame")
                .values
                .insert(name.clone(), value);
        }
    }

    fn advance(&mut self) {
        self.frames.last_mut().expect("active frame").idx += 1;
    }

    /// Jump to `target`, executing its leading phis as one parallel
    /// assignment based on the block we came from.
    fn enter_block(&mut self, target: &str) -> Result<(), EngineError> {
        let frame = self.frames.last().expect("active frame");
        let from_label = frame.func.blocks[frame.block].label.clone();
        let func = frame.func;
        let target_idx = func
            .block_index(target)
            .ok_or_else(|| EngineError::Malformed(format!("jump to unknown block {target}")))?;
        let block = &func.blocks[target_idx];
        let mut assignments: Vec<(String, u64)> = Vec::new();
        let mut phi_count = 0usize;
        for instr in &block.instrs {
            let Op::Phi { incoming } = &instr.op else {
                break;
            };
            phi_count += 1;
            let Some((_, value_name)) = incoming.iter().find(|(b, _)| *b == from_label) else {
                return Err(EngineError::Malformed(format!(
                    "phi in {} lacks incoming for {}",
                    block.label, from_label
                )));
            };
            let value = self.value(value_name)?;
            assignments.push((
                instr
                    .result
                    .clone()
                    .ok_or_else(|| EngineError::Malformed("phi without result".to_string()))?,
                value,
            ));
        }
        self.counters.instructions_retired += phi_count as u64;
        let frame = self.frames.last_mut().expect("active frame");
        for (name, value) in assignments {
            frame.values.insert(name, value);
        }
        frame.block = target_idx;
        frame.idx = phi_count;
        Ok(())
    }

    fn violation(&self, fault: PredFault, check: CheckRef, loc: &SourceLoc) -> RunVerdict {
        let function = self
            .frames
            .last()
            .map(|f| f.func.name.clone())
            .unwrap_or_default();
        RunVerdict::Violation(Violation {
            kind: fault.kind,
            check,
            function,
            loc: loc.clone(),
            fault_addr: fault.fault_addr,
            expected_tag: fault.expected_tag,
            found_tag: fault.found_tag,
        })
    }

    fn step(&mut self, instr: &'m Instr) -> Result<StepResult, EngineError> {
        match &instr.op {
            Op::Alloca { shape } => {
                let (id, ptr) = self.state.allocate(shape.byte_size(), AllocKind::Stack);
                self.frames
                    .last_mut()
                    .expect("active frame")
                    .allocas
                    .push(id);
                self.bind(instr, ptr);
                self.advance();
            }
            Op::HeapAlloc { size } => {
                let size = match size {
                    SizeArg::Const(n) => *n,
                    SizeArg::Value(v) => self.value(v)?,
                };
                let (_, ptr) = self.state.allocate(size, AllocKind::Heap);
                self.bind(instr, ptr);
                self.advance();
            }
            Op::HeapFree { addr } => {
                let value = self.value(addr)?;
                self.counters.frees_intercepted += 1;
                if let Err(fault) = intercept_free(&mut self.state, value) {
                    return Ok(StepResult::Done(self.violation(
                        fault,
                        CheckRef::Intercept,
                        &instr.loc,
                    )));
                }
                self.advance();
            }
            Op::Load { addr, shape } => {
                let ptr = self.value(addr)?;
                let value = self.state.read_bytes(addr_of(ptr), shape.byte_size());
                self.bind(instr, value);
                self.advance();
            }
            Op::Store { addr, value } => {
                let ptr = self.value(addr)?;
                let data = self.value(value)?;
                let size = self.store_size(value);
                self.state.write_bytes(addr_of(ptr), data, size);
                self.advance();
            }
            Op::Gep { base, offset, .. } => {
                let base_val = self.value(base)?;
                let off = match offset {
                    GepOffset::Static(n) => *n as u64,
                    GepOffset::Dynamic(v) => self.value(v)?,
                };
                let addr = addr_of(base_val).wrapping_add(off) & ADDR_MASK;
                self.bind(instr, with_tag(addr, tag_of(base_val)));
                self.advance();
            }
            Op::Bitcast { value, .. }
            | Op::PtrToInt { value }
            | Op::IntToPtr { value, .. }
            | Op::CastToSafe { value, .. } => {
                let v = self.value(value)?;
                self.bind(instr, v);
                self.advance();
            }
            Op::Phi { .. } => {
                return Err(EngineError::Malformed(
                    "phi encountered outside block entry".to_string(),
                ));
            }
            Op::Call { callee, args } => {
                let callee_name = match callee {
                    Callee::Direct(name) => name,
                    Callee::Indirect(_) => return Err(EngineError::IndirectCall),
                };
                let mut arg_values = Vec::with_capacity(args.len());
                for a in args {
                    arg_values.push(self.value(a)?);
                }
                let Some(target) = self.module.function(callee_name) else {
                    return Err(EngineError::UnresolvedCall(callee_name.clone()));
                };
                if target.attrs.known_dealloc {
                    let ptr = *arg_values.first().ok_or_else(|| {
                        EngineError::Malformed(format!(
                            "@{callee_name} called without its pointer argument"
                        ))
                    })?;
                    self.counters.frees_intercepted += 1;
                    if let Err(fault) = intercept_free(&mut self.state, ptr) {
                        return Ok(StepResult::Done(self.violation(
                            fault,
                            CheckRef::Intercept,
                            &instr.loc,
                        )));
                    }
                    self.advance();
                    return Ok(StepResult::Continue);
                }
                if target.blocks.is_empty() {
                    return Err(EngineError::Malformed(format!(
                        "@{callee_name} has no body"
                    )));
                }
                if target.params.len() != arg_values.len() {
                    return Err(EngineError::Malformed(format!(
                        "@{callee_name} called with {} args",
                        arg_values.len()
                    )));
                }
                let mut values = HashMap::new();
                for (param, value) in target.params.iter().zip(arg_values) {
                    values.insert(param.name.clone(), value);
                }
                self.frames.push(Frame {
                    func: target,
                    block: 0,
                    idx: 0,
                    values,
                    allocas: Vec::new(),
                });
            }
            Op::BinOp { op, lhs, rhs } => {
                let a = self.value(lhs)?;
                let b = self.value(rhs)?;
                let r = match op {
                    BinOpKind::Add => a.wrapping_add(b),
                    BinOpKind::Sub => a.wrapping_sub(b),
                    BinOpKind::Mul => a.wrapping_mul(b),
                };
                self.bind(instr, r);
                self.advance();
            }
            Op::Cmp { pred, lhs, rhs } => {
                let a = self.value(lhs)? as i64;
                let b = self.value(rhs)? as i64;
                let r = match pred {
                    CmpPred::Eq => a == b,
                    CmpPred::Ne => a != b,
                    CmpPred::Lt => a < b,
                    CmpPred::Le => a <= b,
                    CmpPred::Gt => a > b,
                    CmpPred::Ge => a >= b,
                };
                self.bind(instr, r as u64);
                self.advance();
            }
            Op::ConstInt { value } => {
                self.bind(instr, *value as u64);
                self.advance();
            }
            Op::GlobalAddr { name } => {
                let ptr = *self
                    .globals
                    .get(name)
                    .ok_or_else(|| EngineError::Malformed(format!("unknown global @{name}")))?;
                self.bind(instr, ptr);
                self.advance();
            }
            Op::Br { target } => {
                self.enter_block(target)?;
            }
            Op::CondBr {
                cond,
                then_to,
                else_to,
            } => {
                let c = self.value(cond)?;
                let target = if c & 1 == 1 { then_to } else { else_to };
                self.enter_block(target)?;
            }
            Op::Ret { value } => {
                let ret_value = match value {
                    Some(v) => Some(self.value(v)?),
                    None => None,
                };
                let frame = self.frames.pop().expect("active frame");
                for id in frame.allocas {
                    self.state.release_stack(id);
                }
                match self.frames.last_mut() {
                    None => {
                        let code = ret_value.map(|v| v as i64).unwrap_or(0);
                        return Ok(StepResult::Done(RunVerdict::CleanExit(code)));
                    }
                    Some(caller) => {
                        let func = caller.func;
                        let call_instr = &func.blocks[caller.block].instrs[caller.idx];
                        if let Some(dest) = &call_instr.result {
                            let v = ret_value.ok_or_else(|| {
                                EngineError::Malformed(format!(
                                    "@{} returned void into %{dest}",
                                    frame.func.name
                                ))
                            })?;
                            caller.values.insert(dest.clone(), v);
                        }
                        caller.idx += 1;
                    }
                }
            }
            Op::Check { addr, size } => {
                let ptr = self.value(addr)?;
                self.counters.checks.bump(CheckKind::Deref);
                if let Err(fault) = check_predicate(&self.state, ptr, *size) {
                    return Ok(StepResult::Done(self.violation(
                        fault,
                        CheckRef::Site(CheckKind::Deref),
                        &instr.loc,
                    )));
                }
                self.advance();
            }
            Op::Ensure { kind, addr, size } => {
                let ptr = self.value(addr)?;
                self.counters.checks.bump(*kind);
                if let Err(fault) = check_predicate(&self.state, ptr, *size) {
                    return Ok(StepResult::Done(self.violation(
                        fault,
                        CheckRef::Site(*kind),
                        &instr.loc,
                    )));
                }
                self.advance();
            }
        }
        Ok(StepResult::Continue)
    }

    /// Store width: the byte size of the stored value's shape.
    fn store_size(&mut self, value_name: &str) -> u64 {
        let func = self.frames.last().expect("active frame").func;
        let sizes = self.size_cache.entry(func.name.clone()).or_insert_with(|| {
            collect_value_shapes(self.module, func)
                .into_iter()
                .map(|(name, shape)| (name, shape.byte_size().clamp(1, 8)))
                .collect()
        });
        sizes.get(value_name).copied().unwrap_or(8)
    }
}

enum StepResult {
    Continue,
    Done(RunVerdict),
}
