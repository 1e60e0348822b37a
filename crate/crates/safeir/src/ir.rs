//! Core data model: type shapes, pointer kinds, instructions, functions,
//! modules, ABI classification, and structural validation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine word size in bytes. All pointer values are one word.
pub const WORD_SIZE: u64 = 8;

/// Layout of a value or memory region. Sizes are computed without a padding
/// model: structs sum their fields, unions take the max.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeShape {
    /// Integer of the given bit width (1..=64).
    Int(u32),
    ZeroSized,
    SafePtr(Box<TypeShape>),
    RawPtr(Box<TypeShape>),
    Struct(Vec<TypeShape>),
    Union(Vec<TypeShape>),
    Array(Box<TypeShape>, u64),
    /// Fat slice reference: data pointer plus length, two words.
    Slice(Box<TypeShape>),
    /// Trait object reference: data pointer plus vtable pointer, two words.
    TraitObject,
    FnPtr,
}

impl TypeShape {
    pub fn byte_size(&self) -> u64 {
        match self {
            TypeShape::Int(bits) => u64::from(*bits).div_ceil(8),
            TypeShape::ZeroSized => 0,
            TypeShape::SafePtr(_) | TypeShape::RawPtr(_) | TypeShape::FnPtr => WORD_SIZE,
            TypeShape::Struct(fields) => fields.iter().map(TypeShape::byte_size).sum(),
            TypeShape::Union(fields) => fields.iter().map(TypeShape::byte_size).max().unwrap_or(0),
            TypeShape::Array(elem, count) => elem.byte_size() * count,
            TypeShape::Slice(_) | TypeShape::TraitObject => 2 * WORD_SIZE,
        }
    }

    /// True for thin pointer shapes: values that hold a single address.
    pub fn is_thin_pointer(&self) -> bool {
        matches!(
            self,
            TypeShape::SafePtr(_) | TypeShape::RawPtr(_) | TypeShape::FnPtr
        )
    }

    /// Pointee of a thin pointer shape, if any.
    pub fn pointee(&self) -> Option<&TypeShape> {
        match self {
            TypeShape::SafePtr(p) | TypeShape::RawPtr(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            TypeShape::Int(bits) => (1..=64).contains(bits),
            TypeShape::ZeroSized | TypeShape::TraitObject | TypeShape::FnPtr => true,
            TypeShape::SafePtr(p) | TypeShape::RawPtr(p) | TypeShape::Slice(p) => {
                p.is_well_formed()
            }
            TypeShape::Struct(fs) | TypeShape::Union(fs) => {
                fs.iter().all(TypeShape::is_well_formed)
            }
            TypeShape::Array(elem, _) => elem.is_well_formed(),
        }
    }
}

/// Pointer classification. Forms a total order for the dataflow meet:
/// `Raw < Safe < NoPtr`, with `meet = min` (anything meeting Raw is Raw).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PtrKind {
    Raw,
    Safe,
    /// Compiler-generated address the program cannot corrupt; always safe to
    /// dereference without a check.
    NoPtr,
}

impl PtrKind {
    pub fn meet(self, other: PtrKind) -> PtrKind {
        self.min(other)
    }

    /// True when dereferences through this kind need no dynamic check.
    pub fn is_checked_statically(self) -> bool {
        matches!(self, PtrKind::Safe | PtrKind::NoPtr)
    }
}

impl fmt::Display for PtrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PtrKind::Safe => write!(f, "safe"),
            PtrKind::Raw => write!(f, "raw"),
            PtrKind::NoPtr => write!(f, "noptr"),
        }
    }
}

/// Classification of a value: either one of the three pointer kinds or a
/// non-pointer. Every value in a function gets exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Pointer(PtrKind),
    NonPointer,
}

impl ValueKind {
    pub fn as_pointer(self) -> Option<PtrKind> {
        match self {
            ValueKind::Pointer(k) => Some(k),
            ValueKind::NonPointer => None,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Pointer(k) => k.fmt(f),
            ValueKind::NonPointer => write!(f, "nonptr"),
        }
    }
}

/// ABI view of a shape: how a value of that shape is represented.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbiClass {
    /// Zero-sized; does not exist in memory.
    Uninhabited,
    Scalar(ValueKind),
    ScalarPair(ValueKind, ValueKind),
    Aggregate,
}

/// Source position of an instruction in a `.sir` file. Lines and columns
/// start at 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLoc {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

impl SourceLoc {
    pub fn synthetic() -> Self {
        SourceLoc {
            file: "<synthetic>".to_string(),
            line: 1,
            column: 1,
        }
    }
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// Dynamic check categories. `Deref` is the classic per-dereference check;
/// the rest are boundary checks inserted by the hoisting pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckKind {
    Deref,
    Cast,
    Load,
    Param,
    Ret,
    Heap,
}

impl CheckKind {
    pub fn keyword(self) -> &'static str {
        match self {
            CheckKind::Deref => "deref",
            CheckKind::Cast => "cast",
            CheckKind::Load => "load",
            CheckKind::Param => "param",
            CheckKind::Ret => "ret",
            CheckKind::Heap => "heap",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Size operand of a heap allocation: literal or SSA value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SizeArg {
    Const(u64),
    Value(String),
}

/// Offset operand of a `gep`: a static byte offset or a dynamic value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GepOffset {
    Static(i64),
    Dynamic(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Callee {
    Direct(String),
    Indirect(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
}

impl BinOpKind {
    pub fn keyword(self) -> &'static str {
        match self {
            BinOpKind::Add => "add",
            BinOpKind::Sub => "sub",
            BinOpKind::Mul => "mul",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpPred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpPred {
    pub fn keyword(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Gt => "gt",
            CmpPred::Ge => "ge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Alloca {
        shape: TypeShape,
    },
    HeapAlloc {
        size: SizeArg,
    },
    HeapFree {
        addr: String,
    },
    Load {
        addr: String,
        shape: TypeShape,
    },
    Store {
        addr: String,
        value: String,
    },
    Gep {
        base: String,
        offset: GepOffset,
        elem: TypeShape,
    },
    Bitcast {
        value: String,
        shape: TypeShape,
    },
    PtrToInt {
        value: String,
    },
    IntToPtr {
        value: String,
        shape: TypeShape,
    },
    CastToSafe {
        value: String,
        shape: TypeShape,
    },
    Phi {
        incoming: Vec<(String, String)>,
    },
    Call {
        callee: Callee,
        args: Vec<String>,
    },
    BinOp {
        op: BinOpKind,
        lhs: String,
        rhs: String,
    },
    Cmp {
        pred: CmpPred,
        lhs: String,
        rhs: String,
    },
    ConstInt {
        value: i64,
    },
    GlobalAddr {
        name: String,
    },
    Br {
        target: String,
    },
    CondBr {
        cond: String,
        then_to: String,
        else_to: String,
    },
    Ret {
        value: Option<String>,
    },
    /// Per-dereference check pseudo-instruction: `check %p, N`.
    Check {
        addr: String,
        size: u64,
    },
    /// Boundary check pseudo-instruction: `ensure <kind> %p, N`.
    Ensure {
        kind: CheckKind,
        addr: String,
        size: u64,
    },
}

impl Op {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Op::Br { .. } | Op::CondBr { .. } | Op::Ret { .. })
    }

    /// Names of the SSA values this op reads.
    pub fn operands(&self) -> Vec<&str> {
        match self {
            Op::Alloca { .. } | Op::ConstInt { .. } | Op::GlobalAddr { .. } | Op::Br { .. } => {
                vec![]
            }
            Op::HeapAlloc { size } => match size {
                SizeArg::Value(v) => vec![v.as_str()],
                SizeArg::Const(_) => vec![],
            },
            Op::HeapFree { addr } => vec![addr.as_str()],
            Op::Load { addr, .. } => vec![addr.as_str()],
            Op::Store { addr, value } => vec![addr.as_str(), value.as_str()],
            Op::Gep { base, offset, .. } => match offset {
                GepOffset::Dynamic(v) => vec![base.as_str(), v.as_str()],
                GepOffset::Static(_) => vec![base.as_str()],
            },
            Op::Bitcast { value, .. }
            | Op::PtrToInt { value }
            | Op::IntToPtr { value, .. }
            | Op::CastToSafe { value, .. } => vec![value.as_str()],
            Op::Phi { incoming } => incoming.iter().map(|(_, v)| v.as_str()).collect(),
            Op::Call { callee, args } => {
                let mut ops: Vec<&str> = args.iter().map(String::as_str).collect();
                if let Callee::Indirect(v) = callee {
                    ops.push(v.as_str());
                }
                ops
            }
            Op::BinOp { lhs, rhs, .. } | Op::Cmp { lhs, rhs, .. } => {
                vec![lhs.as_str(), rhs.as_str()]
            }
            Op::CondBr { cond, .. } => vec![cond.as_str()],
            Op::Ret { value } => value.iter().map(String::as_str).collect(),
            Op::Check { addr, .. } | Op::Ensure { addr, .. } => vec![addr.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instr {
    /// Value name defined by this instruction, if it produces one.
    pub result: Option<String>,
    pub op: Op,
    pub loc: SourceLoc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub instrs: Vec<Instr>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Instr> {
        self.instrs.last().filter(|i| i.op.is_terminator())
    }

    /// Successor block labels, empty for `ret`.
    pub fn successors(&self) -> Vec<&str> {
        match self.terminator().map(|i| &i.op) {
            Some(Op::Br { target }) => vec![target.as_str()],
            Some(Op::CondBr {
                then_to, else_to, ..
            }) => {
                vec![then_to.as_str(), else_to.as_str()]
            }
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FnAttrs {
    /// Callable from foreign code; safe parameters need prologue checks.
    pub extern_visible: bool,
    /// Foreign (C-side) code: only raw pointers, never elided.
    pub foreign: bool,
    /// Declaration-only deallocation entry point; the runtime supplies the body.
    pub known_dealloc: bool,
    /// Trusted annotation that the function never reaches a deallocation.
    pub nofree_declared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub shape: TypeShape,
    pub kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    /// Declared return shape and kind; `None` for void.
    pub ret: Option<(TypeShape, ValueKind)>,
    pub attrs: FnAttrs,
    pub blocks: Vec<Block>,
}

impl FunctionDef {
    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instr_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    pub shape: TypeShape,
    /// Kind of the global's address value.
    pub kind: ValueKind,
    pub init: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternDecl {
    pub name: String,
    pub nofree: bool,
}

/// Instrumentation mode a module was processed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrMode {
    Baseline,
    SafeFfi,
    SafeFfiHeap,
}

impl InstrMode {
    pub fn keyword(self) -> &'static str {
        match self {
            InstrMode::Baseline => "baseline",
            InstrMode::SafeFfi => "safeffi",
            InstrMode::SafeFfiHeap => "safeffi-heap",
        }
    }

    pub fn parse(s: &str) -> Option<InstrMode> {
        match s {
            "baseline" => Some(InstrMode::Baseline),
            "safeffi" => Some(InstrMode::SafeFfi),
            "safeffi-heap" => Some(InstrMode::SafeFfiHeap),
            _ => None,
        }
    }

    pub fn heap_checks(self) -> bool {
        matches!(self, InstrMode::SafeFfiHeap)
    }
}

impl fmt::Display for InstrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// One compilation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramModule {
    pub name: String,
    pub instrumented: Option<InstrMode>,
    pub globals: Vec<GlobalDef>,
    pub externals: Vec<ExternDecl>,
    pub functions: Vec<FunctionDef>,
}

impl ProgramModule {
    pub fn new(name: &str) -> Self {
        ProgramModule {
            name: name.to_string(),
            instrumented: None,
            globals: Vec::new(),
            externals: Vec::new(),
            functions: Vec::new(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn external(&self, name: &str) -> Option<&ExternDecl> {
        self.externals.iter().find(|e| e.name == name)
    }
}

/// Classify a shape by its machine representation.
///
/// Zero-sized shapes are `Uninhabited`. A shape whose flattened
/// representation is exactly one machine word is a `Scalar` carrying the
/// pointer kind of its single leaf. Word-sized unions are `Scalar` only if
/// every field is itself a safe-pointer scalar; any pointer-like field makes
/// the whole union raw because another representation can corrupt the
/// pointer bits. Slices and trait objects are pairs; everything else is an
/// aggregate.
pub fn classify_abi(shape: &TypeShape) -> Result<AbiClass, ShapeError> {
    if !shape.is_well_formed() {
        return Err(ShapeError(format!("malformed shape: {shape:?}")));
    }
    if shape.byte_size() == 0 {
        return Ok(AbiClass::Uninhabited);
    }
    match shape {
        TypeShape::Slice(_) => Ok(AbiClass::ScalarPair(
            ValueKind::Pointer(PtrKind::Raw),
            ValueKind::NonPointer,
        )),
        // The second element is the vtable pointer: compiler-managed, always safe.
        TypeShape::TraitObject => Ok(AbiClass::ScalarPair(
            ValueKind::Pointer(PtrKind::Raw),
            ValueKind::Pointer(PtrKind::Safe),
        )),
        TypeShape::Union(fields) if shape.byte_size() == WORD_SIZE => {
            let all_safe = fields.iter().all(|f| {
                classify_abi(f).ok() == Some(AbiClass::Scalar(ValueKind::Pointer(PtrKind::Safe)))
            });
            if all_safe {
                return Ok(AbiClass::Scalar(ValueKind::Pointer(PtrKind::Safe)));
            }
            if fields.iter().any(contains_pointer_leaf) {
                return Ok(AbiClass::Scalar(ValueKind::Pointer(PtrKind::Raw)));
            }
            Ok(AbiClass::Scalar(ValueKind::NonPointer))
        }
        _ => {
            let mut leaves = Vec::new();
            flatten_leaves(shape, &mut leaves);
            if let [leaf] = leaves.as_slice() {
                if leaf.byte_size() == WORD_SIZE || !leaf.is_thin_pointer() {
                    return Ok(AbiClass::Scalar(leaf_kind(leaf)));
                }
            }
            Ok(AbiClass::Aggregate)
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ShapeError(pub String);

/// Flatten a shape to its non-zero-sized leaves, expanding structs and
/// arrays. Unions, slices, and trait objects stay opaque.
fn flatten_leaves<'a>(shape: &'a TypeShape, out: &mut Vec<&'a TypeShape>) {
    match shape {
        TypeShape::ZeroSized => {}
        TypeShape::Struct(fields) => {
            for f in fields {
                flatten_leaves(f, out);
            }
        }
        TypeShape::Array(elem, count) => {
            for _ in 0..*count {
                if elem.byte_size() > 0 {
                    out.push(elem);
                }
            }
        }
        other => {
            if other.byte_size() > 0 {
                out.push(other);
            }
        }
    }
}

fn leaf_kind(leaf: &TypeShape) -> ValueKind {
    match leaf {
        TypeShape::SafePtr(_) => ValueKind::Pointer(PtrKind::Safe),
        TypeShape::RawPtr(_) => ValueKind::Pointer(PtrKind::Raw),
        // Function pointers are never dereferenced via load/store; treated as
        // compiler-managed.
        TypeShape::FnPtr => ValueKind::Pointer(PtrKind::NoPtr),
        _ => ValueKind::NonPointer,
    }
}

fn contains_pointer_leaf(shape: &TypeShape) -> bool {
    match shape {
        TypeShape::SafePtr(_) | TypeShape::RawPtr(_) | TypeShape::FnPtr => true,
        TypeShape::Slice(_) | TypeShape::TraitObject => true,
        TypeShape::Struct(fs) | TypeShape::Union(fs) => fs.iter().any(contains_pointer_leaf),
        TypeShape::Array(elem, count) => *count > 0 && contains_pointer_leaf(elem),
        TypeShape::Int(_) | TypeShape::ZeroSized => false,
    }
}

/// Declared kind of a value of the given shape, e.g. when loaded from
/// memory. Follows the ABI classification, so a nested single-field struct
/// around a pointer counts as that pointer.
pub fn decl_kind_of_shape(shape: &TypeShape) -> ValueKind {
    match classify_abi(shape) {
        Ok(AbiClass::Scalar(kind)) => kind,
        _ => ValueKind::NonPointer,
    }
}

/// True when a value of this shape is a single machine-word address.
pub fn pointer_valued(shape: &TypeShape) -> bool {
    matches!(decl_kind_of_shape(shape), ValueKind::Pointer(_))
}

/// Pointee behind a scalar-pointer shape, unwrapping single-field nesting.
/// None for function pointers and for word-sized pointer unions, whose
/// pointee is ambiguous (checks fall back to a liveness probe).
pub fn scalar_pointee(shape: &TypeShape) -> Option<&TypeShape> {
    match shape {
        TypeShape::SafePtr(p) | TypeShape::RawPtr(p) => Some(p),
        TypeShape::Struct(_) | TypeShape::Array(..) => {
            let mut leaves = Vec::new();
            flatten_leaves(shape, &mut leaves);
            match leaves.as_slice() {
                [leaf] => scalar_pointee(leaf),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Default declared kind for the value defined by `instr`, before dataflow.
///
/// Stack slots of aggregate class are compiler-generated handles (`NoPtr`);
/// other stack slots are safe. Heap allocations and integer-derived pointers
/// start raw. Inside foreign functions every pointer result is clamped to
/// raw: foreign code has only raw pointers.
pub fn default_decl_kind(
    module: &ProgramModule,
    func: &FunctionDef,
    instr: &Instr,
) -> Option<ValueKind> {
    let kind = match &instr.op {
        Op::Alloca { shape } => match classify_abi(shape) {
            Ok(AbiClass::Aggregate) => ValueKind::Pointer(PtrKind::NoPtr),
            _ => ValueKind::Pointer(PtrKind::Safe),
        },
        Op::HeapAlloc { .. } => ValueKind::Pointer(PtrKind::Raw),
        Op::IntToPtr { .. } => ValueKind::Pointer(PtrKind::Raw),
        Op::CastToSafe { .. } => ValueKind::Pointer(PtrKind::Safe),
        Op::Load { shape, .. } => decl_kind_of_shape(shape),
        Op::Call { callee, .. } => match callee {
            Callee::Direct(name) => match module.function(name) {
                Some(f) => match &f.ret {
                    Some((_, kind)) => *kind,
                    None => return None,
                },
                // Calls to declared externals yield a raw byte pointer when
                // a result is bound.
                None => ValueKind::Pointer(PtrKind::Raw),
            },
            Callee::Indirect(_) => ValueKind::Pointer(PtrKind::Raw),
        },
        Op::PtrToInt { .. } | Op::ConstInt { .. } | Op::BinOp { .. } | Op::Cmp { .. } => {
            ValueKind::NonPointer
        }
        Op::GlobalAddr { name } => module.global(name)?.kind,
        // Transparent ops (bitcast, gep, phi) and non-defining ops have no
        // default; the dataflow derives them.
        _ => return None,
    };
    if func.attrs.foreign {
        if let ValueKind::Pointer(_) = kind {
            return Some(ValueKind::Pointer(PtrKind::Raw));
        }
    }
    Some(kind)
}

/// Shape of the value defined by `instr`, if it defines one.
pub fn result_shape(
    module: &ProgramModule,
    func: &FunctionDef,
    shapes: &HashMap<String, TypeShape>,
    instr: &Instr,
) -> Option<TypeShape> {
    match &instr.op {
        Op::Alloca { shape } => Some(TypeShape::SafePtr(Box::new(shape.clone()))),
        Op::HeapAlloc { .. } => Some(TypeShape::RawPtr(Box::new(TypeShape::Int(8)))),
        Op::Load { shape, .. } => Some(shape.clone()),
        Op::Gep { base, elem, .. } => {
            let base_shape = shapes.get(base)?;
            match base_shape {
                TypeShape::SafePtr(_) => Some(TypeShape::SafePtr(Box::new(elem.clone()))),
                _ => Some(TypeShape::RawPtr(Box::new(elem.clone()))),
            }
        }
        Op::Bitcast { shape, .. } | Op::IntToPtr { shape, .. } | Op::CastToSafe { shape, .. } => {
            Some(shape.clone())
        }
        Op::PtrToInt { .. } => Some(TypeShape::Int(64)),
        Op::Phi { incoming } => incoming.first().and_then(|(_, v)| shapes.get(v).cloned()),
        Op::Call { callee, .. } => match callee {
            Callee::Direct(name) => match module.function(name) {
                Some(f) => f.ret.as_ref().map(|(s, _)| s.clone()),
                None => Some(TypeShape::RawPtr(Box::new(TypeShape::Int(8)))),
            },
            Callee::Indirect(_) => Some(TypeShape::RawPtr(Box::new(TypeShape::Int(8)))),
        },
        Op::ConstInt { .. } | Op::BinOp { .. } => Some(TypeShape::Int(64)),
        Op::Cmp { .. } => Some(TypeShape::Int(1)),
        Op::GlobalAddr { name } => {
            let g = module.global(name)?;
            let pointee = Box::new(g.shape.clone());
            match g.kind {
                ValueKind::Pointer(PtrKind::Raw) => Some(TypeShape::RawPtr(pointee)),
                _ => Some(TypeShape::SafePtr(pointee)),
            }
        }
        _ => {
            let _ = func;
            None
        }
    }
}

/// A validation finding, anchored to a function/block/instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub block: Option<String>,
    /// Index of the instruction within its block.
    pub instr: Option<usize>,
    pub loc: Option<SourceLoc>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.function)?;
        if let Some(b) = &self.block {
            write!(f, " @{b}")?;
        }
        if let Some(i) = self.instr {
            write!(f, " #{i}")?;
        }
        write!(f, "] {}", self.message)?;
        if let Some(loc) = &self.loc {
            write!(f, " ({loc})")?;
        }
        Ok(())
    }
}

/// Check all structural, SSA, type, and attribute invariants of a module.
/// Returns an empty list iff the module is well-formed. Kind-dependent rules
/// (cast operands must be raw) are checked only for functions that pass the
/// structural stage.
pub fn validate_module(module: &ProgramModule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut global_names = HashSet::new();
    for g in &module.globals {
        if !global_names.insert(g.name.as_str()) {
            diags.push(Diagnostic {
                function: String::new(),
                block: None,
                instr: None,
                loc: None,
                message: format!("duplicate global @{}", g.name),
            });
        }
        if !g.shape.is_well_formed() {
            diags.push(Diagnostic {
                function: String::new(),
                block: None,
                instr: None,
                loc: None,
                message: format!("global @{} has malformed shape", g.name),
            });
        }
    }

    let mut fn_names = HashSet::new();
    for f in &module.functions {
        if !fn_names.insert(f.name.as_str()) {
            diags.push(Diagnostic {
                function: f.name.clone(),
                block: None,
                instr: None,
                loc: None,
                message: "duplicate function definition".to_string(),
            });
        }
    }

    for func in &module.functions {
        let before = diags.len();
        validate_function_structure(module, func, &mut diags);
        let structurally_ok = diags.len() == before;
        if structurally_ok {
            validate_function_kinds(module, func, &mut diags);
        }
    }
    diags
}

fn diag(func: &FunctionDef, block: Option<&Block>, idx: Option<usize>, msg: String) -> Diagnostic {
    let loc = block
        .and_then(|b| idx.and_then(|i| b.instrs.get(i)))
        .map(|i| i.loc.clone());
    Diagnostic {
        function: func.name.clone(),
        block: block.map(|b| b.label.clone()),
        instr: idx,
        loc,
        message: msg,
    }
}

fn validate_function_structure(
    module: &ProgramModule,
    func: &FunctionDef,
    diags: &mut Vec<Diagnostic>,
) {
    // Signature rules.
    for p in &func.params {
        if !p.shape.is_well_formed() {
            diags.push(diag(
                func,
                None,
                None,
                format!("param %{} has malformed shape", p.name),
            ));
        }
        if p.shape.byte_size() > WORD_SIZE {
            diags.push(diag(
                func,
                None,
                None,
                format!("param %{} wider than a machine word", p.name),
            ));
        }
        match (&p.kind, pointer_valued(&p.shape)) {
            (ValueKind::Pointer(_), false) => diags.push(diag(
                func,
                None,
                None,
                format!("param %{} has pointer kind but non-pointer shape", p.name),
            )),
            (ValueKind::NonPointer, true) => diags.push(diag(
                func,
                None,
                None,
                format!(
                    "param %{} is pointer-shaped but lacks a kind annotation",
                    p.name
                ),
            )),
            _ => {}
        }
        if func.attrs.foreign && p.kind == ValueKind::Pointer(PtrKind::Safe) {
            diags.push(diag(
                func,
                None,
                None,
                format!("foreign function declares safe param %{}", p.name),
            ));
        }
    }
    if let Some((shape, kind)) = &func.ret {
        if shape.byte_size() > WORD_SIZE {
            diags.push(diag(
                func,
                None,
                None,
                "return shape wider than a machine word".into(),
            ));
        }
        match (kind, pointer_valued(shape)) {
            (ValueKind::Pointer(_), false) => diags.push(diag(
                func,
                None,
                None,
                "return has pointer kind but non-pointer shape".into(),
            )),
            (ValueKind::NonPointer, true) => diags.push(diag(
                func,
                None,
                None,
                "return is pointer-shaped but lacks a kind annotation".into(),
            )),
            _ => {}
        }
        if func.attrs.foreign && *kind == ValueKind::Pointer(PtrKind::Safe) {
            diags.push(diag(
                func,
                None,
                None,
                "foreign function declares safe return".into(),
            ));
        }
    }

    if func.attrs.known_dealloc {
        if !func.blocks.is_empty() {
            diags.push(diag(
                func,
                None,
                None,
                "known_dealloc functions are declaration-only".into(),
            ));
        }
        if func.params.len() != 1 || !pointer_valued(&func.params[0].shape) {
            diags.push(diag(
                func,
                None,
                None,
                "known_dealloc functions take exactly one pointer param".into(),
            ));
        }
        if func.ret.is_some() {
            diags.push(diag(
                func,
                None,
                None,
                "known_dealloc functions return void".into(),
            ));
        }
        return;
    }
    if func.blocks.is_empty() {
        diags.push(diag(func, None, None, "function has no blocks".into()));
        return;
    }

    // Block labels unique; exactly one terminator per block, at the end.
    let mut labels = HashSet::new();
    for block in &func.blocks {
        if !labels.insert(block.label.as_str()) {
            diags.push(diag(
                func,
                Some(block),
                None,
                format!("duplicate block label {}", block.label),
            ));
        }
        let term_count = block.instrs.iter().filter(|i| i.op.is_terminator()).count();
        if term_count != 1 || block.terminator().is_none() {
            diags.push(diag(
                func,
                Some(block),
                None,
                format!("block {} must end in exactly one terminator", block.label),
            ));
        }
        let mut seen_non_phi = false;
        for (idx, instr) in block.instrs.iter().enumerate() {
            if matches!(instr.op, Op::Phi { .. }) {
                if seen_non_phi {
                    diags.push(diag(
                        func,
                        Some(block),
                        Some(idx),
                        "phi after non-phi instruction".into(),
                    ));
                }
            } else {
                seen_non_phi = true;
            }
        }
    }
    if diags.iter().any(|d| d.function == func.name) {
        return;
    }

    // Branch targets resolve; entry has no predecessors.
    let mut preds: HashMap<&str, Vec<&str>> = HashMap::new();
    for block in &func.blocks {
        for succ in block.successors() {
            if func.block(succ).is_none() {
                diags.push(diag(
                    func,
                    Some(block),
                    None,
                    format!("branch to unknown block {succ}"),
                ));
            } else {
                preds.entry(succ).or_default().push(&block.label);
            }
        }
    }
    let entry = &func.blocks[0];
    if preds.contains_key(entry.label.as_str()) {
        diags.push(diag(
            func,
            Some(entry),
            None,
            "entry block must have no predecessors".into(),
        ));
    }
    if !diags.is_empty() && diags.iter().any(|d| d.function == func.name) {
        return;
    }

    // All blocks reachable from entry.
    let reachable = reachable_blocks(func);
    for block in &func.blocks {
        if !reachable.contains(block.label.as_str()) {
            diags.push(diag(
                func,
                Some(block),
                None,
                format!("unreachable block {}", block.label),
            ));
        }
    }
    if diags.iter().any(|d| d.function == func.name) {
        return;
    }

    // Single definition per value name.
    let mut defs: HashMap<&str, (usize, usize)> = HashMap::new();
    for p in &func.params {
        defs.insert(p.name.as_str(), (usize::MAX, 0));
    }
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            if let Some(name) = &instr.result {
                if defs.insert(name.as_str(), (bi, ii)).is_some() {
                    diags.push(diag(
                        func,
                        Some(block),
                        Some(ii),
                        format!("value %{name} defined more than once"),
                    ));
                }
            }
        }
    }
    if diags.iter().any(|d| d.function == func.name) {
        return;
    }

    let dominators = compute_dominators(func);
    let block_idx: HashMap<&str, usize> = func
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.as_str(), i))
        .collect();

    // Uses dominated by definitions.
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            if let Op::Phi { incoming } = &instr.op {
                let pred_set: HashSet<&str> = preds
                    .get(block.label.as_str())
                    .map(|v| v.iter().copied().collect())
                    .unwrap_or_default();
                let in_set: HashSet<&str> = incoming.iter().map(|(b, _)| b.as_str()).collect();
                if in_set != pred_set || incoming.len() != pred_set.len() {
                    diags.push(diag(
                        func,
                        Some(block),
                        Some(ii),
                        "phi incoming blocks must match predecessors exactly".into(),
                    ));
                    continue;
                }
                for (from, value) in incoming {
                    match defs.get(value.as_str()) {
                        None => diags.push(diag(
                            func,
                            Some(block),
                            Some(ii),
                            format!("use of undefined value %{value}"),
                        )),
                        Some(&(dbi, _)) => {
                            // The definition must dominate the end of the
                            // incoming predecessor.
                            if dbi != usize::MAX {
                                let from_idx = block_idx[from.as_str()];
                                if !dominates(&dominators, dbi, from_idx) {
                                    diags.push(diag(
                                        func,
                                        Some(block),
                                        Some(ii),
                                        format!("%{value} does not dominate edge from {from}"),
                                    ));
                                }
                            }
                        }
                    }
                }
            } else {
                for used in instr.op.operands() {
                    match defs.get(used) {
                        None => diags.push(diag(
                            func,
                            Some(block),
                            Some(ii),
                            format!("use of undefined value %{used}"),
                        )),
                        Some(&(dbi, dii)) => {
                            let ok = if dbi == usize::MAX {
                                true // param
                            } else if dbi == bi {
                                dii < ii
                            } else {
                                dominates(&dominators, dbi, bi)
                            };
                            if !ok {
                                diags.push(diag(
                                    func,
                                    Some(block),
                                    Some(ii),
                                    format!("use of %{used} not dominated by its definition"),
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    if diags.iter().any(|d| d.function == func.name) {
        return;
    }

    // Per-instruction typing rules.
    let shapes = collect_value_shapes(module, func);
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            validate_instr(module, func, &shapes, block, bi, ii, instr, diags);
        }
    }
}

/// Shapes of all values in a function (params plus defined values).
/// Assumes single-definition and dominance already hold.
pub fn collect_value_shapes(
    module: &ProgramModule,
    func: &FunctionDef,
) -> HashMap<String, TypeShape> {
    let mut shapes: HashMap<String, TypeShape> = HashMap::new();
    for p in &func.params {
        shapes.insert(p.name.clone(), p.shape.clone());
    }
    // Iterate until stable: phi shapes may depend on later definitions.
    loop {
        let mut changed = false;
        for block in &func.blocks {
            for instr in &block.instrs {
                if let Some(name) = &instr.result {
                    if shapes.contains_key(name) {
                        continue;
                    }
                    if let Some(s) = result_shape(module, func, &shapes, instr) {
                        shapes.insert(name.clone(), s);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    shapes
}

#[allow(clippy::too_many_arguments)]
fn validate_instr(
    module: &ProgramModule,
    func: &FunctionDef,
    shapes: &HashMap<String, TypeShape>,
    block: &Block,
    _bi: usize,
    ii: usize,
    instr: &Instr,
    diags: &mut Vec<Diagnostic>,
) {
    let mut err = |msg: String| diags.push(diag(func, Some(block), Some(ii), msg));
    let shape_of = |v: &str| shapes.get(v);
    let is_ptr = |v: &str| shape_of(v).map(pointer_valued).unwrap_or(false);
    let is_int = |v: &str| matches!(shape_of(v), Some(TypeShape::Int(_)));

    match &instr.op {
        Op::Alloca { shape } => {
            if !shape.is_well_formed() {
                err("alloca of malformed shape".into());
            }
        }
        Op::HeapAlloc { size } => {
            if let SizeArg::Value(v) = size {
                if !is_int(v) {
                    err(format!("heapalloc size %{v} must be an integer"));
                }
            }
        }
        Op::HeapFree { addr } => {
            if !is_ptr(addr) {
                err(format!("heapfree of non-pointer %{addr}"));
            }
        }
        Op::Load { addr, shape } => {
            if !is_ptr(addr) {
                err(format!("load address %{addr} is not a pointer"));
            }
            if shape.byte_size() > WORD_SIZE {
                err("load result wider than a machine word".into());
            }
            if shape.byte_size() == 0 {
                err("load of zero-sized shape".into());
            }
        }
        Op::Store { addr, value } => {
            if !is_ptr(addr) {
                err(format!("store address %{addr} is not a pointer"));
            }
            if shape_of(value).map(|s| s.byte_size()).unwrap_or(0) == 0 {
                err(format!("store of zero-sized value %{value}"));
            }
        }
        Op::Gep { base, elem, .. } => {
            if !is_ptr(base) {
                err(format!("gep base %{base} is not a pointer"));
            }
            if !elem.is_well_formed() {
                err("gep element shape malformed".into());
            }
        }
        Op::Bitcast { value, shape } => match shape_of(value) {
            Some(src) => {
                if src.byte_size() != shape.byte_size() {
                    err("bitcast must preserve byte size".into());
                }
                if pointer_valued(src) != pointer_valued(shape) {
                    err("bitcast must preserve pointer-ness; use ptrtoint/inttoptr".into());
                }
            }
            None => err(format!("bitcast of unknown value %{value}")),
        },
        Op::PtrToInt { value } => {
            if !is_ptr(value) {
                err(format!("ptrtoint of non-pointer %{value}"));
            }
        }
        Op::IntToPtr { value, shape } => {
            if !is_int(value) {
                err(format!("inttoptr of non-integer %{value}"));
            }
            if !pointer_valued(shape) {
                err("inttoptr target must be a pointer shape".into());
            }
        }
        Op::CastToSafe { value, shape } => {
            if func.attrs.foreign {
                err("castsafe is forbidden in foreign functions".into());
            }
            if !is_ptr(value) {
                err(format!("castsafe operand %{value} is not a pointer"));
            }
            if !matches!(shape, TypeShape::SafePtr(_)) {
                err("castsafe target must be a safe pointer shape".into());
            }
        }
        Op::Phi { incoming } => {
            let mut first: Option<&TypeShape> = None;
            for (_, v) in incoming {
                if let Some(s) = shape_of(v) {
                    match first {
                        None => first = Some(s),
                        Some(f) if f != s => {
                            err("phi incoming shapes disagree".into());
                            break;
                        }
                        _ => {}
                    }
                }
            }
        }
        Op::Call { callee, args } => match callee {
            Callee::Direct(name) => {
                if let Some(target) = module.function(name) {
                    if args.len() != target.params.len() {
                        err(format!(
                            "call to @{name} with {} args, expected {}",
                            args.len(),
                            target.params.len()
                        ));
                    } else {
                        for (arg, param) in args.iter().zip(&target.params) {
                            if let Some(s) = shape_of(arg) {
                                let compatible = if func.attrs.foreign {
                                    s.byte_size() == param.shape.byte_size()
                                } else {
                                    *s == param.shape
                                };
                                if !compatible {
                                    err(format!(
                                        "argument %{arg} does not match param %{} of @{name}",
                                        param.name
                                    ));
                                }
                            }
                        }
                    }
                    if instr.result.is_some() && target.ret.is_none() {
                        err(format!("binding result of void call to @{name}"));
                    }
                } else if module.external(name).is_none() {
                    err(format!(
                        "call to unknown @{name}: not a function or declared external"
                    ));
                }
            }
            Callee::Indirect(v) => {
                if !is_ptr(v) {
                    err(format!("indirect callee %{v} is not a pointer"));
                }
            }
        },
        Op::BinOp { lhs, rhs, .. } | Op::Cmp { lhs, rhs, .. } => {
            for v in [lhs, rhs] {
                if !is_int(v) {
                    err(format!("arithmetic on non-integer %{v}"));
                }
            }
        }
        Op::CondBr { cond, .. } => {
            if !is_int(cond) {
                err(format!("condbr condition %{cond} must be an integer"));
            }
        }
        Op::Ret { value } => match (&func.ret, value) {
            (None, Some(v)) => err(format!("returning %{v} from a void function")),
            (Some(_), None) => err("missing return value".into()),
            (Some((shape, _)), Some(v)) => {
                if let Some(s) = shape_of(v) {
                    let compatible = if func.attrs.foreign {
                        s.byte_size() == shape.byte_size()
                    } else {
                        s == shape
                    };
                    if !compatible {
                        err(format!("return value %{v} does not match declared shape"));
                    }
                }
            }
            (None, None) => {}
        },
        Op::Check { addr, size } | Op::Ensure { addr, size, .. } => {
            if !is_ptr(addr) {
                err(format!("check of non-pointer %{addr}"));
            }
            if *size == 0 {
                err("check size must be positive".into());
            }
            if let Op::Ensure {
                kind: CheckKind::Deref,
                ..
            } = instr.op
            {
                err("ensure cannot carry the deref kind".into());
            }
        }
        Op::ConstInt { .. } | Op::GlobalAddr { .. } | Op::Br { .. } => {
            if let Op::GlobalAddr { name } = &instr.op {
                if module.global(name).is_none() {
                    err(format!("reference to unknown global @{name}"));
                }
            }
        }
    }

    // Defining ops must bind a result; pure-effect ops must not. Calls may
    // discard their result (void calls are checked above).
    let must_bind = !matches!(
        instr.op,
        Op::Store { .. }
            | Op::HeapFree { .. }
            | Op::Br { .. }
            | Op::CondBr { .. }
            | Op::Ret { .. }
            | Op::Check { .. }
            | Op::Ensure { .. }
            | Op::Call { .. }
    );
    if must_bind && instr.result.is_none() {
        diags.push(diag(
            func,
            Some(block),
            Some(ii),
            "instruction must bind its result".into(),
        ));
    }
    if !must_bind && instr.result.is_some() && !matches!(instr.op, Op::Call { .. }) {
        diags.push(diag(
            func,
            Some(block),
            Some(ii),
            "instruction cannot bind a result".into(),
        ));
    }
}

/// Kind-dependent validation: castsafe operands must be raw, argument and
/// return kinds must be compatible with declarations. Runs the dataflow on a
/// structurally valid function.
fn validate_function_kinds(
    module: &ProgramModule,
    func: &FunctionDef,
    diags: &mut Vec<Diagnostic>,
) {
    if func.blocks.is_empty() {
        return;
    }
    let km = match crate::typeflow::infer_kinds_in(module, func) {
        Ok(km) => km,
        Err(e) => {
            diags.push(Diagnostic {
                function: func.name.clone(),
                block: None,
                instr: None,
                loc: None,
                message: format!("kind analysis failed: {e}"),
            });
            return;
        }
    };
    let kind_of = |v: &str| km.get(v);
    for block in &func.blocks {
        for (ii, instr) in block.instrs.iter().enumerate() {
            match &instr.op {
                Op::CastToSafe { value, .. } => {
                    if kind_of(value) != Some(ValueKind::Pointer(PtrKind::Raw)) {
                        diags.push(diag(
                            func,
                            Some(block),
                            Some(ii),
                            format!("castsafe operand %{value} must be a raw pointer"),
                        ));
                    }
                }
                Op::Call {
                    callee: Callee::Direct(name),
                    args,
                } => {
                    if let Some(target) = module.function(name) {
                        for (arg, param) in args.iter().zip(&target.params) {
                            let arg_kind = kind_of(arg);
                            // A raw value may not flow into a safe parameter
                            // unless the caller is foreign code, where only
                            // ABI compatibility is enforced.
                            if param.kind == ValueKind::Pointer(PtrKind::Safe)
                                && arg_kind == Some(ValueKind::Pointer(PtrKind::Raw))
                                && !func.attrs.foreign
                            {
                                diags.push(diag(
                                    func,
                                    Some(block),
                                    Some(ii),
                                    format!(
                                        "raw value %{arg} passed to safe param %{} of @{name}",
                                        param.name
                                    ),
                                ));
                            }
                        }
                    }
                }
                Op::Ret { value: Some(v) } => {
                    if let Some((_, ValueKind::Pointer(PtrKind::Safe))) = &func.ret {
                        if kind_of(v) == Some(ValueKind::Pointer(PtrKind::Raw)) {
                            diags.push(diag(
                                func,
                                Some(block),
                                Some(ii),
                                format!("raw value %{v} returned from a safe-returning function"),
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

/// Labels of blocks reachable from entry.
pub fn reachable_blocks(func: &FunctionDef) -> HashSet<&str> {
    let mut seen: HashSet<&str> = HashSet::new();
    let Some(entry) = func.blocks.first() else {
        return seen;
    };
    let mut work = vec![entry.label.as_str()];
    while let Some(label) = work.pop() {
        if !seen.insert(label) {
            continue;
        }
        if let Some(block) = func.block(label) {
            work.extend(block.successors());
        }
    }
    seen
}

/// Iterative dominator computation over block indices. `doms[i]` holds the
/// set of blocks dominating block `i`. Assumes all blocks are reachable.
pub fn compute_dominators(func: &FunctionDef) -> Vec<HashSet<usize>> {
    let n = func.blocks.len();
    let block_idx: HashMap<&str, usize> = func
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.as_str(), i))
        .collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, block) in func.blocks.iter().enumerate() {
        for succ in block.successors() {
            if let Some(&j) = block_idx.get(succ) {
                preds[j].push(i);
            }
        }
    }
    let all: HashSet<usize> = (0..n).collect();
    let mut doms: Vec<HashSet<usize>> = vec![all; n];
    doms[0] = HashSet::from([0]);
    let mut changed = true;
    while changed {
        changed = false;
        for i in 1..n {
            let mut new: Option<HashSet<usize>> = None;
            for &p in &preds[i] {
                new = Some(match new {
                    None => doms[p].clone(),
                    Some(acc) => acc.intersection(&doms[p]).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(i);
            if new != doms[i] {
                doms[i] = new;
                changed = true;
            }
        }
    }
    doms
}

fn dominates(doms: &[HashSet<usize>], a: usize, b: usize) -> bool {
    doms.get(b).map(|s| s.contains(&a)).unwrap_or(false)
}
