//! Deterministic corpus generator: minimal programs covering the common
//! FFI interactions between safe and foreign code, spanning every
//! combination of allocation site, deallocation site, pointer invalidation,
//! and control-flow ordering that is actually realizable.
//!
//! The feasibility matrix is spelled out literally in `gen_corpus`, one
//! comment per excluded combination, so the case count is auditable:
//! 45 cases, 35 expecting a violation and 10 benign.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ir::ProgramModule;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocSite {
    Global,
    CStack,
    CHeap,
    RustStack,
    RustHeap,
}

impl AllocSite {
    fn slug(self) -> &'static str {
        match self {
            AllocSite::Global => "global",
            AllocSite::CStack => "c_stack",
            AllocSite::CHeap => "c_heap",
            AllocSite::RustStack => "rust_stack",
            AllocSite::RustHeap => "rust_heap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invalidation {
    ArithmeticOob,
    Dealloc,
    CraftedPtr,
    None,
}

impl Invalidation {
    fn slug(self) -> &'static str {
        match self {
            Invalidation::ArithmeticOob => "oob",
            Invalidation::Dealloc => "dealloc",
            Invalidation::CraftedPtr => "crafted",
            Invalidation::None => "none",
        }
    }
}

/// Which language performs a heap free in a dealloc case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeSite {
    CFree,
    RustFree,
}

impl FreeSite {
    fn wrapper(self) -> &'static str {
        match self {
            FreeSite::CFree => "c_free_it",
            FreeSite::RustFree => "rust_free_it",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            FreeSite::CFree => "cfree",
            FreeSite::RustFree => "rustfree",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Clean,
    Violation,
}

#[derive(Debug, Clone)]
pub struct CorpusCase {
    /// 1-based position in the deterministic generation order.
    pub index: usize,
    pub id: String,
    pub alloc_site: AllocSite,
    pub dealloc_site: Option<AllocSite>,
    pub free_site: Option<FreeSite>,
    pub invalidation: Invalidation,
    /// Control-flow permutation: 0 = invalidate (or nothing) before the
    /// boundary crossing, 1 = boundary first then invalidate, 2 = raw use
    /// with no boundary crossing.
    pub perm: u8,
    pub expected: Expected,
    /// The miss that hoisting without heap checks is documented to have.
    pub free_during_scope: bool,
    /// The invalidation happens strictly before a `castsafe`, so the
    /// optimized modes must report at the cast while full instrumentation
    /// reports at a later dereference.
    pub cast_boundary_case: bool,
    /// Normalized `.sir` text; parsing it yields `module`.
    pub text: String,
    pub module: ProgramModule,
}

// ---- shared building blocks -------------------------------------------------

const FN_FREE: &str = "fn @free(%p: *i8 :raw) known_dealloc {}\n";
const FN_RUST_DEALLOC: &str = "fn @rust_dealloc(%p: *i8 :raw) known_dealloc {}\n";

const FN_C_ID: &str = "fn @c_id(%p: *i8 :raw) -> *i8 :raw foreign {
entry:
  ret %p
}
";

const FN_C_CREATE: &str = "fn @c_create() -> *i8 :raw foreign {
entry:
  %p = heapalloc 16
  %c = const 77
  store %p, %c
  ret %p
}
";

const FN_C_FREE_IT: &str = "fn @c_free_it(%p: *i8 :raw) foreign {
entry:
  call @free(%p)
  ret
}
";

const FN_RUST_FREE_IT: &str = "fn @rust_free_it(%p: *i8 :raw) {
entry:
  call @rust_dealloc(%p)
  ret
}
";

const GLOBAL_OBJ: &str = "global @gobj : {i64, i64} :raw = 77\n";

const FN_C_GLOBAL: &str = "fn @c_global() -> *i8 :raw foreign {
entry:
  %g = globaladdr @gobj
  %r = bitcast %g, *i8
  ret %r
}
";

const FN_C_STACK_MAKE: &str = "fn @c_stack_make() -> *i8 :raw foreign {
entry:
  %buf = alloca {i64, i64}
  %c = const 77
  %b8 = bitcast %buf, *i8
  store %b8, %c
  ret %b8
}
";

const FN_RUST_STACK_MAKE: &str = "fn @rust_stack_make() -> *i8 :raw {
entry:
  %buf = alloca {i64, i64}
  %c = const 77
  %b8 = bitcast %buf, *i8
  store %b8, %c
  ret %b8
}
";

/// 1 << 56: flips the tag byte of a pointer without moving the address.
const TAG_FLIP: &str = "72057594037927936";

/// Action bodies operate on a live raw `*i8` pointer named `%p` to a
/// 16-byte `{i64, i64}` object.
fn action_lines(invalidation: Invalidation, perm: u8, freer: Option<FreeSite>) -> Vec<String> {
    let freer = freer.map(|f| f.wrapper());
    let s = |t: &str| t.to_string();
    match (invalidation, perm) {
        (Invalidation::None, 0) => vec![
            s("%s = castsafe %p, &{i64, i64}"),
            s("%f0 = gep %s, 0, i64"),
            s("%v = load %f0, i64"),
            s("%f1 = gep %s, 8, i64"),
            s("%w = load %f1, i64"),
        ],
        (Invalidation::None, 1) => vec![s("%v = load %p, i64")],
        (Invalidation::ArithmeticOob, 0) => vec![
            s("%bad = gep %p, 16, i64"),
            s("%s = castsafe %bad, &{i64, i64}"),
            s("%f0 = gep %s, 0, i64"),
            s("%v = load %f0, i64"),
        ],
        (Invalidation::ArithmeticOob, 1) => vec![
            s("%s = castsafe %p, &{i64, i64}"),
            s("%bad = gep %s, 16, i64"),
            s("%v = load %bad, i64"),
        ],
        (Invalidation::CraftedPtr, 0) => vec![
            s("%i = ptrtoint %p"),
            format!("%k = const {TAG_FLIP}"),
            s("%bi = add %i, %k"),
            s("%bad = inttoptr %bi, *i8"),
            s("%s = castsafe %bad, &{i64, i64}"),
            s("%f0 = gep %s, 0, i64"),
            s("%v = load %f0, i64"),
        ],
        (Invalidation::CraftedPtr, 2) => vec![
            s("%i = ptrtoint %p"),
            format!("%k = const {TAG_FLIP}"),
            s("%bi = add %i, %k"),
            s("%bad = inttoptr %bi, *i8"),
            s("%v = load %bad, i64"),
        ],
        (Invalidation::Dealloc, 0) => vec![
            format!("call @{}(%p)", freer.expect("dealloc case has a freer")),
            s("%s = castsafe %p, &{i64, i64}"),
            s("%f0 = gep %s, 0, i64"),
            s("%v = load %f0, i64"),
        ],
        (Invalidation::Dealloc, 1) => vec![
            s("%s = castsafe %p, &{i64, i64}"),
            s("%f0 = gep %s, 0, i64"),
            s("%v = load %f0, i64"),
            format!("call @{}(%p)", freer.expect("dealloc case has a freer")),
            s("%w = load %f0, i64"),
        ],
        (Invalidation::Dealloc, 2) => vec![
            format!("call @{}(%p)", freer.expect("dealloc case has a freer")),
            s("%v = load %p, i64"),
        ],
        other => unreachable!("no action template for {other:?}"),
    }
}

/// Support functions a dealloc wrapper needs.
fn freer_decls(freer: FreeSite) -> String {
    match freer {
        FreeSite::CFree => format!("{FN_FREE}\n{FN_C_FREE_IT}"),
        FreeSite::RustFree => format!("{FN_RUST_DEALLOC}\n{FN_RUST_FREE_IT}"),
    }
}

/// A module whose action runs inline in `@main` with `%p` freshly acquired.
fn inline_scene(module_name: &str, alloc: AllocSite, action: &[String], support: &str) -> String {
    let (acquire, acquire_support): (Vec<&str>, &str) = match alloc {
        AllocSite::Global => (vec!["%p = call @c_global()"], FN_C_GLOBAL),
        AllocSite::CHeap => (vec!["%p = call @c_create()"], FN_C_CREATE),
        AllocSite::RustHeap => (
            vec![
                "%p0 = heapalloc 16",
                "%c0 = const 77",
                "store %p0, %c0",
                "%p = call @c_id(%p0)",
            ],
            FN_C_ID,
        ),
        AllocSite::RustStack => (
            vec![
                "%obj = alloca {i64, i64}",
                "%c0 = const 77",
                "%o8 = bitcast %obj, *i8",
                "store %o8, %c0",
                "%p = call @c_id(%o8)",
            ],
            FN_C_ID,
        ),
        AllocSite::CStack => unreachable!("c-stack cases use the callback scene"),
    };
    let mut out = format!("module {module_name}\n");
    if alloc == AllocSite::Global {
        out.push_str(GLOBAL_OBJ);
    }
    out.push('\n');
    out.push_str(acquire_support);
    out.push('\n');
    if !support.is_empty() {
        out.push_str(support);
        out.push('\n');
    }
    out.push_str("fn @main() {\nentry:\n");
    for line in acquire {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    for line in action {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("  ret\n}\n");
    out
}

/// A module where foreign code owns a live stack object and calls back into
/// an externally visible function carrying the action.
fn callback_scene(module_name: &str, action: &[String], support: &str) -> String {
    let mut out = format!("module {module_name}\n\n");
    if !support.is_empty() {
        out.push_str(support);
        out.push('\n');
    }
    out.push_str("fn @rust_body(%p: *i8 :raw) extern_visible {\nentry:\n");
    for line in action {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("  ret\n}\n\n");
    out.push_str(
        "fn @c_host() foreign {
entry:
  %buf = alloca {i64, i64}
  %c = const 77
  %b8 = bitcast %buf, *i8
  store %b8, %c
  call @rust_body(%b8)
  ret
}

fn @main() {
entry:
  call @c_host()
  ret
}
",
    );
    out
}

/// Benign c-stack flow through a declared-safe parameter: the prologue
/// check validates what foreign code passed in, dereferences are elided.
fn c_stack_benign_safe(module_name: &str) -> String {
    format!(
        "module {module_name}

fn @rust_read(%p: &{{i64, i64}} :safe) extern_visible {{
entry:
  %f0 = gep %p, 0, i64
  %v = load %f0, i64
  %f1 = gep %p, 8, i64
  %w = load %f1, i64
  ret
}}

fn @c_host() foreign {{
entry:
  %buf = alloca {{i64, i64}}
  %c = const 77
  %b8 = bitcast %buf, *i8
  store %b8, %c
  call @rust_read(%b8)
  ret
}}

fn @main() {{
entry:
  call @c_host()
  ret
}}
"
    )
}

/// Free-before-scope on a c-stack object: foreign code returns a pointer to
/// its own popped frame and safe code casts (or dereferences) it.
fn c_stack_dangling(module_name: &str, raw_use: bool) -> String {
    let action = if raw_use {
        "  %v = load %p, i64\n"
    } else {
        "  %s = castsafe %p, &{i64, i64}\n  %f0 = gep %s, 0, i64\n  %v = load %f0, i64\n"
    };
    format!(
        "module {module_name}

{FN_C_STACK_MAKE}
fn @main() {{
entry:
  %p = call @c_stack_make()
{action}  ret
}}
"
    )
}

fn rust_stack_dangling(module_name: &str, raw_use: bool) -> String {
    let action = if raw_use {
        "  %v = load %p, i64\n"
    } else {
        "  %s = castsafe %p, &{i64, i64}\n  %f0 = gep %s, 0, i64\n  %v = load %f0, i64\n"
    };
    format!(
        "module {module_name}

{FN_C_ID}
{FN_RUST_STACK_MAKE}
fn @main() {{
entry:
  %p0 = call @rust_stack_make()
  %p = call @c_id(%p0)
{action}  ret
}}
"
    )
}

/// Stack use-after-return caught by the check after the call: the callee
/// casts a pointer to its own local (valid at that point) and returns it as
/// a safe pointer; the frame pop invalidates it before the caller can look.
fn rust_stack_uar_return(module_name: &str) -> String {
    format!(
        "module {module_name}

{FN_C_ID}
fn @derive() -> &i64 :safe {{
entry:
  %n = alloca i64
  %c = const 42
  store %n, %c
  %n8 = bitcast %n, *i8
  %praw = call @c_id(%n8)
  %s = castsafe %praw, &i64
  ret %s
}}

fn @main() {{
entry:
  %b = call @derive()
  %v = load %b, i64
  ret
}}
"
    )
}

// ---- the matrix -------------------------------------------------------------

struct CaseSpec {
    alloc: AllocSite,
    dealloc: Option<AllocSite>,
    free_site: Option<FreeSite>,
    invalidation: Invalidation,
    perm: u8,
    text: String,
}

/// Generate all 45 cases in a fixed order. Output is byte-deterministic.
pub fn gen_corpus() -> Vec<CorpusCase> {
    let sites = [
        AllocSite::Global,
        AllocSite::CStack,
        AllocSite::CHeap,
        AllocSite::RustStack,
        AllocSite::RustHeap,
    ];
    let mut specs: Vec<CaseSpec> = Vec::new();

    // Benign flows: every allocation site, once through the safe boundary
    // and once staying raw. Heap variants free the object after its last
    // use, exercising the interceptor's happy path. 5 x 2 = 10 cases.
    for alloc in sites {
        for perm in [0u8, 1u8] {
            specs.push(CaseSpec {
                alloc,
                dealloc: None,
                free_site: None,
                invalidation: Invalidation::None,
                perm,
                text: benign_text(alloc, perm),
            });
        }
    }

    // Out-of-bounds arithmetic: every allocation site, invalidating either
    // before the cast (the boundary check must fire) or after it by
    // deriving past the object from the safe pointer (the derived pointer
    // degrades to raw and keeps its dereference check). 5 x 2 = 10 cases.
    // A cast-free raw OOB flow is omitted: with no boundary in play it is
    // behaviorally identical to the crafted raw-use cases below. No
    // deallocation occurs, so the dealloc dimension is vacuous here.
    for alloc in sites {
        for perm in [0u8, 1u8] {
            specs.push(CaseSpec {
                alloc,
                dealloc: None,
                free_site: None,
                invalidation: Invalidation::ArithmeticOob,
                perm,
                text: scene_text(alloc, Invalidation::ArithmeticOob, perm, None),
            });
        }
    }

    // Crafted pointers (provenance laundering through integers): every
    // allocation site, corrupting the pointer before a cast and before a
    // plain raw dereference. Crafting after the cast is behaviorally the
    // raw-use flow, so that permutation folds into perm 2. 5 x 2 = 10.
    for alloc in sites {
        for perm in [0u8, 2u8] {
            specs.push(CaseSpec {
                alloc,
                dealloc: None,
                free_site: None,
                invalidation: Invalidation::CraftedPtr,
                perm,
                text: scene_text(alloc, Invalidation::CraftedPtr, perm, None),
            });
        }
    }

    // Deallocation: 15 cases.
    //
    // Global x dealloc is excluded entirely: globals are never deallocated.
    //
    // C stack (2): the frame pop is the deallocation, so the dealloc site
    // equals the alloc site; freeing a stack object through a heap
    // deallocator is the interceptor's invalid-free error, not a flow of
    // this matrix. The during-scope permutation is excluded as infeasible:
    // a safe pointer to a C stack object cannot outlive the C frame, since
    // it would have to travel through a raw-only C signature and re-enter
    // through a fresh (checked) boundary.
    specs.push(CaseSpec {
        alloc: AllocSite::CStack,
        dealloc: Some(AllocSite::CStack),
        free_site: None,
        invalidation: Invalidation::Dealloc,
        perm: 0,
        text: c_stack_dangling("case_c_stack_dealloc_before_cast", false),
    });
    specs.push(CaseSpec {
        alloc: AllocSite::CStack,
        dealloc: Some(AllocSite::CStack),
        free_site: None,
        invalidation: Invalidation::Dealloc,
        perm: 2,
        text: c_stack_dangling("case_c_stack_dealloc_raw_use", true),
    });

    // Rust stack (3): free-before-scope (dangling local returned raw and
    // cast later), during-scope (use-after-return caught by the check after
    // the call), and the raw-use flow.
    specs.push(CaseSpec {
        alloc: AllocSite::RustStack,
        dealloc: Some(AllocSite::RustStack),
        free_site: None,
        invalidation: Invalidation::Dealloc,
        perm: 0,
        text: rust_stack_dangling("case_rust_stack_dealloc_before_cast", false),
    });
    specs.push(CaseSpec {
        alloc: AllocSite::RustStack,
        dealloc: Some(AllocSite::RustStack),
        free_site: None,
        invalidation: Invalidation::Dealloc,
        perm: 1,
        text: rust_stack_uar_return("case_rust_stack_dealloc_after_cast"),
    });
    specs.push(CaseSpec {
        alloc: AllocSite::RustStack,
        dealloc: Some(AllocSite::RustStack),
        free_site: None,
        invalidation: Invalidation::Dealloc,
        perm: 2,
        text: rust_stack_dangling("case_rust_stack_dealloc_raw_use", true),
    });

    // Heap (5 + 5): both heap allocation sites crossed with both freeing
    // languages for free-before-scope and free-during-scope. The raw-use
    // flow has no boundary, so the freeing language cannot interact with
    // the type system; one representative (the C free) per allocation site
    // suffices and the rust-free raw-use duplicates are excluded.
    for alloc in [AllocSite::CHeap, AllocSite::RustHeap] {
        for free_site in [FreeSite::CFree, FreeSite::RustFree] {
            for perm in [0u8, 1u8] {
                let dealloc = Some(match free_site {
                    FreeSite::CFree => AllocSite::CHeap,
                    FreeSite::RustFree => AllocSite::RustHeap,
                });
                specs.push(CaseSpec {
                    alloc,
                    dealloc,
                    free_site: Some(free_site),
                    invalidation: Invalidation::Dealloc,
                    perm,
                    text: scene_text(alloc, Invalidation::Dealloc, perm, Some(free_site)),
                });
            }
        }
        specs.push(CaseSpec {
            alloc,
            dealloc: Some(AllocSite::CHeap),
            free_site: Some(FreeSite::CFree),
            invalidation: Invalidation::Dealloc,
            perm: 2,
            text: scene_text(alloc, Invalidation::Dealloc, 2, Some(FreeSite::CFree)),
        });
    }

    specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| finish_case(i + 1, spec))
        .collect()
}

fn perm_slug(invalidation: Invalidation, perm: u8) -> &'static str {
    match (invalidation, perm) {
        (Invalidation::None, 0) => "safe_use",
        (Invalidation::None, 1) => "raw_use",
        (_, 0) => "before_cast",
        (_, 1) => "after_cast",
        _ => "raw_use",
    }
}

fn benign_text(alloc: AllocSite, perm: u8) -> String {
    match (alloc, perm) {
        (AllocSite::CStack, 0) => c_stack_benign_safe("case_c_stack_none_safe_use"),
        (AllocSite::CStack, 1) => {
            let action = action_lines(Invalidation::None, 1, None);
            callback_scene("case_c_stack_none_raw_use", &action, "")
        }
        _ => {
            let mut action = action_lines(Invalidation::None, perm, None);
            let support = match alloc {
                AllocSite::CHeap => {
                    action.push("call @c_free_it(%p)".to_string());
                    freer_decls(FreeSite::CFree)
                }
                AllocSite::RustHeap => {
                    action.push("call @rust_free_it(%p)".to_string());
                    freer_decls(FreeSite::RustFree)
                }
                _ => String::new(),
            };
            let name = format!(
                "case_{}_none_{}",
                alloc.slug(),
                perm_slug(Invalidation::None, perm)
            );
            inline_scene(&name, alloc, &action, &support)
        }
    }
}

fn scene_text(
    alloc: AllocSite,
    invalidation: Invalidation,
    perm: u8,
    free_site: Option<FreeSite>,
) -> String {
    let action = action_lines(invalidation, perm, free_site);
    let support = free_site.map(freer_decls).unwrap_or_default();
    let mut name = format!(
        "case_{}_{}_{}",
        alloc.slug(),
        invalidation.slug(),
        perm_slug(invalidation, perm)
    );
    if let Some(f) = free_site {
        name = format!("{name}_{}", f.slug());
    }
    if alloc == AllocSite::CStack {
        callback_scene(&name, &action, &support)
    } else {
        inline_scene(&name, alloc, &action, &support)
    }
}

fn finish_case(index: usize, spec: CaseSpec) -> CorpusCase {
    // Normalize: parse, validate, print, and re-parse so the shipped text is
    // canonical and the module carries locations from that exact text.
    let parsed = text::load_module(&spec.text, "corpus.sir")
        .unwrap_or_else(|e| panic!("corpus case {index} does not validate: {e}\n{}", spec.text));
    let normalized = text::print_module(&parsed);
    let file = format!("{}.sir", parsed.name);
    let module = text::load_module(&normalized, &file)
        .unwrap_or_else(|e| panic!("normalized corpus case {index} does not validate: {e}"));

    let expected = if spec.invalidation == Invalidation::None {
        Expected::Clean
    } else {
        Expected::Violation
    };
    let heap_alloc = matches!(spec.alloc, AllocSite::CHeap | AllocSite::RustHeap);
    let free_during_scope =
        spec.invalidation == Invalidation::Dealloc && spec.perm == 1 && heap_alloc;
    let cast_boundary_case = spec.perm == 0
        && spec.invalidation != Invalidation::None
        && module.functions.iter().any(|f| {
            f.blocks.iter().any(|b| {
                b.instrs
                    .iter()
                    .any(|i| matches!(i.op, crate::ir::Op::CastToSafe { .. }))
            })
        });

    let id = format!("{index:02}_{}", module.name.trim_start_matches("case_"));
    CorpusCase {
        index,
        id,
        alloc_site: spec.alloc,
        dealloc_site: spec.dealloc,
        free_site: spec.free_site,
        invalidation: spec.invalidation,
        perm: spec.perm,
        expected,
        free_during_scope,
        cast_boundary_case,
        text: normalized,
        module,
    }
}

/// Manifest entry describing one case on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMeta {
    pub index: usize,
    pub id: String,
    pub file: String,
    pub alloc_site: AllocSite,
    pub dealloc_site: Option<AllocSite>,
    pub free_site: Option<FreeSite>,
    pub invalidation: Invalidation,
    pub perm: u8,
    pub expected: Expected,
    pub free_during_scope: bool,
    pub cast_boundary_case: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("case {id}: {source}")]
    Load {
        id: String,
        #[source]
        source: crate::text::LoadError,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CorpusIoError + '_ {
    move |source| CorpusIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write all cases as `.sir` files plus a `manifest.json` into `dir`.
pub fn save_corpus(cases: &[CorpusCase], dir: &Path) -> Result<(), CorpusIoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Vec::with_capacity(cases.len());
    for case in cases {
        let file = format!("{}.sir", case.id);
        let path = dir.join(&file);
        std::fs::write(&path, &case.text).map_err(io_err(&path))?;
        manifest.push(CaseMeta {
            index: case.index,
            id: case.id.clone(),
            file,
            alloc_site: case.alloc_site,
            dealloc_site: case.dealloc_site,
            free_site: case.free_site,
            invalidation: case.invalidation,
            perm: case.perm,
            expected: case.expected,
            free_during_scope: case.free_during_scope,
            cast_boundary_case: case.cast_boundary_case,
        });
    }
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))
}

/// Read a corpus directory written by `save_corpus` back into cases.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusCase>, CorpusIoError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Vec<CaseMeta> =
        serde_json::from_str(&manifest_text).map_err(|source| CorpusIoError::Manifest {
            path: manifest_path.display().to_string(),
            source,
        })?;
    let mut cases = Vec::with_capacity(manifest.len());
    for meta in manifest {
        let path = dir.join(&meta.file);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let module =
            text::load_module(&text, &meta.file).map_err(|source| CorpusIoError::Load {
                id: meta.id.clone(),
                source,
            })?;
        cases.push(CorpusCase {
            index: meta.index,
            id: meta.id,
            alloc_site: meta.alloc_site,
            dealloc_site: meta.dealloc_site,
            free_site: meta.free_site,
            invalidation: meta.invalidation,
            perm: meta.perm,
            expected: meta.expected,
            free_during_scope: meta.free_during_scope,
            cast_boundary_case: meta.cast_boundary_case,
            text,
            module,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_has_45_cases_with_35_10_split() {
        let corpus = gen_corpus();
        assert_eq!(corpus.len(), 45);
        let violations = corpus
            .iter()
            .filter(|c| c.expected == Expected::Violation)
            .count();
        let clean = corpus
            .iter()
            .filter(|c| c.expected == Expected::Clean)
            .count();
        assert_eq!(violations, 35);
        assert_eq!(clean, 10);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = gen_corpus();
        let b = gen_corpus();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text, "case {} not byte-deterministic", x.id);
        }
    }

    #[test]
    fn all_cases_validate_and_stay_small() {
        for case in gen_corpus() {
            let total: usize = case.module.functions.iter().map(|f| f.instr_count()).sum();
            assert!(total <= 60, "case {} has {total} instructions", case.id);
        }
    }

    #[test]
    fn benign_cases_are_exactly_the_none_invalidation_ones() {
        for case in gen_corpus() {
            assert_eq!(
                case.expected == Expected::Clean,
                case.invalidation == Invalidation::None,
                "case {}",
                case.id
            );
        }
    }

    #[test]
    fn pinned_example_case_exists() {
        // Rust-heap object, freed by C, deallocation before the cast.
        let corpus = gen_corpus();
        let case = corpus
            .iter()
            .find(|c| {
                c.alloc_site == AllocSite::RustHeap
                    && c.free_site == Some(FreeSite::CFree)
                    && c.invalidation == Invalidation::Dealloc
                    && c.perm == 0
            })
            .expect("matrix must include the rust-heap/c-free/before-cast case");
        assert_eq!(case.expected, Expected::Violation);
        assert!(case.cast_boundary_case);
    }

    #[test]
    fn free_during_scope_cases_are_the_four_heap_after_cast_ones() {
        let corpus = gen_corpus();
        let fds: Vec<&CorpusCase> = corpus.iter().filter(|c| c.free_during_scope).collect();
        assert_eq!(fds.len(), 4);
        for case in fds {
            assert!(matches!(
                case.alloc_site,
                AllocSite::CHeap | AllocSite::RustHeap
            ));
            assert_eq!(case.perm, 1);
            assert_eq!(case.invalidation, Invalidation::Dealloc);
        }
    }

    #[test]
    fn unique_module_names_and_ids() {
        let corpus = gen_corpus();
        let mut names: Vec<&str> = corpus.iter().map(|c| c.module.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 45, "module names must be unique");
    }

    #[test]
    fn corpus_directory_round_trip() {
        let corpus = gen_corpus();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.text, b.text);
            assert_eq!(a.expected, b.expected);
            assert_eq!(a.free_during_scope, b.free_during_scope);
        }
    }
}
