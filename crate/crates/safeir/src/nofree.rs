//! Bottom-up nofree analysis over the call graph, with annotations persisted
//! across compilation units, plus the heap-check insertion that closes the
//! free-during-scope gap left by check hoisting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::instrument::{CheckSite, PassOrigin};
use crate::ir::*;
use crate::typeflow::KindMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Verdict {
    Nofree,
    Mayfree,
}

impl Verdict {
    fn keyword(self) -> &'static str {
        match self {
            Verdict::Nofree => "NOFREE",
            Verdict::Mayfree => "MAYFREE",
        }
    }

    fn parse(s: &str) -> Option<Verdict> {
        match s {
            "NOFREE" => Some(Verdict::Nofree),
            "MAYFREE" => Some(Verdict::Mayfree),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Defined,
    KnownDealloc,
    External { nofree: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub kind: NodeKind,
    pub callees: BTreeSet<String>,
    pub has_unknown_callee: bool,
    pub has_indirect_call: bool,
    /// Contains a `heapfree` instruction.
    pub has_direct_free: bool,
    pub declared_nofree: bool,
}

impl NodeInfo {
    fn new(kind: NodeKind) -> Self {
        NodeInfo {
            kind,
            callees: BTreeSet::new(),
            has_unknown_callee: false,
            has_indirect_call: false,
            has_direct_free: false,
            declared_nofree: false,
        }
    }
}

/// Call graph of one compilation unit. Nodes are function names; externals
/// and declaration-only deallocators appear as boundary nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallGraph {
    pub unit: String,
    pub nodes: BTreeMap<String, NodeInfo>,
}

impl CallGraph {
    pub fn node(&self, name: &str) -> Option<&NodeInfo> {
        self.nodes.get(name)
    }
}

pub fn build_call_graph(module: &ProgramModule) -> CallGraph {
    let mut nodes: BTreeMap<String, NodeInfo> = BTreeMap::new();
    for e in &module.externals {
        nodes.insert(
            e.name.clone(),
            NodeInfo::new(NodeKind::External { nofree: e.nofree }),
        );
    }
    for f in &module.functions {
        let kind = if f.attrs.known_dealloc {
            NodeKind::KnownDealloc
        } else {
            NodeKind::Defined
        };
        let mut info = NodeInfo::new(kind);
        info.declared_nofree = f.attrs.nofree_declared;
        nodes.insert(f.name.clone(), info);
    }
    for f in &module.functions {
        let mut callees = BTreeSet::new();
        let mut unknown = false;
        let mut indirect = false;
        let mut direct_free = false;
        for block in &f.blocks {
            for instr in &block.instrs {
                match &instr.op {
                    Op::HeapFree { .. } => direct_free = true,
                    Op::Call {
                        callee: Callee::Indirect(_),
                        ..
                    } => indirect = true,
                    Op::Call {
                        callee: Callee::Direct(name),
                        ..
                    } => {
                        if nodes.contains_key(name) {
                            callees.insert(name.clone());
                        } else {
                            unknown = true;
                        }
                    }
                    _ => {}
                }
            }
        }
        let info = nodes.get_mut(&f.name).expect("node inserted above");
        info.callees = callees;
        info.has_unknown_callee = unknown;
        info.has_indirect_call = indirect;
        info.has_direct_free = direct_free;
    }
    CallGraph {
        unit: module.name.clone(),
        nodes,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbEntry {
    pub verdict: Verdict,
    pub unit: String,
}

/// Persisted nofree annotations, threaded between compilation units.
/// Entries record which unit produced them: recompiling a unit replaces its
/// own entries, while clashes across units merge conservatively (a verdict
/// is never upgraded from MAYFREE to NOFREE by merging).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NofreeDb {
    entries: BTreeMap<String, DbEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl NofreeDb {
    pub fn get(&self, name: &str) -> Option<Verdict> {
        self.entries.get(name).map(|e| e.verdict)
    }

    /// Conservative query: a name with no entry may free.
    pub fn may_free(&self, name: &str) -> bool {
        self.get(name) != Some(Verdict::Nofree)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DbEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, name: &str, verdict: Verdict, unit: &str) {
        self.entries.insert(
            name.to_string(),
            DbEntry {
                verdict,
                unit: unit.to_string(),
            },
        );
    }

    /// Record one unit's freshly computed verdicts: the unit's previous
    /// entries are replaced, entries from other units merge conservatively.
    pub fn absorb_unit(&mut self, unit: &str, results: &BTreeMap<String, Verdict>) {
        self.entries
            .retain(|name, e| e.unit != unit || results.contains_key(name));
        for (name, verdict) in results {
            match self.entries.get_mut(name) {
                Some(existing) if existing.unit == unit => {
                    existing.verdict = *verdict;
                }
                Some(existing) => {
                    if *verdict == Verdict::Mayfree {
                        existing.verdict = Verdict::Mayfree;
                    }
                }
                None => {
                    self.entries.insert(
                        name.clone(),
                        DbEntry {
                            verdict: *verdict,
                            unit: unit.to_string(),
                        },
                    );
                }
            }
        }
    }

    /// Merge another database in; disagreements resolve to MAYFREE.
    pub fn merge(&mut self, other: &NofreeDb) {
        for (name, entry) in &other.entries {
            match self.entries.get_mut(name) {
                Some(existing) => {
                    if existing.verdict != entry.verdict {
                        existing.verdict = Verdict::Mayfree;
                    }
                }
                None => {
                    self.entries.insert(name.clone(), entry.clone());
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entry) in &self.entries {
            out.push_str(name);
            out.push('\t');
            out.push_str(entry.verdict.keyword());
            out.push('\t');
            out.push_str(&entry.unit);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<NofreeDb, DbError> {
        let mut db = NofreeDb::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (name, verdict, unit) =
                match (parts.next(), parts.next(), parts.next(), parts.next()) {
                    (Some(n), Some(v), Some(u), None) => (n, v, u),
                    _ => {
                        return Err(DbError::Parse {
                            path: path.to_string(),
                            line: i + 1,
                            message: "expected 'name<TAB>verdict<TAB>unit'".to_string(),
                        })
                    }
                };
            let verdict = Verdict::parse(verdict).ok_or_else(|| DbError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: format!("unknown verdict '{verdict}'"),
            })?;
            db.insert(name, verdict, unit);
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        std::fs::write(path, self.to_text()).map_err(|source| DbError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<NofreeDb, DbError> {
        let text = std::fs::read_to_string(path).map_err(|source| DbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        NofreeDb::from_text(&text, &path.display().to_string())
    }

    /// Load, returning an empty database when the file does not exist yet.
    pub fn load_or_default(path: &Path) -> Result<NofreeDb, DbError> {
        if path.exists() {
            NofreeDb::load(path)
        } else {
            Ok(NofreeDb::default())
        }
    }
}

/// Bottom-up SCC pass: a function is NOFREE iff nothing in its SCC calls a
/// known deallocator, a MAYFREE callee (externals included), an unknown or
/// indirect callee, or frees directly. The whole SCC shares one verdict.
/// Results for this unit's functions merge into (a copy of) `db`.
pub fn compute_nofree(graph: &CallGraph, db: &NofreeDb) -> NofreeDb {
    // Boundary verdicts that need no analysis.
    let mut verdicts: HashMap<&str, Verdict> = HashMap::new();
    let mut analyzed: Vec<&str> = Vec::new();
    for (name, info) in &graph.nodes {
        match info.kind {
            NodeKind::KnownDealloc => {
                verdicts.insert(name, Verdict::Mayfree);
            }
            NodeKind::External { nofree } => {
                let v = if nofree {
                    Verdict::Nofree
                } else {
                    db.get(name).unwrap_or(Verdict::Mayfree)
                };
                verdicts.insert(name, v);
            }
            NodeKind::Defined => {
                if info.declared_nofree {
                    verdicts.insert(name, Verdict::Nofree);
                } else {
                    analyzed.push(name);
                }
            }
        }
    }

    // SCCs of the analyzed subgraph, emitted callees-first.
    let index_of: HashMap<&str, usize> =
        analyzed.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adj: Vec<Vec<usize>> = analyzed
        .iter()
        .map(|n| {
            graph.nodes[*n]
                .callees
                .iter()
                .filter_map(|c| index_of.get(c.as_str()).copied())
                .collect()
        })
        .collect();
    let sccs = tarjan_sccs(analyzed.len(), &adj);

    for scc in &sccs {
        let members: HashSet<usize> = scc.iter().copied().collect();
        let mut verdict = Verdict::Nofree;
        'scan: for &i in scc {
            let info = &graph.nodes[analyzed[i]];
            if info.has_direct_free || info.has_unknown_callee || info.has_indirect_call {
                verdict = Verdict::Mayfree;
                break;
            }
            for callee in &info.callees {
                if let Some(&j) = index_of.get(callee.as_str()) {
                    if members.contains(&j) {
                        continue; // intra-SCC edge
                    }
                }
                // Cross-SCC or boundary callee: its verdict is already known.
                let v = verdicts
                    .get(callee.as_str())
                    .copied()
                    .unwrap_or(Verdict::Mayfree);
                if v == Verdict::Mayfree {
                    verdict = Verdict::Mayfree;
                    break 'scan;
                }
            }
        }
        for &i in scc {
            verdicts.insert(analyzed[i], verdict);
        }
    }

    let mut results: BTreeMap<String, Verdict> = BTreeMap::new();
    for (name, info) in &graph.nodes {
        if matches!(info.kind, NodeKind::Defined | NodeKind::KnownDealloc) {
            results.insert(name.clone(), verdicts[name.as_str()]);
        }
    }
    let mut out = db.clone();
    out.absorb_unit(&graph.unit, &results);
    out
}

/// Iterative Tarjan strongly connected components. SCCs come out in reverse
/// topological order of the condensation: callees before callers.
fn tarjan_sccs(n: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut index: Vec<Option<usize>> = vec![None; n];
    let mut lowlink: Vec<usize> = vec![0; n];
    let mut on_stack: Vec<bool> = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut sccs: Vec<Vec<usize>> = Vec::new();

    for start in 0..n {
        if index[start].is_some() {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(start, 0)];
        index[start] = Some(next_index);
        lowlink[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (v, ref mut cursor)) = work.last_mut() {
            if *cursor < adj[v].len() {
                let w = adj[v][*cursor];
                *cursor += 1;
                if index[w].is_none() {
                    index[w] = Some(next_index);
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w].expect("visited"));
                }
            } else {
                work.pop();
                if let Some(&mut (parent, _)) = work.last_mut() {
                    lowlink[parent] = lowlink[parent].min(lowlink[v]);
                }
                if lowlink[v] == index[v].expect("visited") {
                    let mut scc = Vec::new();
                    loop {
                        let w = stack.pop().expect("scc member on stack");
                        on_stack[w] = false;
                        scc.push(w);
                        if w == v {
                            break;
                        }
                    }
                    sccs.push(scc);
                }
            }
        }
    }
    sccs
}

/// For each block, the set of block indices reachable by following one or
/// more CFG edges (back edges included). A block is in its own set iff it
/// sits on a cycle.
pub fn block_reachability(func: &FunctionDef) -> Vec<HashSet<usize>> {
    let n = func.blocks.len();
    let idx: HashMap<&str, usize> = func
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.as_str(), i))
        .collect();
    let succs: Vec<Vec<usize>> = func
        .blocks
        .iter()
        .map(|b| {
            b.successors()
                .iter()
                .filter_map(|s| idx.get(s).copied())
                .collect()
        })
        .collect();
    (0..n)
        .map(|start| {
            let mut seen: HashSet<usize> = HashSet::new();
            let mut work: Vec<usize> = succs[start].clone();
            while let Some(b) = work.pop() {
                if seen.insert(b) {
                    work.extend(succs[b].iter().copied());
                }
            }
            seen
        })
        .collect()
}

/// HEAP sites for one function: a check in front of every safe-classified
/// dereference that is reachable from a call that may (transitively) free
/// heap memory. Reachability runs on the block graph including back edges,
/// respecting intra-block ordering; one site per dereference however many
/// deallocation points reach it.
///
/// Only `Safe`-classified addresses are guarded: compiler-generated stack
/// handles (`NoPtr`) cannot be heap-freed in this model.
pub fn insert_heap_checks(
    module: &ProgramModule,
    func: &FunctionDef,
    db: &NofreeDb,
    km: &KindMap,
) -> Vec<CheckSite> {
    if func.attrs.foreign {
        return Vec::new();
    }
    let shapes = collect_value_shapes(module, func);

    // Deallocation points: calls whose callee may free, plus direct frees.
    let mut dealloc_points: Vec<(usize, usize)> = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            let may_free = match &instr.op {
                Op::HeapFree { .. } => true,
                Op::Call {
                    callee: Callee::Indirect(_),
                    ..
                } => true,
                Op::Call {
                    callee: Callee::Direct(name),
                    ..
                } => match module.external(name) {
                    // A nofree-declared external needs no database entry.
                    Some(decl) => !decl.nofree && db.may_free(name),
                    None => db.may_free(name),
                },
                _ => false,
            };
            if may_free {
                dealloc_points.push((bi, ii));
            }
        }
    }
    if dealloc_points.is_empty() {
        return Vec::new();
    }

    let reach = block_reachability(func);
    let mut sites = Vec::new();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            let addr = match &instr.op {
                Op::Load { addr, .. } | Op::Store { addr, .. } => addr,
                _ => continue,
            };
            if km.get(addr) != Some(ValueKind::Pointer(PtrKind::Safe)) {
                continue;
            }
            let reached = dealloc_points
                .iter()
                .any(|&(dbi, dii)| (dbi == bi && dii < ii) || reach[dbi].contains(&bi));
            if !reached {
                continue;
            }
            let size = match &instr.op {
                Op::Load { shape, .. } => shape.byte_size(),
                Op::Store { value, .. } => shapes.get(value).map(|s| s.byte_size()).unwrap_or(1),
                _ => unreachable!(),
            };
            sites.push(CheckSite {
                kind: CheckKind::Heap,
                function: func.name.clone(),
                block: bi,
                instr: ii,
                value: addr.clone(),
                size: size.max(1),
                origin: PassOrigin::HeapTemporal,
            });
        }
    }
    sites
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::load_module;
    use crate::typeflow::infer_kinds_in;

    #[test]
    fn leaf_only_module_has_edgeless_graph() {
        let text = "module m

fn @a() {
entry:
  ret
}

fn @b() -> i64 {
entry:
  %c = const 1
  ret %c
}
";
        let m = load_module(text, "t.sir").unwrap();
        let g = build_call_graph(&m);
        assert!(g.nodes.values().all(|n| n.callees.is_empty()));
    }

    #[test]
    fn chain_to_dealloc_has_expected_edges() {
        let text = "module m

fn @free(%p: *i8 :raw) known_dealloc {}

fn @b(%p: *i8 :raw) {
entry:
  call @free(%p)
  ret
}

fn @a(%p: *i8 :raw) {
entry:
  call @b(%p)
  ret
}
";
        let m = load_module(text, "t.sir").unwrap();
        let g = build_call_graph(&m);
        assert!(g.nodes["a"].callees.contains("b"));
        assert!(g.nodes["b"].callees.contains("free"));
        assert_eq!(g.nodes["free"].kind, NodeKind::KnownDealloc);
        let db = compute_nofree(&g, &NofreeDb::default());
        assert_eq!(db.get("a"), Some(Verdict::Mayfree));
        assert_eq!(db.get("b"), Some(Verdict::Mayfree));
        assert_eq!(db.get("free"), Some(Verdict::Mayfree));
    }

    #[test]
    fn indirect_call_flags_node_and_poisons_verdict() {
        let text = "module m

fn @f(%fp: fnptr :noptr) {
entry:
  call %fp()
  ret
}
";
        let m = load_module(text, "t.sir").unwrap();
        let g = build_call_graph(&m);
        assert!(g.nodes["f"].has_indirect_call);
        let db = compute_nofree(&g, &NofreeDb::default());
        assert_eq!(db.get("f"), Some(Verdict::Mayfree));
    }

    #[test]
    fn pure_arithmetic_leaf_is_nofree() {
        let text = "module m

fn @leaf(%a: i64) -> i64 {
entry:
  %b = add %a, %a
  ret %b
}
";
        let m = load_module(text, "t.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&m), &NofreeDb::default());
        assert_eq!(db.get("leaf"), Some(Verdict::Nofree));
    }

    #[test]
    fn mutually_recursive_pair_with_free_is_jointly_mayfree() {
        let text = "module m

fn @free(%p: *i8 :raw) known_dealloc {}

fn @even(%p: *i8 :raw, %c: i1) {
entry:
  condbr %c, stop, go
stop:
  ret
go:
  call @odd(%p, %c)
  ret
}

fn @odd(%p: *i8 :raw, %c: i1) {
entry:
  condbr %c, stop, go
stop:
  call @free(%p)
  ret
go:
  call @even(%p, %c)
  ret
}
";
        let m = load_module(text, "t.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&m), &NofreeDb::default());
        assert_eq!(db.get("even"), Some(Verdict::Mayfree));
        assert_eq!(db.get("odd"), Some(Verdict::Mayfree));
    }

    #[test]
    fn recursive_pair_without_free_is_nofree() {
        let text = "module m

fn @even(%c: i1) {
entry:
  condbr %c, stop, go
stop:
  ret
go:
  call @odd(%c)
  ret
}

fn @odd(%c: i1) {
entry:
  call @even(%c)
  ret
}
";
        let m = load_module(text, "t.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&m), &NofreeDb::default());
        assert_eq!(db.get("even"), Some(Verdict::Nofree));
        assert_eq!(db.get("odd"), Some(Verdict::Nofree));
    }

    #[test]
    fn external_without_annotation_is_conservatively_mayfree() {
        let text = "module m
extern @mystery
extern @pure nofree

fn @f() {
entry:
  call @mystery()
  ret
}

fn @g() {
entry:
  call @pure()
  ret
}
";
        let m = load_module(text, "t.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&m), &NofreeDb::default());
        assert_eq!(db.get("f"), Some(Verdict::Mayfree));
        assert_eq!(db.get("g"), Some(Verdict::Nofree));
    }

    #[test]
    fn db_round_trip_and_merge() {
        let mut db = NofreeDb::default();
        db.insert("a", Verdict::Nofree, "u1");
        db.insert("b", Verdict::Mayfree, "u1");
        db.insert("c", Verdict::Nofree, "u2");
        let text = db.to_text();
        let back = NofreeDb::from_text(&text, "db").unwrap();
        assert_eq!(db, back);

        let mut left = NofreeDb::default();
        left.insert("f", Verdict::Nofree, "u1");
        let mut right = NofreeDb::default();
        right.insert("f", Verdict::Mayfree, "u2");
        left.merge(&right);
        assert_eq!(left.get("f"), Some(Verdict::Mayfree));
    }

    #[test]
    fn malformed_db_line_reports_location() {
        let err = NofreeDb::from_text("a\tNOFREE\tu\nbroken line\n", "db.tsv").unwrap_err();
        match err {
            DbError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn db_threading_between_units_marks_caller_nofree() {
        let unit_a = "module unit_a

fn @helper(%a: i64) -> i64 {
entry:
  %b = add %a, %a
  ret %b
}
";
        let unit_b = "module unit_b
extern @helper

fn @caller() {
entry:
  %c = const 1
  %r = call @helper(%c)
  ret
}
";
        let a = load_module(unit_a, "a.sir").unwrap();
        let b = load_module(unit_b, "b.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&a), &NofreeDb::default());
        let db = compute_nofree(&build_call_graph(&b), &db);
        assert_eq!(db.get("caller"), Some(Verdict::Nofree));

        // Without the threaded annotations the external is assumed to free.
        let cold = compute_nofree(&build_call_graph(&b), &NofreeDb::default());
        assert_eq!(cold.get("caller"), Some(Verdict::Mayfree));
    }

    fn heap_sites_for(text: &str, func: &str) -> Vec<CheckSite> {
        let m = load_module(text, "t.sir").unwrap();
        let db = compute_nofree(&build_call_graph(&m), &NofreeDb::default());
        let f = m.function(func).unwrap();
        let km = infer_kinds_in(&m, f).unwrap();
        insert_heap_checks(&m, f, &db, &km)
    }

    const FREER: &str = "
fn @free(%p: *i8 :raw) known_dealloc {}

fn @freer(%p: *i8 :raw) {
entry:
  call @free(%p)
  ret
}
";

    #[test]
    fn deref_after_mayfree_call_gets_heap_site() {
        let text = format!(
            "module m
{FREER}
fn @f(%r: *i64 :raw, %alias: *i8 :raw) {{
entry:
  %s = castsafe %r, &i64
  call @freer(%alias)
  %v = load %s, i64
  ret
}}
"
        );
        let sites = heap_sites_for(&text, "f");
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].value, "s");
        assert_eq!(sites[0].kind, CheckKind::Heap);
    }

    #[test]
    fn deref_before_the_only_mayfree_call_gets_no_site() {
        let text = format!(
            "module m
{FREER}
fn @f(%r: *i64 :raw, %alias: *i8 :raw) {{
entry:
  %s = castsafe %r, &i64
  %v = load %s, i64
  call @freer(%alias)
  ret
}}
"
        );
        assert!(heap_sites_for(&text, "f").is_empty());
    }

    #[test]
    fn loop_back_edge_makes_earlier_deref_reachable() {
        // Dereference textually precedes the deallocating call, but both sit
        // in one loop body: the call reaches the dereference along the back
        // edge, so it needs a heap check.
        let text = format!(
            "module m
{FREER}
fn @f(%r: *i64 :raw, %alias: *i8 :raw, %c: i1) {{
entry:
  %s = castsafe %r, &i64
  br loop
loop:
  %v = load %s, i64
  call @freer(%alias)
  condbr %c, loop, exit
exit:
  ret
}}
"
        );
        let sites = heap_sites_for(&text, "f");
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].value, "s");
    }

    #[test]
    fn raw_and_noptr_dereferences_are_not_guarded() {
        let text = format!(
            "module m
{FREER}
fn @f(%r: *i64 :raw, %alias: *i8 :raw) {{
entry:
  %slot = alloca {{i64, i64}}
  call @freer(%alias)
  %v = load %r, i64
  %w = gep %slot, 0, i64
  %x = load %w, i64
  ret
}}
"
        );
        // %r keeps its deref check (raw); %w is a compiler-generated stack
        // handle, which heap frees cannot kill.
        assert!(heap_sites_for(&text, "f").is_empty());
    }

    #[test]
    fn one_site_per_dereference_despite_many_reaching_calls() {
        let text = format!(
            "module m
{FREER}
fn @f(%r: *i64 :raw, %alias: *i8 :raw) {{
entry:
  %s = castsafe %r, &i64
  call @freer(%alias)
  call @freer(%alias)
  heapfree %alias
  %v = load %s, i64
  ret
}}
"
        );
        let sites = heap_sites_for(&text, "f");
        assert_eq!(sites.len(), 1);
    }

    #[test]
    fn nofree_declared_external_calls_do_not_force_heap_checks() {
        let text = "module m
extern @pure nofree
extern @mystery

fn @f(%r: *i64 :raw) {
entry:
  %s = castsafe %r, &i64
  call @pure()
  %v = load %s, i64
  ret
}

fn @g(%r: *i64 :raw) {
entry:
  %s = castsafe %r, &i64
  call @mystery()
  %v = load %s, i64
  ret
}
";
        let sites = heap_sites_for(text, "f");
        assert!(sites.is_empty(), "trusted-nofree external must not force a heap check");
        let sites = heap_sites_for(text, "g");
        assert_eq!(sites.len(), 1, "unknown external is conservatively deallocating");
    }

    #[test]
    fn adding_call_edges_never_upgrades_a_verdict() {
        // Random graphs: adding one edge may only move verdicts towards
        // MAYFREE.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6010);
        for _ in 0..200 {
            let n = rng.gen_range(2..30usize);
            let names: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
            let mut nodes = BTreeMap::new();
            for name in &names {
                let mut info = NodeInfo::new(NodeKind::Defined);
                info.has_direct_free = rng.gen_bool(0.15);
                nodes.insert(name.clone(), info);
            }
            for name in &names {
                let degree = rng.gen_range(0..3);
                let mut callees = BTreeSet::new();
                for _ in 0..degree {
                    callees.insert(names[rng.gen_range(0..n)].clone());
                }
                nodes.get_mut(name).expect("node").callees = callees;
            }
            let graph = CallGraph { unit: "u".to_string(), nodes };
            let before = compute_nofree(&graph, &NofreeDb::default());

            let mut extended = graph.clone();
            let from = &names[rng.gen_range(0..n)];
            let to = names[rng.gen_range(0..n)].clone();
            extended.nodes.get_mut(from).expect("node").callees.insert(to);
            let after = compute_nofree(&extended, &NofreeDb::default());

            for name in &names {
                if before.get(name) == Some(Verdict::Mayfree) {
                    assert_eq!(
                        after.get(name),
                        Some(Verdict::Mayfree),
                        "adding an edge upgraded @{name}"
                    );
                }
            }
        }
    }
}
