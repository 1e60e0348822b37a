//! Intraprocedural pointer-kind dataflow: seed kinds from declarations,
//! forward them through kind-transparent instructions, and answer the
//! safe-pointer query used by the instrumentation passes.
//!
//! The analysis is strictly per-function and never consults other function
//! bodies; cross-function knowledge enters only through declared signatures.

use std::collections::HashMap;

use crate::ir::*;

/// Total map from value name to kind for one function. Every value the
/// function defines (plus its parameters) has an entry once `infer_kinds`
/// succeeds: a whitelist, never a default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KindMap {
    kinds: HashMap<String, ValueKind>,
}

impl KindMap {
    pub fn get(&self, value: &str) -> Option<ValueKind> {
        self.kinds.get(value).copied()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ValueKind)> {
        self.kinds.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Histogram of kinds over all classified values.
    pub fn histogram(&self) -> KindHistogram {
        let mut h = KindHistogram::default();
        for (_, k) in self.iter() {
            match k {
                ValueKind::Pointer(PtrKind::Safe) => h.safe += 1,
                ValueKind::Pointer(PtrKind::Raw) => h.raw += 1,
                ValueKind::Pointer(PtrKind::NoPtr) => h.noptr += 1,
                ValueKind::NonPointer => h.nonptr += 1,
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct KindHistogram {
    pub safe: usize,
    pub raw: usize,
    pub noptr: usize,
    pub nonptr: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("in @{function}: no derivable kind for value %{value}")]
    Unclassified { function: String, value: String },
    #[error("in @{function}: %{value} is not classified")]
    UnknownValue { function: String, value: String },
}

/// Kind of a `gep` result.
///
/// A raw base always yields raw. A safe or compiler-generated base keeps its
/// kind only when the static offset provably stays inside the base object:
/// `0 <= offset` and `offset + access_size <= byte_size(base_shape)`.
/// Dynamic offsets and out-of-bounds statics conservatively downgrade to raw.
pub fn derive_gep_kind(
    base_kind: PtrKind,
    base_shape: &TypeShape,
    offset: &GepOffset,
    access_size: u64,
) -> PtrKind {
    if base_kind == PtrKind::Raw {
        return PtrKind::Raw;
    }
    match offset {
        GepOffset::Static(o) if *o >= 0 => {
            let o = *o as u64;
            if o.checked_add(access_size)
                .map(|end| end <= base_shape.byte_size())
                .unwrap_or(false)
            {
                base_kind
            } else {
                PtrKind::Raw
            }
        }
        _ => PtrKind::Raw,
    }
}

/// True iff dereferences through `value` need no dynamic check.
pub fn is_safe_pointer(km: &KindMap, function: &str, value: &str) -> Result<bool, AnalysisError> {
    match km.get(value) {
        Some(ValueKind::Pointer(k)) => Ok(k.is_checked_statically()),
        Some(ValueKind::NonPointer) => Ok(true),
        None => Err(AnalysisError::UnknownValue {
            function: function.to_string(),
            value: value.to_string(),
        }),
    }
}

/// Infer kinds for every value of `func`, iterating transparent forwards
/// (bitcast, gep, phi) to a fixpoint on the `Raw < Safe < NoPtr` lattice.
pub fn infer_kinds_in(
    module: &ProgramModule,
    func: &FunctionDef,
) -> Result<KindMap, AnalysisError> {
    let foreign = func.attrs.foreign;
    let clamp = |k: ValueKind| -> ValueKind {
        // Foreign code has only raw pointers, whatever the declarations say.
        if foreign {
            if let ValueKind::Pointer(_) = k {
                return ValueKind::Pointer(PtrKind::Raw);
            }
        }
        k
    };

    let mut kinds: HashMap<String, ValueKind> = HashMap::new();
    for p in &func.params {
        kinds.insert(p.name.clone(), clamp(p.kind));
    }

    let shapes = collect_value_shapes(module, func);

    // Seed non-transparent definitions.
    for block in &func.blocks {
        for instr in &block.instrs {
            let Some(name) = &instr.result else { continue };
            if let Some(k) = default_decl_kind(module, func, instr) {
                kinds.insert(name.clone(), clamp(k));
            }
        }
    }

    // Fixpoint over transparent instructions. The lattice is finite and the
    // meet monotone, so this stabilizes in at most |values| rounds.
    loop {
        let mut changed = false;
        for block in &func.blocks {
            for instr in &block.instrs {
                let Some(name) = &instr.result else { continue };
                let new = match &instr.op {
                    Op::Bitcast { value, .. } => kinds.get(value).copied(),
                    Op::Gep { base, offset, elem } => match kinds.get(base).copied() {
                        Some(ValueKind::Pointer(base_kind)) => {
                            let base_shape = shapes
                                .get(base)
                                .and_then(scalar_pointee)
                                .cloned()
                                .unwrap_or(TypeShape::ZeroSized);
                            Some(ValueKind::Pointer(derive_gep_kind(
                                base_kind,
                                &base_shape,
                                offset,
                                elem.byte_size(),
                            )))
                        }
                        other => other,
                    },
                    Op::Phi { incoming } => {
                        let shape_is_ptr = shapes
                            .get(name)
                            .map(pointer_valued)
                            .unwrap_or(false);
                        if !shape_is_ptr {
                            Some(ValueKind::NonPointer)
                        } else {
                            // Start at the lattice top and meet downwards over
                            // whatever incoming kinds are known so far.
                            let mut acc = PtrKind::NoPtr;
                            for (_, v) in incoming {
                                match kinds.get(v) {
                                    Some(ValueKind::Pointer(k)) => acc = acc.meet(*k),
                                    Some(ValueKind::NonPointer) => acc = acc.meet(PtrKind::Raw),
                                    None => {}
                                }
                            }
                            Some(ValueKind::Pointer(acc))
                        }
                    }
                    _ => None,
                };
                if let Some(new) = new {
                    let new = clamp(new);
                    match kinds.get(name) {
                        Some(old) if *old == new => {}
                        _ => {
                            kinds.insert(name.clone(), new);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // Whitelist discipline: every defined value must have been classified.
    for block in &func.blocks {
        for instr in &block.instrs {
            if let Some(name) = &instr.result {
                if !kinds.contains_key(name) {
                    return Err(AnalysisError::Unclassified {
                        function: func.name.clone(),
                        value: name.clone(),
                    });
                }
            }
        }
    }
    Ok(KindMap { kinds })
}

/// Kinds for every function of a module.
pub fn infer_kinds(module: &ProgramModule) -> Result<HashMap<String, KindMap>, AnalysisError> {
    let mut out = HashMap::new();
    for f in &module.functions {
        out.insert(f.name.clone(), infer_kinds_in(module, f)?);
    }
    Ok(out)
}
