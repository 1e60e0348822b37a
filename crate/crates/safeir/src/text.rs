//! Textual `.sir` serialization: a line-oriented, diff-friendly format with
//! `#` comments. Parsing and printing round-trip on validated modules.

use std::fmt::Write as _;

use crate::ir::*;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{file}:{line}:{column}: {message}")]
pub struct ParseError {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub message: String,
}

/// Syntax error or validation failure when loading a module from text.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Syntax(#[from] ParseError),
    #[error("module is invalid:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

/// Parse a module without validating it.
pub fn parse_module(text: &str, file: &str) -> Result<ProgramModule, ParseError> {
    Parser::new(text, file).parse()
}

/// Parse and validate; the common entry point for files and fixtures.
pub fn load_module(text: &str, file: &str) -> Result<ProgramModule, LoadError> {
    let module = parse_module(text, file)?;
    let diags = validate_module(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(LoadError::Invalid(diags))
    }
}

struct Parser<'a> {
    file: String,
    lines: Vec<&'a str>,
    /// 0-based index into `lines`.
    pos: usize,
}

/// Cursor over one line's tokens.
struct LineCursor<'a> {
    file: String,
    line_no: u32,
    text: &'a str,
    offset: usize,
}

impl<'a> LineCursor<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            file: self.file.to_string(),
            line: self.line_no,
            column: (self.offset + 1) as u32,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.offset..];
        let trimmed = rest.trim_start();
        self.offset += rest.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.text[self.offset..].chars().next()
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn eat(&mut self, ch: char) -> bool {
        if self.peek() == Some(ch) {
            self.offset += ch.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, ch: char) -> Result<(), ParseError> {
        if self.eat(ch) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{ch}'")))
        }
    }

    fn word(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let rest = &self.text[self.offset..];
        let end = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_' || *c == '-' || *c == '.'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return None;
        }
        self.offset += end;
        Some(&rest[..end])
    }

    fn expect_word(&mut self, what: &str) -> Result<&'a str, ParseError> {
        self.word()
            .ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.word() {
            Some(w) if w == kw => Ok(()),
            _ => Err(self.err(format!("expected '{kw}'"))),
        }
    }

    fn value_name(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        self.expect('%')?;
        let w = self.expect_word("value name")?;
        Ok(w.to_string())
    }

    fn global_name(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        self.expect('@')?;
        let w = self.expect_word("name")?;
        Ok(w.to_string())
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        self.skip_ws();
        let rest = &self.text[self.offset..];
        let negative = rest.starts_with('-');
        let digits_start = if negative { 1 } else { 0 };
        let end = rest[digits_start..]
            .char_indices()
            .find(|(_, c)| !c.is_ascii_digit())
            .map(|(i, _)| i + digits_start)
            .unwrap_or(rest.len());
        if end == digits_start {
            return Err(self.err("expected integer"));
        }
        let value: i64 = rest[..end]
            .parse()
            .map_err(|_| self.err("integer out of range"))?;
        self.offset += end;
        Ok(value)
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        let v = self.int()?;
        u64::try_from(v).map_err(|_| self.err("expected non-negative integer"))
    }

    fn shape(&mut self) -> Result<TypeShape, ParseError> {
        self.skip_ws();
        if self.eat('&') {
            return Ok(TypeShape::SafePtr(Box::new(self.shape()?)));
        }
        if self.eat('*') {
            return Ok(TypeShape::RawPtr(Box::new(self.shape()?)));
        }
        if self.eat('{') {
            let mut fields = Vec::new();
            if !self.eat('}') {
                loop {
                    fields.push(self.shape()?);
                    if self.eat('}') {
                        break;
                    }
                    self.expect(',')?;
                }
            }
            return Ok(TypeShape::Struct(fields));
        }
        if self.eat('[') {
            let elem = self.shape()?;
            self.expect(';')?;
            let count = self.uint()?;
            self.expect(']')?;
            return Ok(TypeShape::Array(Box::new(elem), count));
        }
        let word = self.expect_word("type shape")?;
        match word {
            "zst" => Ok(TypeShape::ZeroSized),
            "dyn" => Ok(TypeShape::TraitObject),
            "fnptr" => Ok(TypeShape::FnPtr),
            "slice" => {
                self.expect('(')?;
                let elem = self.shape()?;
                self.expect(')')?;
                Ok(TypeShape::Slice(Box::new(elem)))
            }
            "union" => {
                self.expect('{')?;
                let mut fields = Vec::new();
                if !self.eat('}') {
                    loop {
                        fields.push(self.shape()?);
                        if self.eat('}') {
                            break;
                        }
                        self.expect(',')?;
                    }
                }
                Ok(TypeShape::Union(fields))
            }
            w if w.starts_with('i') => {
                let bits: u32 = w[1..]
                    .parse()
                    .map_err(|_| self.err(format!("bad integer shape '{w}'")))?;
                Ok(TypeShape::Int(bits))
            }
            w => Err(self.err(format!("unknown type shape '{w}'"))),
        }
    }

    /// Optional `:safe` / `:raw` / `:noptr` suffix.
    fn kind_suffix(&mut self) -> Result<Option<PtrKind>, ParseError> {
        if !self.eat(':') {
            return Ok(None);
        }
        match self.expect_word("pointer kind")? {
            "safe" => Ok(Some(PtrKind::Safe)),
            "raw" => Ok(Some(PtrKind::Raw)),
            "noptr" => Ok(Some(PtrKind::NoPtr)),
            w => Err(self.err(format!("unknown pointer kind '{w}'"))),
        }
    }

    fn declared(&mut self, shape: &TypeShape) -> Result<ValueKind, ParseError> {
        match self.kind_suffix()? {
            Some(k) => Ok(ValueKind::Pointer(k)),
            None => Ok(if pointer_valued(shape) {
                // Missing annotations on pointer shapes are caught by
                // validation; default to the shape's own kind so parsing
                // still succeeds.
                decl_kind_of_shape(shape)
            } else {
                ValueKind::NonPointer
            }),
        }
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, file: &str) -> Self {
        Parser {
            file: file.to_string(),
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    /// Next significant line as a cursor, skipping blanks and comments.
    fn next_line(&mut self) -> Option<LineCursor<'a>> {
        while self.pos < self.lines.len() {
            let raw = self.lines[self.pos];
            let significant = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            if significant.trim().is_empty() {
                self.pos += 1;
                continue;
            }
            let cur = LineCursor {
                file: self.file.clone(),
                line_no: (self.pos + 1) as u32,
                text: significant,
                offset: 0,
            };
            self.pos += 1;
            return Some(cur);
        }
        None
    }

    fn eof_err(&self, message: &str) -> ParseError {
        ParseError {
            file: self.file.clone(),
            line: (self.lines.len() + 1) as u32,
            column: 1,
            message: message.to_string(),
        }
    }

    fn parse(&mut self) -> Result<ProgramModule, ParseError> {
        let mut cur = self
            .next_line()
            .ok_or_else(|| self.eof_err("expected module header"))?;
        cur.keyword("module")?;
        let name = cur.expect_word("module name")?.to_string();
        let mut module = ProgramModule::new(&name);
        if let Some(w) = cur.word() {
            if w != "instrumented" {
                return Err(cur.err(format!("unexpected token '{w}' in module header")));
            }
            cur.expect('=')?;
            let mode = cur.expect_word("instrumentation mode")?;
            module.instrumented = Some(
                InstrMode::parse(mode).ok_or_else(|| cur.err(format!("unknown mode '{mode}'")))?,
            );
        }
        if !cur.at_end() {
            return Err(cur.err("trailing tokens after module header"));
        }

        while let Some(mut cur) = self.next_line() {
            let word = cur.expect_word("'global', 'extern', or 'fn'")?;
            match word {
                "global" => {
                    let name = cur.global_name()?;
                    cur.expect(':')?;
                    let shape = cur.shape()?;
                    let kind = cur.declared(&shape)?;
                    let init = if cur.eat('=') { Some(cur.int()?) } else { None };
                    if !cur.at_end() {
                        return Err(cur.err("trailing tokens after global"));
                    }
                    module.globals.push(GlobalDef {
                        name,
                        shape,
                        kind,
                        init,
                    });
                }
                "extern" => {
                    let name = cur.global_name()?;
                    let nofree = match cur.word() {
                        Some("nofree") => true,
                        Some(w) => return Err(cur.err(format!("unexpected token '{w}'"))),
                        None => false,
                    };
                    module.externals.push(ExternDecl { name, nofree });
                }
                "fn" => {
                    let func = self.parse_function(cur)?;
                    module.functions.push(func);
                }
                w => return Err(cur.err(format!("unexpected top-level token '{w}'"))),
            }
        }
        Ok(module)
    }

    fn parse_function(&mut self, mut cur: LineCursor<'a>) -> Result<FunctionDef, ParseError> {
        let name = cur.global_name()?;
        cur.expect('(')?;
        let mut params = Vec::new();
        if !cur.eat(')') {
            loop {
                let pname = cur.value_name()?;
                cur.expect(':')?;
                let shape = cur.shape()?;
                let kind = cur.declared(&shape)?;
                params.push(Param {
                    name: pname,
                    shape,
                    kind,
                });
                if cur.eat(')') {
                    break;
                }
                cur.expect(',')?;
            }
        }
        let mut ret = None;
        cur.skip_ws();
        if cur.text[cur.offset..].starts_with("->") {
            cur.offset += 2;
            let shape = cur.shape()?;
            let kind = cur.declared(&shape)?;
            ret = Some((shape, kind));
        }
        let mut attrs = FnAttrs::default();
        loop {
            cur.skip_ws();
            if cur.eat('{') {
                break;
            }
            match cur.word() {
                Some("extern_visible") => attrs.extern_visible = true,
                Some("foreign") => attrs.foreign = true,
                Some("known_dealloc") => attrs.known_dealloc = true,
                Some("nofree") => attrs.nofree_declared = true,
                Some(w) => return Err(cur.err(format!("unknown function attribute '{w}'"))),
                None => return Err(cur.err("expected '{' to open function body")),
            }
        }
        if !cur.at_end() {
            // `fn @f() known_dealloc {}` fits on one line.
            if cur.eat('}') && cur.at_end() {
                return Ok(FunctionDef {
                    name,
                    params,
                    ret,
                    attrs,
                    blocks: vec![],
                });
            }
            return Err(cur.err("function body must start on the next line"));
        }

        let mut blocks: Vec<Block> = Vec::new();
        loop {
            let mut cur = self
                .next_line()
                .ok_or_else(|| self.eof_err("unterminated function body"))?;
            if cur.eat('}') {
                if !cur.at_end() {
                    return Err(cur.err("trailing tokens after '}'"));
                }
                break;
            }
            // Block label: `name:` with nothing else.
            let save = cur.offset;
            if let Some(w) = cur.word() {
                if cur.eat(':') && cur.at_end() {
                    blocks.push(Block {
                        label: w.to_string(),
                        instrs: Vec::new(),
                    });
                    continue;
                }
            }
            cur.offset = save;
            let block = blocks
                .last_mut()
                .ok_or_else(|| cur.err("instruction before any block label"))?;
            let instr = parse_instr(&mut cur)?;
            block.instrs.push(instr);
        }
        Ok(FunctionDef {
            name,
            params,
            ret,
            attrs,
            blocks,
        })
    }
}

fn parse_instr(cur: &mut LineCursor<'_>) -> Result<Instr, ParseError> {
    cur.skip_ws();
    let loc = SourceLoc {
        file: cur.file.clone(),
        line: cur.line_no,
        column: (cur.offset + 1) as u32,
    };
    let mut result = None;
    if cur.peek() == Some('%') {
        let name = cur.value_name()?;
        cur.expect('=')?;
        result = Some(name);
    }
    let op_word = cur.expect_word("instruction")?;
    let op = match op_word {
        "alloca" => Op::Alloca {
            shape: cur.shape()?,
        },
        "heapalloc" => {
            let size = if cur.peek() == Some('%') {
                SizeArg::Value(cur.value_name()?)
            } else {
                SizeArg::Const(cur.uint()?)
            };
            Op::HeapAlloc { size }
        }
        "heapfree" => Op::HeapFree {
            addr: cur.value_name()?,
        },
        "load" => {
            let addr = cur.value_name()?;
            cur.expect(',')?;
            Op::Load {
                addr,
                shape: cur.shape()?,
            }
        }
        "store" => {
            let addr = cur.value_name()?;
            cur.expect(',')?;
            Op::Store {
                addr,
                value: cur.value_name()?,
            }
        }
        "gep" => {
            let base = cur.value_name()?;
            cur.expect(',')?;
            let offset = if cur.peek() == Some('%') {
                GepOffset::Dynamic(cur.value_name()?)
            } else {
                GepOffset::Static(cur.int()?)
            };
            cur.expect(',')?;
            Op::Gep {
                base,
                offset,
                elem: cur.shape()?,
            }
        }
        "bitcast" => {
            let value = cur.value_name()?;
            cur.expect(',')?;
            Op::Bitcast {
                value,
                shape: cur.shape()?,
            }
        }
        "ptrtoint" => Op::PtrToInt {
            value: cur.value_name()?,
        },
        "inttoptr" => {
            let value = cur.value_name()?;
            cur.expect(',')?;
            Op::IntToPtr {
                value,
                shape: cur.shape()?,
            }
        }
        "castsafe" => {
            let value = cur.value_name()?;
            cur.expect(',')?;
            Op::CastToSafe {
                value,
                shape: cur.shape()?,
            }
        }
        "phi" => {
            let mut incoming = Vec::new();
            loop {
                cur.expect('[')?;
                let block = cur.expect_word("block label")?.to_string();
                cur.expect(':')?;
                let value = cur.value_name()?;
                cur.expect(']')?;
                incoming.push((block, value));
                if !cur.eat(',') {
                    break;
                }
            }
            Op::Phi { incoming }
        }
        "call" => {
            let callee = if cur.peek() == Some('@') {
                Callee::Direct(cur.global_name()?)
            } else {
                Callee::Indirect(cur.value_name()?)
            };
            cur.expect('(')?;
            let mut args = Vec::new();
            if !cur.eat(')') {
                loop {
                    args.push(cur.value_name()?);
                    if cur.eat(')') {
                        break;
                    }
                    cur.expect(',')?;
                }
            }
            Op::Call { callee, args }
        }
        "add" | "sub" | "mul" => {
            let op = match op_word {
                "add" => BinOpKind::Add,
                "sub" => BinOpKind::Sub,
                _ => BinOpKind::Mul,
            };
            let lhs = cur.value_name()?;
            cur.expect(',')?;
            Op::BinOp {
                op,
                lhs,
                rhs: cur.value_name()?,
            }
        }
        "cmp" => {
            let pred = match cur.expect_word("comparison predicate")? {
                "eq" => CmpPred::Eq,
                "ne" => CmpPred::Ne,
                "lt" => CmpPred::Lt,
                "le" => CmpPred::Le,
                "gt" => CmpPred::Gt,
                "ge" => CmpPred::Ge,
                w => return Err(cur.err(format!("unknown predicate '{w}'"))),
            };
            let lhs = cur.value_name()?;
            cur.expect(',')?;
            Op::Cmp {
                pred,
                lhs,
                rhs: cur.value_name()?,
            }
        }
        "const" => Op::ConstInt { value: cur.int()? },
        "globaladdr" => Op::GlobalAddr {
            name: cur.global_name()?,
        },
        "br" => Op::Br {
            target: cur.expect_word("block label")?.to_string(),
        },
        "condbr" => {
            let cond = cur.value_name()?;
            cur.expect(',')?;
            let then_to = cur.expect_word("block label")?.to_string();
            cur.expect(',')?;
            let else_to = cur.expect_word("block label")?.to_string();
            Op::CondBr {
                cond,
                then_to,
                else_to,
            }
        }
        "ret" => {
            let value = if cur.at_end() {
                None
            } else {
                Some(cur.value_name()?)
            };
            Op::Ret { value }
        }
        "check" => {
            let addr = cur.value_name()?;
            cur.expect(',')?;
            Op::Check {
                addr,
                size: cur.uint()?,
            }
        }
        "ensure" => {
            let kind = match cur.expect_word("check kind")? {
                "cast" => CheckKind::Cast,
                "load" => CheckKind::Load,
                "param" => CheckKind::Param,
                "ret" => CheckKind::Ret,
                "heap" => CheckKind::Heap,
                w => return Err(cur.err(format!("unknown ensure kind '{w}'"))),
            };
            let addr = cur.value_name()?;
            cur.expect(',')?;
            Op::Ensure {
                kind,
                addr,
                size: cur.uint()?,
            }
        }
        w => return Err(cur.err(format!("unknown instruction '{w}'"))),
    };
    if !cur.at_end() {
        return Err(cur.err("trailing tokens after instruction"));
    }
    Ok(Instr { result, op, loc })
}

pub fn print_shape(shape: &TypeShape) -> String {
    match shape {
        TypeShape::Int(bits) => format!("i{bits}"),
        TypeShape::ZeroSized => "zst".to_string(),
        TypeShape::SafePtr(p) => format!("&{}", print_shape(p)),
        TypeShape::RawPtr(p) => format!("*{}", print_shape(p)),
        TypeShape::Struct(fields) => {
            let inner: Vec<String> = fields.iter().map(print_shape).collect();
            format!("{{{}}}", inner.join(", "))
        }
        TypeShape::Union(fields) => {
            let inner: Vec<String> = fields.iter().map(print_shape).collect();
            format!("union{{{}}}", inner.join(", "))
        }
        TypeShape::Array(elem, count) => format!("[{}; {count}]", print_shape(elem)),
        TypeShape::Slice(elem) => format!("slice({})", print_shape(elem)),
        TypeShape::TraitObject => "dyn".to_string(),
        TypeShape::FnPtr => "fnptr".to_string(),
    }
}

fn print_declared(shape: &TypeShape, kind: &ValueKind) -> String {
    match kind {
        ValueKind::Pointer(k) => format!("{} :{k}", print_shape(shape)),
        ValueKind::NonPointer => print_shape(shape),
    }
}

fn print_instr(instr: &Instr) -> String {
    let body = match &instr.op {
        Op::Alloca { shape } => format!("alloca {}", print_shape(shape)),
        Op::HeapAlloc { size } => match size {
            SizeArg::Const(n) => format!("heapalloc {n}"),
            SizeArg::Value(v) => format!("heapalloc %{v}"),
        },
        Op::HeapFree { addr } => format!("heapfree %{addr}"),
        Op::Load { addr, shape } => format!("load %{addr}, {}", print_shape(shape)),
        Op::Store { addr, value } => format!("store %{addr}, %{value}"),
        Op::Gep { base, offset, elem } => match offset {
            GepOffset::Static(n) => format!("gep %{base}, {n}, {}", print_shape(elem)),
            GepOffset::Dynamic(v) => format!("gep %{base}, %{v}, {}", print_shape(elem)),
        },
        Op::Bitcast { value, shape } => format!("bitcast %{value}, {}", print_shape(shape)),
        Op::PtrToInt { value } => format!("ptrtoint %{value}"),
        Op::IntToPtr { value, shape } => format!("inttoptr %{value}, {}", print_shape(shape)),
        Op::CastToSafe { value, shape } => format!("castsafe %{value}, {}", print_shape(shape)),
        Op::Phi { incoming } => {
            let arms: Vec<String> = incoming
                .iter()
                .map(|(b, v)| format!("[{b}: %{v}]"))
                .collect();
            format!("phi {}", arms.join(", "))
        }
        Op::Call { callee, args } => {
            let args: Vec<String> = args.iter().map(|a| format!("%{a}")).collect();
            match callee {
                Callee::Direct(name) => format!("call @{name}({})", args.join(", ")),
                Callee::Indirect(v) => format!("call %{v}({})", args.join(", ")),
            }
        }
        Op::BinOp { op, lhs, rhs } => format!("{} %{lhs}, %{rhs}", op.keyword()),
        Op::Cmp { pred, lhs, rhs } => format!("cmp {} %{lhs}, %{rhs}", pred.keyword()),
        Op::ConstInt { value } => format!("const {value}"),
        Op::GlobalAddr { name } => format!("globaladdr @{name}"),
        Op::Br { target } => format!("br {target}"),
        Op::CondBr {
            cond,
            then_to,
            else_to,
        } => format!("condbr %{cond}, {then_to}, {else_to}"),
        Op::Ret { value } => match value {
            Some(v) => format!("ret %{v}"),
            None => "ret".to_string(),
        },
        Op::Check { addr, size } => format!("check %{addr}, {size}"),
        Op::Ensure { kind, addr, size } => format!("ensure {} %{addr}, {size}", kind.keyword()),
    };
    match &instr.result {
        Some(name) => format!("%{name} = {body}"),
        None => body,
    }
}

/// Canonical text for a module; `parse_module(print_module(m))` is
/// structurally equal to `m` (ignoring source locations).
pub fn print_module(module: &ProgramModule) -> String {
    let mut out = String::new();
    match module.instrumented {
        Some(mode) => {
            let _ = writeln!(
                out,
                "module {} instrumented={}",
                module.name,
                mode.keyword()
            );
        }
        None => {
            let _ = writeln!(out, "module {}", module.name);
        }
    }
    for g in &module.globals {
        let _ = write!(
            out,
            "global @{} : {}",
            g.name,
            print_declared(&g.shape, &g.kind)
        );
        match g.init {
            Some(v) => {
                let _ = writeln!(out, " = {v}");
            }
            None => out.push('\n'),
        }
    }
    for e in &module.externals {
        if e.nofree {
            let _ = writeln!(out, "extern @{} nofree", e.name);
        } else {
            let _ = writeln!(out, "extern @{}", e.name);
        }
    }
    for f in &module.functions {
        out.push('\n');
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| format!("%{}: {}", p.name, print_declared(&p.shape, &p.kind)))
            .collect();
        let _ = write!(out, "fn @{}({})", f.name, params.join(", "));
        if let Some((shape, kind)) = &f.ret {
            let _ = write!(out, " -> {}", print_declared(shape, kind));
        }
        if f.attrs.extern_visible {
            out.push_str(" extern_visible");
        }
        if f.attrs.foreign {
            out.push_str(" foreign");
        }
        if f.attrs.known_dealloc {
            out.push_str(" known_dealloc");
        }
        if f.attrs.nofree_declared {
            out.push_str(" nofree");
        }
        if f.blocks.is_empty() {
            out.push_str(" {}\n");
            continue;
        }
        out.push_str(" {\n");
        for block in &f.blocks {
            let _ = writeln!(out, "{}:", block.label);
            for instr in &block.instrs {
                let _ = writeln!(out, "  {}", print_instr(instr));
            }
        }
        out.push_str("}\n");
    }
    out
}

/// Structural equality that ignores source locations.
pub fn modules_structurally_equal(a: &ProgramModule, b: &ProgramModule) -> bool {
    strip_locs(a.clone()) == strip_locs(b.clone())
}

fn strip_locs(mut m: ProgramModule) -> ProgramModule {
    for f in &mut m.functions {
        for b in &mut f.blocks {
            for i in &mut b.instrs {
                i.loc = SourceLoc::synthetic();
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_function_parses() {
        let text = "module m\n\nfn @main() {\nentry:\n  ret\n}\n";
        let m = load_module(text, "t.sir").unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].name, "main");
    }

    #[test]
    fn empty_module_prints_header_only() {
        let m = ProgramModule::new("empty");
        assert_eq!(print_module(&m), "module empty\n");
        let back = parse_module(&print_module(&m), "t.sir").unwrap();
        assert!(modules_structurally_equal(&m, &back));
    }

    #[test]
    fn round_trip_with_all_constructs() {
        let text = r#"module demo
global @g : {i64, i64} :raw = 7
extern @puts
extern @exit nofree

fn @free(%p: *i8 :raw) known_dealloc {}

fn @c_id(%p: *i8 :raw) -> *i8 :raw foreign {
entry:
  ret %p
}

fn @work(%p: &i64 :safe, %n: i64) -> i64 extern_visible {
entry:
  %a = alloca [i8; 16]
  %h = heapalloc 32
  %x = load %p, i64
  %g1 = globaladdr @g
  %f = gep %g1, 8, i64
  %fd = gep %g1, %n, i64
  %i = ptrtoint %h
  %p2 = inttoptr %i, *i8
  %s = castsafe %p2, &i8
  %c = const -3
  %sum = add %x, %c
  %cc = cmp lt %sum, %n
  condbr %cc, one, two
one:
  %r1 = call @c_id(%h)
  store %f, %sum
  br join
two:
  heapfree %h
  br join
join:
  %m2 = phi [one: %sum], [two: %n]
  ret %m2
}
"#;
        let m = load_module(text, "t.sir").unwrap();
        let printed = print_module(&m);
        let back = parse_module(&printed, "t.sir").unwrap();
        assert!(modules_structurally_equal(&m, &back));
        // Printing is a normal form: printing again is byte-identical.
        assert_eq!(printed, print_module(&back));
    }

    #[test]
    fn syntax_error_carries_location() {
        let err = parse_module("module m\nfn @f( {\n", "bad.sir").unwrap_err();
        assert_eq!(err.file, "bad.sir");
        assert_eq!(err.line, 2);
    }

    #[test]
    fn duplicate_definition_is_rejected_with_location() {
        let text = "module m\n\nfn @f() {\nentry:\n  %x = const 1\n  %x = const 2\n  ret\n}\n";
        let m = parse_module(text, "t.sir").unwrap();
        let diags = validate_module(&m);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("defined more than once")));
        assert!(diags
            .iter()
            .any(|d| d.loc.as_ref().map(|l| l.line) == Some(6)));
    }

    #[test]
    fn castsafe_of_safe_value_parses_but_fails_validation() {
        let text = "module m\n\nfn @f() {\nentry:\n  %a = alloca i64\n  %s = castsafe %a, &i64\n  ret\n}\n";
        let m = parse_module(text, "t.sir").unwrap();
        let diags = validate_module(&m);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("must be a raw pointer"));
    }

    #[test]
    fn foreign_function_with_castsafe_is_rejected() {
        let text = "module m\n\nfn @c(%p: *i64 :raw) foreign {\nentry:\n  %s = castsafe %p, &i64\n  ret\n}\n";
        let m = parse_module(text, "t.sir").unwrap();
        let diags = validate_module(&m);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("forbidden in foreign"));
    }

    #[test]
    fn unknown_callee_is_diagnosed() {
        let text = "module m\n\nfn @f() {\nentry:\n  call @missing()\n  ret\n}\n";
        let m = parse_module(text, "t.sir").unwrap();
        let diags = validate_module(&m);
        assert!(diags.iter().any(|d| d.message.contains("unknown @missing")));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# header\nmodule m\n\n# a function\nfn @main() {\nentry:\n  ret # done\n}\n";
        assert!(load_module(text, "t.sir").is_ok());
    }

    #[test]
    fn loop_fixture_has_expected_structure() {
        let text = include_str!("../tests/fixtures/hoist_loop.sir");
        let m = load_module(text, "hoist_loop.sir").unwrap();
        let foo = m.function("foo").unwrap();
        let all: Vec<&Op> = foo
            .blocks
            .iter()
            .flat_map(|b| b.instrs.iter().map(|i| &i.op))
            .collect();
        let casts = all
            .iter()
            .filter(|o| matches!(o, Op::CastToSafe { .. }))
            .count();
        assert_eq!(casts, 1);
        let static_geps = all
            .iter()
            .filter(|o| {
                matches!(
                    o,
                    Op::Gep {
                        offset: GepOffset::Static(_),
                        ..
                    }
                )
            })
            .count();
        assert_eq!(static_geps, 2);
        assert_eq!(
            all.iter().filter(|o| matches!(o, Op::Load { .. })).count(),
            5
        );
        // Four of the loads sit in or after the loop.
        let late_loads: usize = foo
            .blocks
            .iter()
            .filter(|b| b.label == "loop" || b.label == "exit")
            .flat_map(|b| b.instrs.iter())
            .filter(|i| matches!(i.op, Op::Load { .. }))
            .count();
        assert_eq!(late_loads, 4);
    }
}
