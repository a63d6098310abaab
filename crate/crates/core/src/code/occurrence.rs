use super::lexer::{Token, TokenKind, TYPE_KEYWORDS};
use super::{AssignShape, CodeConfig, Function, Jump, Role, StatementKind, TokenSpan};

/// Where a token run sits syntactically; decides how it is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StmtContext {
    /// `;`-terminated statement, or a `for` init/step clause.
    Simple,
    /// `if (..)`, `while (..)`, `switch (..)`, a `for` condition.
    Condition,
    /// Head of an iterator macro: `list_for_each_entry(pos, head, member)`.
    MacroHead,
}

/// Occurrence data relative to the statement's token run, before the
/// statement gets its id.
#[derive(Debug, Clone)]
pub(crate) struct RawOccurrence {
    pub key: String,
    pub span: TokenSpan,
    pub is_declaration: bool,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub(crate) struct Analysis {
    pub kind: StatementKind,
    pub occurrences: Vec<RawOccurrence>,
    pub assign: Option<AssignShape>,
    pub jump: Option<Jump>,
    pub initialized: bool,
}

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

const BASE_TYPES: &[&str] = &[
    "char", "double", "float", "int", "long", "short", "signed", "unsigned", "void", "_Bool", "bool",
];

const LITERAL_IDENTS: &[&str] = &["NULL", "true", "false"];

/// ALL_CAPS identifiers are macro constants (`GFP_KERNEL`, `ENOMEM`), not variables.
fn is_macro_constant(text: &str) -> bool {
    LITERAL_IDENTS.contains(&text)
        || (text.len() > 1
            && text.bytes().any(|b| b.is_ascii_alphabetic())
            && !text.bytes().any(|b| b.is_ascii_lowercase()))
}

fn is_open(t: &Token) -> bool {
    matches!(t.text.as_str(), "(" | "[" | "{")
}

fn is_close(t: &Token) -> bool {
    matches!(t.text.as_str(), ")" | "]" | "}")
}

/// Scans `toks` for variable occurrences, fusing member-access chains.
/// Call names, keywords, literals, labels, struct tags and member names
/// produce nothing.
pub(crate) fn scan(toks: &[Token], cfg: &CodeConfig) -> Vec<(String, TokenSpan)> {
    let mut out = Vec::new();
    let is_member_op = |t: &Token| t.is("->") || (cfg.fuse_dot_access && t.is("."));
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if !t.is_ident() {
            i += 1;
            continue;
        }
        if let Some(prev) = i.checked_sub(1).map(|p| &toks[p]) {
            if prev.is("->") || prev.is(".") || prev.is("goto") {
                i += 1;
                continue;
            }
            if matches!(prev.text.as_str(), "struct" | "union" | "enum") {
                i += 1;
                continue;
            }
        }
        let mut j = i;
        while j + 2 < toks.len() && is_member_op(&toks[j + 1]) && toks[j + 2].is_ident() {
            j += 2;
        }
        let called = toks.get(j + 1).is_some_and(|n| n.is("("));
        let next = j + 1;
        if called {
            if j == i {
                i = next;
                continue;
            }
            // `a->ops->probe(x)`: the receiver chain is the variable
            j -= 2;
        }
        if j == i && is_macro_constant(&t.text) {
            i = next;
            continue;
        }
        let key: String = toks[i..=j].iter().map(|t| t.text.as_str()).collect();
        out.push((key, TokenSpan { start: i, end: j }));
        i = next;
    }
    out
}

/// Index of the first declarator when `toks` is a declaration.
fn declaration_start(toks: &[Token]) -> Option<usize> {
    let mut i = 0;
    let mut base = false;
    let mut specifiers = false;
    while i < toks.len() {
        let t = &toks[i];
        let text = t.text.as_str();
        if matches!(text, "struct" | "union" | "enum") {
            i += 1;
            if toks.get(i).is_some_and(Token::is_ident) {
                i += 1;
            }
            base = true;
            continue;
        }
        if TYPE_KEYWORDS.contains(&text) {
            specifiers = true;
            base |= BASE_TYPES.contains(&text);
            i += 1;
            continue;
        }
        if t.is_ident() && text.starts_with("__") && (base || specifiers) {
            // attribute-like annotations: __iomem, __maybe_unused, __attribute__((..))
            i += 1;
            if toks.get(i).is_some_and(|n| n.is("(")) {
                i = matching(toks, i)? + 1;
            }
            continue;
        }
        if t.is_ident() && !base {
            let next = toks.get(i + 1)?;
            if next.is_ident() {
                base = true;
                i += 1;
                continue;
            }
            if next.is("*") {
                let mut k = i + 1;
                while toks.get(k).is_some_and(|n| n.is("*") || n.is("const")) {
                    k += 1;
                }
                let named = toks.get(k).is_some_and(Token::is_ident);
                let follow = toks
                    .get(k + 1)
                    .is_some_and(|n| matches!(n.text.as_str(), ";" | "=" | "," | "["));
                if named && follow {
                    base = true;
                    i += 1;
                    continue;
                }
            }
        }
        break;
    }
    if !(base || specifiers) || i == 0 {
        return None;
    }
    match toks.get(i) {
        Some(t) if t.is_ident() || t.is("*") || t.is("(") => Some(i),
        _ => None,
    }
}

/// Index of the bracket closing the one opened at `open`.
pub(crate) fn matching(toks: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (k, t) in toks.iter().enumerate().skip(open) {
        if is_open(t) {
            depth += 1;
        } else if is_close(t) {
            depth -= 1;
            if depth == 0 {
                return Some(k);
            }
        }
    }
    None
}

/// Splits `toks[from..to]` on commas at bracket depth zero.
fn split_top_level(toks: &[Token], from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = from;
    for k in from..to {
        let t = &toks[k];
        if is_open(t) {
            depth += 1;
        } else if is_close(t) {
            depth -= 1;
        } else if t.is(",") && depth == 0 {
            parts.push((start, k));
            start = k + 1;
        }
    }
    if start < to {
        parts.push((start, to));
    }
    parts
}

fn top_level_assign(toks: &[Token]) -> Option<usize> {
    let mut depth = 0i32;
    for (k, t) in toks.iter().enumerate() {
        if is_open(t) {
            depth += 1;
        } else if is_close(t) {
            depth -= 1;
        } else if depth == 0 && ASSIGN_OPS.contains(&t.text.as_str()) {
            return Some(k);
        }
    }
    None
}

/// True when `toks[from..to]` holds exactly the occurrence `occ` plus
/// parentheses, `&`/`*` and cast type names.
fn is_single_operand(toks: &[Token], from: usize, to: usize, occ: &TokenSpan) -> bool {
    if occ.start < from || occ.end >= to {
        return false;
    }
    (from..to).all(|k| {
        if (occ.start..=occ.end).contains(&k) {
            return true;
        }
        let t = &toks[k];
        let text = t.text.as_str();
        matches!(text, "(" | ")" | "&" | "*" | "struct" | "union" | "enum")
            || TYPE_KEYWORDS.contains(&text)
            || (t.is_ident() && k > 0 && matches!(toks[k - 1].text.as_str(), "struct" | "union" | "enum"))
    })
}

fn incdec_adjacent(toks: &[Token], span: &TokenSpan) -> bool {
    let before = span
        .start
        .checked_sub(1)
        .is_some_and(|p| toks[p].is("++") || toks[p].is("--"));
    let after = toks.get(span.end + 1).is_some_and(|n| n.is("++") || n.is("--"));
    before || after
}

fn contains_call(toks: &[Token]) -> bool {
    toks.windows(2).any(|w| w[0].kind == TokenKind::Ident && w[1].is("("))
}

fn raw(key: String, span: TokenSpan, role: Role) -> RawOccurrence {
    RawOccurrence {
        key,
        span,
        is_declaration: false,
        role,
    }
}

/// Classifies one statement's tokens and collects its occurrences.
/// `toks` excludes nothing: a trailing `;` is part of the run.
pub(crate) fn analyze(toks: &[Token], ctx: StmtContext, cfg: &CodeConfig) -> Analysis {
    let mut analysis = Analysis {
        kind: StatementKind::Other,
        occurrences: Vec::new(),
        assign: None,
        jump: None,
        initialized: false,
    };
    let first = toks.first().map(|t| t.text.as_str()).unwrap_or("");

    if ctx != StmtContext::Simple {
        analysis.kind = if ctx == StmtContext::Condition {
            StatementKind::Condition
        } else {
            StatementKind::Other
        };
        for (key, span) in scan(toks, cfg) {
            // `while ((x = next(x)))`, `if (i++ < n)`
            let assigned = toks
                .get(span.end + 1)
                .is_some_and(|n| ASSIGN_OPS.contains(&n.text.as_str()));
            let role = if assigned || incdec_adjacent(toks, &span) {
                Role::Definition
            } else {
                Role::Use
            };
            analysis.occurrences.push(raw(key, span, role));
        }
        return analysis;
    }

    match first {
        "return" => {
            analysis.kind = StatementKind::Return;
            analysis.occurrences = scan(toks, cfg).into_iter().map(|(k, s)| raw(k, s, Role::Use)).collect();
            return analysis;
        }
        "goto" | "break" | "continue" => {
            analysis.kind = StatementKind::Jump;
            analysis.jump = Some(match first {
                "goto" => Jump::Goto(toks.get(1).map(|t| t.text.clone()).unwrap_or_default()),
                "break" => Jump::Break,
                _ => Jump::Continue,
            });
            return analysis;
        }
        _ => {}
    }

    let end = if toks.last().is_some_and(|t| t.is(";")) {
        toks.len() - 1
    } else {
        toks.len()
    };

    if let Some(decl) = declaration_start(toks) {
        analysis.kind = StatementKind::Declaration;
        let declarators = split_top_level(toks, decl, end);
        let single = declarators.len() == 1;
        for (from, to) in declarators {
            let Some(name) = (from..to).find(|&k| toks[k].is_ident()) else {
                continue;
            };
            let eq = (name..to).find(|&k| toks[k].is("="));
            let name_span = TokenSpan { start: name, end: name };
            let lhs_index = analysis.occurrences.len();
            analysis.occurrences.push(RawOccurrence {
                key: toks[name].text.clone(),
                span: name_span,
                is_declaration: true,
                role: if eq.is_some() { Role::Definition } else { Role::Unknown },
            });
            // array extents, then the initializer
            let tail_end = eq.unwrap_or(to);
            if toks.get(name + 1).is_some_and(|n| n.is("[")) {
                for (key, span) in scan(&toks[name + 1..tail_end], cfg) {
                    let span = TokenSpan {
                        start: span.start + name + 1,
                        end: span.end + name + 1,
                    };
                    analysis.occurrences.push(raw(key, span, Role::Use));
                }
            }
            if let Some(eq) = eq {
                analysis.initialized = true;
                let init_from = eq + 1;
                let found = scan(&toks[init_from..to], cfg);
                let shift = |s: TokenSpan| TokenSpan {
                    start: s.start + init_from,
                    end: s.end + init_from,
                };
                if single {
                    let unary = match found.as_slice() {
                        [(_, s)] if is_single_operand(toks, init_from, to, &shift(*s)) => {
                            Some(analysis.occurrences.len())
                        }
                        _ => None,
                    };
                    analysis.assign = Some(AssignShape {
                        lhs: Some(lhs_index),
                        unary_rhs: unary,
                        compound: false,
                    });
                }
                for (key, span) in found {
                    let span = shift(span);
                    let role = if incdec_adjacent(toks, &span) {
                        Role::Definition
                    } else {
                        Role::Use
                    };
                    analysis.occurrences.push(raw(key, span, role));
                }
            }
        }
        return analysis;
    }

    let found = scan(&toks[..end], cfg);
    if let Some(op) = top_level_assign(&toks[..end]) {
        analysis.kind = StatementKind::Assignment;
        let compound = toks[op].text != "=";
        let lhs_occs: Vec<usize> = (0..found.len()).filter(|&k| found[k].1.end < op).collect();
        // `*p = x` writes through p; only a bare variable is defined
        let simple_lhs = match lhs_occs.as_slice() {
            [k] => {
                let span = found[*k].1;
                (0..op).all(|t| (span.start..=span.end).contains(&t) || toks[t].is("(") || toks[t].is(")"))
            }
            _ => false,
        };
        let rhs_occs: Vec<usize> = (0..found.len()).filter(|&k| found[k].1.start > op).collect();
        let unary_rhs = match rhs_occs.as_slice() {
            [k] if !compound && is_single_operand(toks, op + 1, end, &found[*k].1) => Some(*k),
            _ => None,
        };
        for (k, (key, span)) in found.into_iter().enumerate() {
            let role = if k == lhs_occs.first().copied().unwrap_or(usize::MAX) {
                if simple_lhs {
                    Role::Definition
                } else {
                    Role::Unknown
                }
            } else if incdec_adjacent(toks, &span) {
                Role::Definition
            } else {
                Role::Use
            };
            analysis.occurrences.push(raw(key, span, role));
        }
        analysis.assign = Some(AssignShape {
            lhs: simple_lhs.then(|| lhs_occs[0]),
            unary_rhs,
            compound,
        });
        return analysis;
    }

    // `i++;`, `--count;`
    if let [(key, span)] = found.as_slice() {
        let rest: Vec<&str> = (0..end)
            .filter(|k| !(span.start..=span.end).contains(k))
            .map(|k| toks[k].text.as_str())
            .collect();
        if rest == ["++"] || rest == ["--"] {
            analysis.kind = StatementKind::Assignment;
            analysis.occurrences.push(raw(key.clone(), *span, Role::Definition));
            analysis.assign = Some(AssignShape {
                lhs: Some(0),
                unary_rhs: None,
                compound: true,
            });
            return analysis;
        }
    }

    analysis.kind = if contains_call(&toks[..end]) {
        StatementKind::Call
    } else {
        StatementKind::Other
    };
    for (key, span) in found {
        let role = if incdec_adjacent(toks, &span) {
            Role::Definition
        } else {
            Role::Use
        };
        analysis.occurrences.push(raw(key, span, role));
    }
    analysis
}

/// All occurrences of `func`, ordered by (line, token position).
pub fn occurrences(func: &Function) -> Vec<&super::VariableOccurrence> {
    func.statements.iter().flat_map(|s| s.occurrences.iter()).collect()
}

/// Number of non-declaration occurrences of `key` in `func`.
pub fn occurrence_count(func: &Function, key: &str) -> usize {
    func.statements.iter().map(|s| s.uses_of(key).count()).sum()
}
