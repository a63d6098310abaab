//! Top-level function extraction and statement-level body parsing.

use super::lexer::{tokenize_from, Token};
use super::occurrence::{analyze, matching, StmtContext};
use super::{CodeConfig, Function, FunctionId, Node, Statement, StmtId, TokenSpan, VariableOccurrence};
use crate::diag::Diagnostic;

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub functions: Vec<Function>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn extract_functions(source: &str, file: &str, cfg: &CodeConfig) -> Extraction {
    extract_functions_from(source, file, 1, cfg)
}

/// Like [`extract_functions`] for a fragment whose first line is `first_line`
/// of `file`.
pub fn extract_functions_from(source: &str, file: &str, first_line: u32, cfg: &CodeConfig) -> Extraction {
    let toks = tokenize_from(source, first_line);
    let mut out = Extraction::default();
    let mut header_start = 0;
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        match t.text.as_str() {
            ";" => {
                header_start = i + 1;
                i += 1;
            }
            "(" | "[" => match matching(&toks, i) {
                Some(close) => i = close + 1,
                None => {
                    out.diagnostics
                        .push(Diagnostic::error(file, t.line, "unbalanced bracket at top level"));
                    break;
                }
            },
            "{" => {
                let Some(close) = matching(&toks, i) else {
                    out.diagnostics
                        .push(Diagnostic::error(file, t.line, "unbalanced brace at top level"));
                    break;
                };
                if let Some(header) = function_header(&toks[header_start..i]) {
                    match parse_function(source, file, &toks, header_start, header, i, close, cfg) {
                        Ok(f) => out.functions.push(f),
                        Err(d) => out.diagnostics.push(d),
                    }
                    header_start = close + 1;
                }
                i = close + 1;
            }
            _ => i += 1,
        }
    }
    out
}

struct Header {
    /// Relative to the header start.
    name: usize,
    params_open: usize,
    params_close: usize,
}

fn function_header(h: &[Token]) -> Option<Header> {
    if h.is_empty() || h.iter().any(|t| t.is("=") || t.is("typedef")) {
        return None;
    }
    // trailing annotations such as `__acquires(lock)` are not supported
    if !h.last()?.is(")") {
        return None;
    }
    // find the first top-level `(` preceded by an identifier
    let mut depth = 0i32;
    for (k, t) in h.iter().enumerate() {
        if t.is("(") {
            if depth == 0 && k > 0 && h[k - 1].is_ident() {
                let close = matching(h, k)?;
                if close == h.len() - 1 {
                    return Some(Header {
                        name: k - 1,
                        params_open: k,
                        params_close: close,
                    });
                }
            }
            depth += 1;
        } else if t.is(")") {
            depth -= 1;
        }
    }
    None
}

fn param_names(toks: &[Token]) -> Vec<String> {
    let mut names = Vec::new();
    let mut depth = 0i32;
    let mut segment: Vec<&Token> = Vec::new();
    let mut flush = |segment: &mut Vec<&Token>| {
        // `(*cb)(int)` names cb; otherwise the last identifier
        let pointer_name = segment
            .windows(3)
            .find(|w| w[0].is("(") && w[1].is("*") && w[2].is_ident())
            .map(|w| w[2].text.clone());
        let name = pointer_name.or_else(|| {
            let idents: Vec<_> = segment.iter().filter(|t| t.is_ident()).collect();
            // a lone typedef name such as `(void)` or `(u32)` carries no parameter
            let keywordless = !segment.iter().any(|t| t.kind == super::lexer::TokenKind::Keyword);
            if idents.len() == 1 && keywordless && segment.len() == 1 {
                None
            } else {
                idents.last().map(|t| t.text.clone())
            }
        });
        names.extend(name);
        segment.clear();
    };
    for t in toks {
        if t.is("(") || t.is("[") {
            depth += 1;
        } else if t.is(")") || t.is("]") {
            depth -= 1;
        }
        if t.is(",") && depth == 0 {
            flush(&mut segment);
        } else {
            segment.push(t);
        }
    }
    if !segment.is_empty() {
        flush(&mut segment);
    }
    names
}

#[allow(clippy::too_many_arguments)]
fn parse_function(
    source: &str,
    file: &str,
    toks: &[Token],
    start: usize,
    header: Header,
    open: usize,
    close: usize,
    cfg: &CodeConfig,
) -> Result<Function, Diagnostic> {
    let name = toks[start + header.name].text.clone();
    let start_line = toks[start].line;
    let id = FunctionId::new(file, &name, start_line);
    let params = param_names(&toks[start + header.params_open + 1..start + header.params_close]);

    let mut parser = BodyParser {
        source,
        file,
        toks,
        fn_start: start,
        function: id.clone(),
        cfg,
        statements: Vec::new(),
    };
    let (body, end) = parser.block(open)?;
    debug_assert_eq!(end, close + 1);
    let mut statements = parser.statements;

    // ordinals: statements arrive in token order, so lines never decrease
    let mut prev_line = 0;
    let mut ordinal = 0;
    for s in statements.iter_mut() {
        if s.line == prev_line {
            ordinal += 1;
        } else {
            ordinal = 0;
            prev_line = s.line;
        }
        s.id = StmtId { line: s.line, ordinal };
        for o in s.occurrences.iter_mut() {
            o.stmt = s.id;
        }
    }

    Ok(Function {
        id,
        name,
        file: file.to_string(),
        start_line,
        end_line: toks[close].line,
        params,
        statements,
        body,
        tokens: toks[start..=close].iter().map(|t| t.text.clone()).collect(),
        source: source[toks[start].start..toks[close].end].to_string(),
    })
}

struct BodyParser<'a> {
    source: &'a str,
    file: &'a str,
    toks: &'a [Token],
    fn_start: usize,
    function: FunctionId,
    cfg: &'a CodeConfig,
    statements: Vec<Statement>,
}

type Parsed = Result<(Node, usize), Diagnostic>;

impl BodyParser<'_> {
    fn err(&self, at: usize, reason: &str) -> Diagnostic {
        let line = self.toks.get(at).or(self.toks.last()).map_or(0, |t| t.line);
        Diagnostic::error(self.file, line, reason)
    }

    fn tok(&self, at: usize) -> Option<&Token> {
        self.toks.get(at)
    }

    fn is(&self, at: usize, text: &str) -> bool {
        self.tok(at).is_some_and(|t| t.is(text))
    }

    fn close_of(&self, open: usize) -> Result<usize, Diagnostic> {
        matching(self.toks, open).ok_or_else(|| self.err(open, "unbalanced bracket"))
    }

    fn expect(&self, at: usize, text: &str) -> Result<(), Diagnostic> {
        if self.is(at, text) {
            Ok(())
        } else {
            Err(self.err(at, &format!("expected `{text}`")))
        }
    }

    /// Records the statement spanning `toks[from..=to]`.
    fn push(&mut self, from: usize, to: usize, ctx: StmtContext) -> usize {
        let run = &self.toks[from..=to];
        let analysis = analyze(run, ctx, self.cfg);
        let raw = &self.source[run[0].start..run[run.len() - 1].end];
        let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        let line = run[0].line;
        let id = StmtId { line, ordinal: 0 };
        let occurrences = analysis
            .occurrences
            .into_iter()
            .map(|o| VariableOccurrence {
                key: o.key,
                stmt: id,
                span: TokenSpan {
                    start: o.span.start,
                    end: o.span.end,
                },
                is_declaration: o.is_declaration,
                role: o.role,
            })
            .collect();
        self.statements.push(Statement {
            id,
            function: self.function.clone(),
            kind: analysis.kind,
            tokens: run.iter().map(|t| t.text.clone()).collect(),
            text,
            line,
            func_token_start: from - self.fn_start,
            occurrences,
            assign: analysis.assign,
            jump: analysis.jump,
            initialized: analysis.initialized,
        });
        self.statements.len() - 1
    }

    /// `{ ... }` starting at `open`; returns the node and the index after `}`.
    fn block(&mut self, open: usize) -> Parsed {
        let close = self.close_of(open)?;
        let mut items = Vec::new();
        let mut at = open + 1;
        while at < close {
            let (node, next) = self.statement(at, close)?;
            if node != Node::Empty {
                items.push(node);
            }
            at = next;
        }
        Ok((Node::Block(items), close + 1))
    }

    /// End of a `;`-terminated run starting at `at`, bounded by `limit`.
    fn semicolon(&self, at: usize, limit: usize) -> Result<usize, Diagnostic> {
        let mut k = at;
        while k < limit {
            let t = &self.toks[k];
            if t.is(";") {
                return Ok(k);
            }
            if t.is("(") || t.is("[") || t.is("{") {
                k = self.close_of(k)?;
            }
            k += 1;
        }
        Err(self.err(at, "missing `;`"))
    }

    /// Parenthesised condition after a keyword at `kw`; returns the
    /// statement index and the index after `)`.
    fn condition(&mut self, kw: usize) -> Result<(usize, usize), Diagnostic> {
        self.expect(kw + 1, "(")?;
        let close = self.close_of(kw + 1)?;
        let idx = self.push(kw, close, StmtContext::Condition);
        Ok((idx, close + 1))
    }

    fn statement(&mut self, at: usize, limit: usize) -> Parsed {
        if at >= limit {
            return Err(self.err(at, "unexpected end of block"));
        }
        let t = &self.toks[at];
        match t.text.as_str() {
            "{" => self.block(at),
            ";" => Ok((Node::Empty, at + 1)),
            "if" => {
                let (cond, next) = self.condition(at)?;
                let (then, next) = self.statement(next, limit)?;
                if self.is(next, "else") && next < limit {
                    let (otherwise, next) = self.statement(next + 1, limit)?;
                    Ok((
                        Node::If {
                            cond,
                            then: Box::new(then),
                            otherwise: Some(Box::new(otherwise)),
                        },
                        next,
                    ))
                } else {
                    Ok((
                        Node::If {
                            cond,
                            then: Box::new(then),
                            otherwise: None,
                        },
                        next,
                    ))
                }
            }
            "while" => {
                let (cond, next) = self.condition(at)?;
                let (body, next) = self.statement(next, limit)?;
                Ok((
                    Node::While {
                        cond,
                        body: Box::new(body),
                    },
                    next,
                ))
            }
            "do" => {
                let (body, next) = self.statement(at + 1, limit)?;
                self.expect(next, "while")?;
                let (cond, after) = self.condition(next)?;
                self.expect(after, ";")?;
                Ok((
                    Node::DoWhile {
                        body: Box::new(body),
                        cond,
                    },
                    after + 1,
                ))
            }
            "for" => self.for_loop(at, limit),
            "switch" => {
                let (cond, next) = self.condition(at)?;
                let (body, next) = self.statement(next, limit)?;
                Ok((
                    Node::Switch {
                        cond,
                        body: Box::new(body),
                    },
                    next,
                ))
            }
            "case" | "default" => {
                let mut colon = at + 1;
                let mut depth = 0i32;
                while colon < limit {
                    let c = &self.toks[colon];
                    if c.is("(") || c.is("[") {
                        depth += 1;
                    } else if c.is(")") || c.is("]") {
                        depth -= 1;
                    } else if c.is(":") && depth == 0 {
                        break;
                    }
                    colon += 1;
                }
                if colon >= limit {
                    return Err(self.err(at, "case label without `:`"));
                }
                let (inner, next) = self.labelled(colon + 1, limit)?;
                Ok((
                    Node::Case {
                        default: t.is("default"),
                        inner: Box::new(inner),
                    },
                    next,
                ))
            }
            _ if t.is_ident() && self.is(at + 1, ":") => {
                let name = t.text.clone();
                let (inner, next) = self.labelled(at + 2, limit)?;
                Ok((
                    Node::Label {
                        name,
                        inner: Box::new(inner),
                    },
                    next,
                ))
            }
            _ if t.is_ident() && self.is(at + 1, "(") => {
                let close = self.close_of(at + 1)?;
                if self.is(close + 1, "{") {
                    // iterator macro: `list_for_each_entry(pos, head, member) { ... }`
                    let cond = self.push(at, close, StmtContext::MacroHead);
                    let (body, next) = self.block(close + 1)?;
                    return Ok((
                        Node::While {
                            cond,
                            body: Box::new(body),
                        },
                        next,
                    ));
                }
                self.simple(at, limit)
            }
            _ => self.simple(at, limit),
        }
    }

    /// The statement after a label; a label right before `}` labels nothing.
    fn labelled(&mut self, at: usize, limit: usize) -> Parsed {
        if at >= limit {
            Ok((Node::Empty, at))
        } else {
            self.statement(at, limit)
        }
    }

    fn simple(&mut self, at: usize, limit: usize) -> Parsed {
        let end = self.semicolon(at, limit)?;
        let idx = self.push(at, end, StmtContext::Simple);
        Ok((Node::Stmt(idx), end + 1))
    }

    fn for_loop(&mut self, at: usize, limit: usize) -> Parsed {
        self.expect(at + 1, "(")?;
        let close = self.close_of(at + 1)?;
        let first = self.semicolon(at + 2, close)?;
        let second = self.semicolon(first + 1, close)?;
        let init = (first > at + 2).then(|| self.push(at + 2, first, StmtContext::Simple));
        let cond = (second > first + 1).then(|| self.push(first + 1, second - 1, StmtContext::Condition));
        let step = (close > second + 1).then(|| self.push(second + 1, close - 1, StmtContext::Simple));
        let (body, next) = self.statement(close + 1, limit)?;
        Ok((
            Node::For {
                init,
                cond,
                step,
                body: Box::new(body),
            },
            next,
        ))
    }
}
