//! Parsed C functions: statements, tokens and variable occurrences.
//!
//! Member-access chains (`a->b->c`, and `a.b` unless disabled) are kept whole:
//! one occurrence covers the entire chain and its receiver produces no
//! separate occurrence.

pub mod lexer;
mod occurrence;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use occurrence::{occurrence_count, occurrences};
pub use parser::{extract_functions, extract_functions_from, Extraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    /// Fuse `a.b` like `a->b`.
    pub fuse_dot_access: bool,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self { fuse_dot_access: true }
    }
}

/// `file:name:start_line`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionId(pub String);

impl FunctionId {
    pub fn new(file: &str, name: &str, start_line: u32) -> Self {
        Self(format!("{file}:{name}:{start_line}"))
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Position of a statement inside its function: source line plus the
/// ordinal among statements starting on that line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StmtId {
    pub line: u32,
    pub ordinal: u32,
}

impl fmt::Display for StmtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ordinal == 0 {
            write!(f, "L{}", self.line)
        } else {
            write!(f, "L{}.{}", self.line, self.ordinal)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    Declaration,
    Assignment,
    Call,
    Condition,
    Return,
    Jump,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jump {
    Goto(String),
    Break,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Definition,
    Use,
    Unknown,
}

/// Inclusive token range within a statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableOccurrence {
    pub key: String,
    pub stmt: StmtId,
    pub span: TokenSpan,
    pub is_declaration: bool,
    pub role: Role,
}

/// The `lhs = rhs` view of a statement used by the slicer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignShape {
    /// Occurrence index of the assigned variable, when the left side is a
    /// single variable.
    pub lhs: Option<usize>,
    /// Occurrence index of the right side when it is a single operand
    /// (plain variable or member chain, optionally under `&`, `*`, casts).
    pub unary_rhs: Option<usize>,
    /// `+=`, `++` and friends.
    pub compound: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: StmtId,
    pub function: FunctionId,
    pub kind: StatementKind,
    pub tokens: Vec<String>,
    /// Source spelling with whitespace runs collapsed to one space.
    pub text: String,
    pub line: u32,
    /// Index of the first token in [`Function::tokens`].
    pub func_token_start: usize,
    pub occurrences: Vec<VariableOccurrence>,
    pub assign: Option<AssignShape>,
    pub jump: Option<Jump>,
    /// Declarations only: whether any declarator has an initializer.
    pub initialized: bool,
}

impl Statement {
    pub fn is_return(&self) -> bool {
        self.kind == StatementKind::Return
    }

    /// Statements the slicer may collect: everything except declarations
    /// without initializers.
    pub fn is_normal(&self) -> bool {
        !(self.kind == StatementKind::Declaration && !self.initialized)
    }

    /// Occurrences of `key` that are not part of a declaration.
    pub fn uses_of<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a VariableOccurrence> {
        self.occurrences
            .iter()
            .filter(move |o| o.key == key && !o.is_declaration)
    }

    pub fn mentions(&self, key: &str) -> bool {
        self.uses_of(key).next().is_some()
    }

    pub fn defines(&self, key: &str) -> bool {
        self.occurrences
            .iter()
            .any(|o| o.key == key && o.role == Role::Definition)
    }

    pub fn lhs_key(&self) -> Option<&str> {
        let i = self.assign?.lhs?;
        Some(&self.occurrences[i].key)
    }

    pub fn unary_rhs_key(&self) -> Option<&str> {
        let i = self.assign?.unary_rhs?;
        Some(&self.occurrences[i].key)
    }
}

/// Control structure of a function body. Leaves index into
/// [`Function::statements`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Stmt(usize),
    Block(Vec<Node>),
    If {
        cond: usize,
        then: Box<Node>,
        otherwise: Option<Box<Node>>,
    },
    /// `while` loops and iterator macros such as `list_for_each_entry(...) { }`.
    While {
        cond: usize,
        body: Box<Node>,
    },
    DoWhile {
        body: Box<Node>,
        cond: usize,
    },
    For {
        init: Option<usize>,
        cond: Option<usize>,
        step: Option<usize>,
        body: Box<Node>,
    },
    Switch {
        cond: usize,
        body: Box<Node>,
    },
    Label {
        name: String,
        inner: Box<Node>,
    },
    Case {
        default: bool,
        inner: Box<Node>,
    },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub id: FunctionId,
    pub name: String,
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
    pub params: Vec<String>,
    /// Ordered by (line, ordinal).
    pub statements: Vec<Statement>,
    pub body: Node,
    /// Every token of the definition, header included.
    pub tokens: Vec<String>,
    pub source: String,
}

impl Function {
    pub fn statement_index(&self, id: StmtId) -> Option<usize> {
        self.statements.binary_search_by(|s| s.id.cmp(&id)).ok()
    }

    pub fn statement(&self, id: StmtId) -> Option<&Statement> {
        self.statement_index(id).map(|i| &self.statements[i])
    }

    /// Statements starting on `line`.
    pub fn statements_at(&self, line: u32) -> impl Iterator<Item = (usize, &Statement)> {
        self.statements.iter().enumerate().filter(move |(_, s)| s.line == line)
    }

    /// All variable keys mentioned by the function, sorted.
    pub fn keys(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self
            .statements
            .iter()
            .flat_map(|s| s.occurrences.iter().map(|o| o.key.as_str()))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }
}

/// Reference to one occurrence: statement index and occurrence index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OccRef {
    pub stmt: usize,
    pub occ: usize,
}

impl OccRef {
    pub fn get<'a>(&self, func: &'a Function) -> (&'a Statement, &'a VariableOccurrence) {
        let stmt = &func.statements[self.stmt];
        (stmt, &stmt.occurrences[self.occ])
    }
}
