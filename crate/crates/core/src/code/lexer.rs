//! A small C lexer. Comments and preprocessor directives are dropped;
//! everything else becomes a token carrying its source line and byte span.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Ident,
    Keyword,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub line: u32,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident
    }
}

const KEYWORDS: &[&str] = &[
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Bool",
    "bool",
    "__inline",
    "__inline__",
    "__restrict",
    "__volatile__",
    "asm",
    "__asm__",
    "typeof",
    "__typeof__",
    "_Alignof",
    "alignof",
    "true",
    "false",
];

/// Built-in type names and specifier keywords that may start a declaration.
pub(crate) const TYPE_KEYWORDS: &[&str] = &[
    "char",
    "const",
    "double",
    "enum",
    "extern",
    "float",
    "int",
    "long",
    "register",
    "short",
    "signed",
    "static",
    "struct",
    "union",
    "unsigned",
    "void",
    "volatile",
    "_Bool",
    "bool",
    "inline",
    "__inline",
    "__inline__",
    "restrict",
    "__restrict",
    "auto",
    "typeof",
    "__typeof__",
];

pub fn is_keyword(text: &str) -> bool {
    KEYWORDS.contains(&text)
}

// Longest first.
const PUNCTUATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "##",
];

pub fn tokenize(source: &str) -> Vec<Token> {
    tokenize_from(source, 1)
}

/// Tokenizes `source`, numbering lines from `first_line`.
pub fn tokenize_from(source: &str, first_line: u32) -> Vec<Token> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = first_line;
    // true while only whitespace has been seen on the current line
    let mut line_start = true;

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'#' && line_start {
            // directive, honouring backslash continuations
            while i < bytes.len() && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] == b'\n' {
                    line += 1;
                    i += 2;
                    continue;
                }
                if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
                    let (ni, nl) = skip_block_comment(bytes, i, line);
                    i = ni;
                    line = nl;
                    continue;
                }
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let (ni, nl) = skip_block_comment(bytes, i, line);
            i = ni;
            line = nl;
            continue;
        }
        line_start = false;
        let start = i;
        let tok_line = line;
        let kind = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            if is_keyword(&source[start..i]) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() {
                let b = bytes[i];
                let exponent_sign = (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P');
                if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else if c == b'"' || c == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != c {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            i = (i + 1).min(bytes.len());
            if c == b'"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else {
            let rest = &source[i..];
            let len = PUNCTUATORS
                .iter()
                .find(|p| rest.starts_with(*p))
                .map(|p| p.len())
                .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
            i += len;
            TokenKind::Punct
        };
        tokens.push(Token {
            text: source[start..i].to_string(),
            kind,
            line: tok_line,
            start,
            end: i,
        });
    }
    tokens
}

fn skip_block_comment(bytes: &[u8], mut i: usize, mut line: u32) -> (usize, u32) {
    i += 2;
    while i < bytes.len() {
        if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
            return (i + 2, line);
        }
        if bytes[i] == b'\n' {
            line += 1;
        }
        i += 1;
    }
    (i, line)
}
