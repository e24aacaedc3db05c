//! Tokenizer for the supported Verilog subset.
//!
//! Comments are dropped. Preprocessor directives (`` `define ``,
//! `` `include ``, `` `timescale `` and friends) are stripped up to the end
//! of the line and reported as warnings; they are never expanded. A macro
//! *use* such as `` `WIDTH `` inside an expression is kept as a number-like
//! token so expressions stay well formed.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::Diagnostic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: u32,
    pub column: u32,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn is_keyword(&self, text: &str) -> bool {
        self.is(TokenKind::Keyword, text)
    }

    pub fn is_punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuation, text)
    }

    pub fn is_op(&self, text: &str) -> bool {
        self.is(TokenKind::Operator, text)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}` at {}:{}", self.text, self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal character {found:?} at line {line}, column {column}")]
pub struct LexError {
    pub line: u32,
    pub column: u32,
    pub found: String,
}

pub const KEYWORDS: &[&str] = &[
    "module",
    "endmodule",
    "macromodule",
    "input",
    "output",
    "inout",
    "wire",
    "reg",
    "integer",
    "signed",
    "parameter",
    "localparam",
    "assign",
    "always",
    "always_ff",
    "always_comb",
    "always_latch",
    "posedge",
    "negedge",
    "or",
    "if",
    "else",
    "case",
    "casez",
    "casex",
    "endcase",
    "default",
    "for",
    "while",
    "repeat",
    "forever",
    "begin",
    "end",
    "initial",
    "function",
    "endfunction",
    "task",
    "endtask",
    "generate",
    "endgenerate",
    "genvar",
    "fork",
    "join",
    "specify",
    "endspecify",
    "tri",
    "supply0",
    "supply1",
    "real",
    "time",
    "event",
    "defparam",
];

// Longest first so maximal munch works with a simple prefix scan.
const OPERATORS: &[&str] = &[
    "<<<", ">>>", "===", "!==", "**", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "~&", "~|",
    "~^", "^~", "+", "-", "*", "/", "%", "&", "|", "^", "~", "!", "<", ">", "?", "=",
];

const PUNCTUATION: &[char] = &['(', ')', '[', ']', '{', '}', ';', ',', '.', '#', ':', '@'];

/// Tokens plus warnings about stripped or skipped input.
#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub warnings: Vec<Diagnostic>,
}

/// Strict tokenization: any illegal character is an error.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    lex(source, true).map(|l| l.tokens)
}

/// Tolerant tokenization: illegal characters are skipped and recorded as
/// warnings. Never fails.
pub fn tokenize_tolerant(source: &str) -> Lexed {
    match lex(source, false) {
        Ok(lexed) => lexed,
        Err(_) => unreachable!("tolerant lexing does not fail"),
    }
}

pub(crate) fn lex(source: &str, strict: bool) -> Result<Lexed, LexError> {
    Lexer::new(source, strict).run()
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    column: u32,
    strict: bool,
    out: Lexed,
    _src: &'a str,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, strict: bool) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
            strict,
            out: Lexed::default(),
            _src: src,
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn push(&mut self, kind: TokenKind, text: String, line: u32, column: u32) {
        self.out.tokens.push(Token {
            kind,
            text,
            line,
            column,
        });
    }

    fn illegal(&mut self, found: String, line: u32, column: u32) -> Result<(), LexError> {
        if self.strict {
            return Err(LexError {
                line,
                column,
                found,
            });
        }
        self.out.warnings.push(Diagnostic::new(
            line,
            column,
            format!("skipped illegal character {found:?}"),
        ));
        Ok(())
    }

    fn run(mut self) -> Result<Lexed, LexError> {
        while let Some(c) = self.peek(0) {
            let (line, column) = (self.line, self.column);
            if c.is_whitespace() {
                self.bump();
            } else if c == '/' && self.peek(1) == Some('/') {
                while let Some(c) = self.peek(0) {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c == '/' && self.peek(1) == Some('*') {
                self.bump();
                self.bump();
                let mut closed = false;
                while self.peek(0).is_some() {
                    if self.peek(0) == Some('*') && self.peek(1) == Some('/') {
                        self.bump();
                        self.bump();
                        closed = true;
                        break;
                    }
                    self.bump();
                }
                if !closed {
                    self.illegal("unterminated block comment".into(), line, column)?;
                }
            } else if c == '`' {
                self.directive(line, column)?;
            } else if c == '"' {
                self.string(line, column)?;
            } else if is_ident_start(c) || c == '$' || c == '\\' {
                self.ident(line, column);
            } else if c.is_ascii_digit() || (c == '\'' && self.based_follows(1)) {
                self.number(line, column);
            } else if c == '@' {
                self.bump();
                // `@` only introduces an event control: `@(`, `@*` or `@name`.
                let mut k = 0;
                while matches!(self.peek(k), Some(w) if w == ' ' || w == '\t') {
                    k += 1;
                }
                match self.peek(k) {
                    Some(n) if n == '(' || n == '*' || is_ident_start(n) => {
                        self.push(TokenKind::Punctuation, "@".into(), line, column);
                    }
                    other => {
                        let mut found = String::from("@");
                        if let Some(o) = other {
                            found.push(o);
                        }
                        self.illegal(found, line, column)?;
                    }
                }
            } else if let Some(op) = OPERATORS
                .iter()
                .find(|op| op.chars().enumerate().all(|(i, oc)| self.peek(i) == Some(oc)))
            {
                for _ in 0..op.chars().count() {
                    self.bump();
                }
                self.push(TokenKind::Operator, (*op).to_string(), line, column);
            } else if PUNCTUATION.contains(&c) {
                self.bump();
                self.push(TokenKind::Punctuation, c.to_string(), line, column);
            } else {
                self.bump();
                self.illegal(c.to_string(), line, column)?;
            }
        }
        Ok(self.out)
    }

    fn based_follows(&self, off: usize) -> bool {
        let mut k = off;
        if matches!(self.peek(k), Some('s' | 'S')) {
            k += 1;
        }
        matches!(
            self.peek(k),
            Some('b' | 'B' | 'o' | 'O' | 'd' | 'D' | 'h' | 'H')
        )
    }

    fn directive(&mut self, line: u32, column: u32) -> Result<(), LexError> {
        self.bump();
        let mut name = String::new();
        while let Some(c) = self.peek(0) {
            if !is_ident_char(c) {
                break;
            }
            name.push(c);
            self.bump();
        }
        if name.is_empty() {
            return self.illegal("`".into(), line, column);
        }
        const DIRECTIVES: &[&str] = &[
            "define",
            "undef",
            "include",
            "timescale",
            "ifdef",
            "ifndef",
            "else",
            "elsif",
            "endif",
            "default_nettype",
            "resetall",
            "celldefine",
            "endcelldefine",
            "line",
            "pragma",
        ];
        if DIRECTIVES.contains(&name.as_str()) {
            // Strip the rest of the line, honouring `\` continuations.
            while let Some(c) = self.peek(0) {
                if c == '\\' && self.peek(1) == Some('\n') {
                    self.bump();
                    self.bump();
                    continue;
                }
                if c == '\n' {
                    break;
                }
                self.bump();
            }
            self.out.warnings.push(Diagnostic::new(
                line,
                column,
                format!("preprocessor directive `{name} stripped"),
            ));
        } else {
            self.push(TokenKind::Number, format!("`{name}"), line, column);
        }
        Ok(())
    }

    fn string(&mut self, line: u32, column: u32) -> Result<(), LexError> {
        self.bump();
        let mut text = String::from('"');
        let mut closed = false;
        while let Some(c) = self.bump() {
            text.push(c);
            if c == '\\' {
                if let Some(e) = self.bump() {
                    text.push(e);
                }
            } else if c == '"' {
                closed = true;
                break;
            } else if c == '\n' {
                break;
            }
        }
        if closed {
            self.push(TokenKind::Number, text, line, column);
            Ok(())
        } else {
            self.illegal("unterminated string".into(), line, column)
        }
    }

    fn ident(&mut self, line: u32, column: u32) {
        let mut text = String::new();
        if self.peek(0) == Some('\\') {
            // Escaped identifier runs to whitespace.
            self.bump();
            while let Some(c) = self.peek(0) {
                if c.is_whitespace() {
                    break;
                }
                text.push(c);
                self.bump();
            }
        } else {
            while let Some(c) = self.peek(0) {
                if !is_ident_char(c) {
                    break;
                }
                text.push(c);
                self.bump();
            }
        }
        if text.is_empty() {
            text.push('\\');
        }
        let kind = if KEYWORDS.contains(&text.as_str()) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.push(kind, text, line, column);
    }

    fn number(&mut self, line: u32, column: u32) {
        let mut text = String::new();
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() || c == '_' {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        // Real literal.
        if self.peek(0) == Some('.') && matches!(self.peek(1), Some(d) if d.is_ascii_digit()) {
            text.push('.');
            self.bump();
            while let Some(c) = self.peek(0) {
                if c.is_ascii_digit() || c == '_' {
                    text.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
        }
        // Size followed by a base, possibly separated by whitespace.
        let mut k = 0;
        while matches!(self.peek(k), Some(' ' | '\t')) {
            k += 1;
        }
        if self.peek(k) == Some('\'') && self.based_follows(k + 1) {
            for _ in 0..k {
                self.bump();
            }
            text.push('\'');
            self.bump();
            if matches!(self.peek(0), Some('s' | 'S')) {
                text.push(self.bump().unwrap_or('s'));
            }
            if let Some(b) = self.bump() {
                text.push(b);
            }
            while matches!(self.peek(0), Some(' ' | '\t')) {
                self.bump();
            }
            while let Some(c) = self.peek(0) {
                if c.is_ascii_hexdigit() || matches!(c, '_' | 'x' | 'X' | 'z' | 'Z' | '?') {
                    text.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.push(TokenKind::Number, text, line, column);
    }
}
