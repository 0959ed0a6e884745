//! Lexer and recursive-descent parser for the command language.
//!
//! ```text
//! command := read | insert | update | delete
//! read    := "READ" id "FIELDS" idlist "WHERE" pred
//! insert  := "INSERT" id "VALUES" "(" kvlist ")"
//! update  := "UPDATE" id "KEY" literal "SET" kvlist
//! delete  := "DELETE" id "KEY" literal
//! idlist  := id { "," id }
//! kvlist  := id "=" literal { "," id "=" literal }
//! pred    := conj { "OR" conj }
//! conj    := atom { "AND" atom }
//! atom    := "(" pred ")" | "TRUE" | "FALSE"
//!          | id cmpop literal | id "IS" [ "NOT" ] "NULL"
//! cmpop   := "=" | "!=" | "<" | "<=" | ">" | ">="
//! literal := 'string' | integer | YYYY-MM-DD | "NULL" | "TRUE" | "FALSE"
//! id      := [a-z_][a-z0-9_]*
//! ```
//!
//! Keywords are upper-case and case-sensitive. Inside a string `''`
//! stands for one quote.

use std::fmt;

use thiserror::Error;

use super::ast::{Command, CommandAst, Pred};
use crate::calculus::CmpOp;
use crate::canonical::Digest;
use crate::scalar::{parse_date, Scalar, Values};

pub const MAX_COMMAND_BYTES: usize = 64 * 1024;
/// Maximum parenthesis nesting in a predicate.
pub const MAX_PRED_DEPTH: usize = 64;

const KEYWORDS: [&str; 16] = [
    "READ", "FIELDS", "WHERE", "INSERT", "VALUES", "UPDATE", "KEY", "SET", "DELETE", "AND", "OR",
    "NOT", "IS", "NULL", "TRUE", "FALSE",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownKeyword,
    LimitExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self.kind {
            ParseErrorKind::Syntax => "SYNTAX_ERROR",
            ParseErrorKind::UnknownKeyword => "UNKNOWN_KEYWORD",
            ParseErrorKind::LimitExceeded => "LIMIT_EXCEEDED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Keyword(&'static str),
    Ident(String),
    Str(String),
    Int(i64),
    Date(chrono::NaiveDate),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Keyword(k) => write!(f, "{k}"),
            Tok::Ident(i) => write!(f, "identifier {i}"),
            Tok::Str(_) => f.write_str("string literal"),
            Tok::Int(i) => write!(f, "{i}"),
            Tok::Date(d) => write!(f, "{d}"),
            Tok::Op(op) => f.write_str(op.symbol()),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Comma => f.write_str(","),
            Tok::End => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'s> {
    chars: std::iter::Peekable<std::str::CharIndices<'s>>,
    src: &'s str,
    line: usize,
    column: usize,
}

impl<'s> Lexer<'s> {
    fn new(src: &'s str) -> Self {
        Lexer {
            chars: src.char_indices().peekable(),
            src,
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
        }
        next
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn err(&self, kind: ParseErrorKind, line: usize, column: usize, msg: impl Into<String>) -> ParseError {
        ParseError {
            kind,
            line,
            column,
            message: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.peek(), Some(' ' | '\t' | '\r' | '\n')) {
                self.bump();
            }
            let (line, column) = (self.line, self.column);
            let Some((start, c)) = self.bump() else {
                out.push(Token {
                    tok: Tok::End,
                    line,
                    column,
                });
                return Ok(out);
            };
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '=' => Tok::Op(CmpOp::Eq),
                '!' if self.peek() == Some('=') => {
                    self.bump();
                    Tok::Op(CmpOp::Ne)
                }
                '<' | '>' => {
                    let eq = self.peek() == Some('=');
                    if eq {
                        self.bump();
                    }
                    Tok::Op(match (c, eq) {
                        ('<', false) => CmpOp::Lt,
                        ('<', true) => CmpOp::Le,
                        ('>', false) => CmpOp::Gt,
                        _ => CmpOp::Ge,
                    })
                }
                '\'' => {
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => {
                                return Err(self.err(ParseErrorKind::Syntax, line, column, "unterminated string"))
                            }
                            Some((_, '\'')) if self.peek() == Some('\'') => {
                                self.bump();
                                s.push('\'');
                            }
                            Some((_, '\'')) => break,
                            Some((_, ch)) => s.push(ch),
                        }
                    }
                    Tok::Str(s)
                }
                '-' | '0'..='9' => {
                    let mut end = start + c.len_utf8();
                    while let Some(&(i, ch)) = self.chars.peek() {
                        if ch.is_ascii_digit() || ch == '-' {
                            self.bump();
                            end = i + 1;
                        } else {
                            break;
                        }
                    }
                    let text = &self.src[start..end];
                    if let Some(d) = parse_date(text) {
                        Tok::Date(d)
                    } else if text.len() > 1 || c != '-' {
                        let bad = || self.err(ParseErrorKind::Syntax, line, column, format!("bad number or date {text:?}"));
                        let digits = text.strip_prefix('-').unwrap_or(text);
                        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                            return Err(bad());
                        }
                        Tok::Int(text.parse().map_err(|_| bad())?)
                    } else {
                        return Err(self.err(ParseErrorKind::Syntax, line, column, "stray '-'"));
                    }
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut end = start + 1;
                    while let Some(&(i, ch)) = self.chars.peek() {
                        if ch.is_ascii_alphanumeric() || ch == '_' {
                            self.bump();
                            end = i + 1;
                        } else {
                            break;
                        }
                    }
                    let word = &self.src[start..end];
                    if c.is_ascii_uppercase() {
                        match KEYWORDS.iter().find(|k| **k == word) {
                            Some(k) => Tok::Keyword(k),
                            None => {
                                return Err(self.err(
                                    ParseErrorKind::UnknownKeyword,
                                    line,
                                    column,
                                    format!("unknown keyword {word:?}"),
                                ))
                            }
                        }
                    } else if word.bytes().any(|b| b.is_ascii_uppercase()) {
                        return Err(self.err(
                            ParseErrorKind::Syntax,
                            line,
                            column,
                            format!("identifier {word:?} must be lower-case"),
                        ));
                    } else {
                        Tok::Ident(word.to_string())
                    }
                }
                other => {
                    return Err(self.err(ParseErrorKind::Syntax, line, column, format!("unexpected character {other:?}")))
                }
            };
            out.push(Token { tok, line, column });
        }
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, kind: ParseErrorKind, msg: impl Into<String>) -> ParseError {
        ParseError {
            kind,
            line: t.line,
            column: t.column,
            message: msg.into(),
        }
    }

    fn unexpected(&self, t: &Token, wanted: &str) -> ParseError {
        self.error_at(t, ParseErrorKind::Syntax, format!("expected {wanted}, found {}", t.tok))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Keyword(k) if k == kw => Ok(()),
            _ => Err(self.unexpected(&t, kw)),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek().tok, Tok::Keyword(k) if k == kw)
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok(s),
            _ => Err(self.unexpected(&t, "an identifier")),
        }
    }

    fn literal(&mut self) -> Result<Scalar, ParseError> {
        let t = self.next();
        Ok(match t.tok {
            Tok::Str(s) => Scalar::Str(s),
            Tok::Int(i) => Scalar::Int(i),
            Tok::Date(d) => Scalar::Date(d),
            Tok::Keyword("NULL") => Scalar::Null,
            Tok::Keyword("TRUE") => Scalar::Bool(true),
            Tok::Keyword("FALSE") => Scalar::Bool(false),
            _ => return Err(self.unexpected(&t, "a literal")),
        })
    }

    fn comma(&mut self) -> bool {
        if self.peek().tok == Tok::Comma {
            self.next();
            true
        } else {
            false
        }
    }

    fn kvlist(&mut self) -> Result<Values, ParseError> {
        let mut values = Values::new();
        loop {
            let at = self.peek().clone();
            let field = self.ident()?;
            let t = self.next();
            if t.tok != Tok::Op(CmpOp::Eq) {
                return Err(self.unexpected(&t, "="));
            }
            let v = self.literal()?;
            if values.insert(field.clone(), v).is_some() {
                return Err(self.error_at(&at, ParseErrorKind::Syntax, format!("field {field} assigned twice")));
            }
            if !self.comma() {
                return Ok(values);
            }
        }
    }

    fn command(&mut self) -> Result<Command, ParseError> {
        let t = self.next();
        let cmd = match t.tok {
            Tok::Keyword("READ") => {
                let registry = self.ident()?;
                self.keyword("FIELDS")?;
                let mut fields = Vec::new();
                loop {
                    let at = self.peek().clone();
                    let f = self.ident()?;
                    if fields.contains(&f) {
                        return Err(self.error_at(&at, ParseErrorKind::Syntax, format!("field {f} listed twice")));
                    }
                    fields.push(f);
                    if !self.comma() {
                        break;
                    }
                }
                self.keyword("WHERE")?;
                let selection = self.pred(0)?;
                Command::Read {
                    registry,
                    fields,
                    selection,
                }
            }
            Tok::Keyword("INSERT") => {
                let registry = self.ident()?;
                self.keyword("VALUES")?;
                let t = self.next();
                if t.tok != Tok::LParen {
                    return Err(self.unexpected(&t, "("));
                }
                let values = self.kvlist()?;
                let t = self.next();
                if t.tok != Tok::RParen {
                    return Err(self.unexpected(&t, ", or )"));
                }
                Command::Insert { registry, values }
            }
            Tok::Keyword("UPDATE") => {
                let registry = self.ident()?;
                self.keyword("KEY")?;
                let key = self.literal()?;
                self.keyword("SET")?;
                let set = self.kvlist()?;
                Command::Update { registry, key, set }
            }
            Tok::Keyword("DELETE") => {
                let registry = self.ident()?;
                self.keyword("KEY")?;
                let key = self.literal()?;
                Command::Delete { registry, key }
            }
            _ => return Err(self.unexpected(&t, "READ, INSERT, UPDATE or DELETE")),
        };
        let t = self.next();
        if t.tok != Tok::End {
            return Err(self.unexpected(&t, "end of input"));
        }
        Ok(cmd)
    }

    fn check_depth(&self, depth: usize) -> Result<(), ParseError> {
        if depth > MAX_PRED_DEPTH {
            return Err(self.error_at(
                self.peek(),
                ParseErrorKind::LimitExceeded,
                format!("predicate nesting exceeds {MAX_PRED_DEPTH}"),
            ));
        }
        Ok(())
    }

    fn pred(&mut self, depth: usize) -> Result<Pred, ParseError> {
        let mut parts = vec![self.conj(depth)?];
        while self.at_keyword("OR") {
            self.next();
            parts.push(self.conj(depth)?);
        }
        Ok(if parts.len() == 1 { parts.remove(0) } else { Pred::Or(parts) })
    }

    fn conj(&mut self, depth: usize) -> Result<Pred, ParseError> {
        let mut parts = vec![self.atom(depth)?];
        while self.at_keyword("AND") {
            self.next();
            parts.push(self.atom(depth)?);
        }
        Ok(if parts.len() == 1 { parts.remove(0) } else { Pred::And(parts) })
    }

    fn atom(&mut self, depth: usize) -> Result<Pred, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::LParen => {
                self.check_depth(depth + 1)?;
                let p = self.pred(depth + 1)?;
                let close = self.next();
                if close.tok != Tok::RParen {
                    return Err(self.unexpected(&close, ")"));
                }
                Ok(p)
            }
            Tok::Keyword("TRUE") => Ok(Pred::True),
            Tok::Keyword("FALSE") => Ok(Pred::False),
            Tok::Ident(field) => {
                let t = self.next();
                match t.tok {
                    Tok::Op(op) => Ok(Pred::Cmp {
                        field,
                        op,
                        value: self.literal()?,
                    }),
                    Tok::Keyword("IS") => {
                        let negated = self.at_keyword("NOT");
                        if negated {
                            self.next();
                        }
                        self.keyword("NULL")?;
                        Ok(if negated { Pred::IsNotNull(field) } else { Pred::IsNull(field) })
                    }
                    _ => Err(self.unexpected(&t, "a comparison operator or IS")),
                }
            }
            _ => Err(self.unexpected(&t, "a condition")),
        }
    }
}

/// Parses one command.
pub fn parse(text: &str) -> Result<CommandAst, ParseError> {
    if text.len() > MAX_COMMAND_BYTES {
        return Err(ParseError {
            kind: ParseErrorKind::LimitExceeded,
            line: 1,
            column: 1,
            message: format!("command exceeds {MAX_COMMAND_BYTES} bytes"),
        });
    }
    let toks = Lexer::new(text).tokens()?;
    let command = Parser { toks, pos: 0 }.command()?;
    Ok(CommandAst {
        command,
        source_text: text.to_string(),
        digest: Digest::of(text.as_bytes()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_with_null_check() {
        let ast = parse("READ rc FIELDS nin,adr WHERE married_to IS NULL").unwrap();
        assert_eq!(
            ast.command,
            Command::Read {
                registry: "rc".into(),
                fields: vec!["nin".into(), "adr".into()],
                selection: Pred::IsNull("married_to".into()),
            }
        );
    }

    #[test]
    fn empty_input_is_a_syntax_error() {
        let e = parse("").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        assert_eq!((e.line, e.column), (1, 1));
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("READ rc FIELDS nin\nWHERE nin === 'x'").unwrap_err();
        assert_eq!((e.line, e.column), (2, 12));
        let e = parse("READ rc FIELDS nin WHERE nin = 'x' LIMIT 3").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownKeyword);
        assert_eq!(e.column, 36);
        let e = parse("read rc FIELDS nin WHERE TRUE").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        let e = parse("Read rc FIELDS nin WHERE TRUE").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownKeyword);
    }

    #[test]
    fn literals() {
        let ast = parse("INSERT t VALUES (a = 'it''s', b = -12, c = 2026-07-03, d = NULL, e = TRUE)").unwrap();
        let Command::Insert { values, .. } = ast.command else { panic!() };
        assert_eq!(values["a"], Scalar::str("it's"));
        assert_eq!(values["b"], Scalar::Int(-12));
        assert!(matches!(values["c"], Scalar::Date(_)));
        assert_eq!(values["d"], Scalar::Null);
        assert_eq!(values["e"], Scalar::Bool(true));
        assert!(parse("INSERT t VALUES (a = 2026-02-30)").is_err());
        assert!(parse("INSERT t VALUES (a = 1, a = 2)").is_err());
    }

    #[test]
    fn limits() {
        let big = format!("READ rc FIELDS nin WHERE nin = '{}'", "x".repeat(MAX_COMMAND_BYTES));
        assert_eq!(parse(&big).unwrap_err().kind, ParseErrorKind::LimitExceeded);
        let deep = format!("READ rc FIELDS nin WHERE {}TRUE{}", "(".repeat(MAX_PRED_DEPTH + 1), ")".repeat(MAX_PRED_DEPTH + 1));
        assert_eq!(parse(&deep).unwrap_err().kind, ParseErrorKind::LimitExceeded);
        let ok = format!("READ rc FIELDS nin WHERE {}TRUE{}", "(".repeat(MAX_PRED_DEPTH), ")".repeat(MAX_PRED_DEPTH));
        assert!(parse(&ok).is_ok());
    }

    #[test]
    fn render_round_trips() {
        for src in [
            "READ rc FIELDS nin WHERE (a = 1 OR b = 2) AND c != 'x' OR d IS NOT NULL",
            "UPDATE rc KEY 'E1' SET adr = 'Trubarjeva 1', married_to = NULL",
            "DELETE exam_register KEY 'E1'",
            "READ rc FIELDS nin WHERE ((TRUE))",
        ] {
            let ast = parse(src).unwrap();
            let again = parse(&ast.command.render()).unwrap();
            assert_eq!(ast.command, again.command, "{src}");
        }
    }
}
