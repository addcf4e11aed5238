//! Surface syntax: lexer, recursive-descent parser and `#param` headers.
//!
//! ```text
//! program := stmt (';' stmt)* ';'?
//! stmt    := 'skip' | ident '<-' expr | 'observe' expr
//!          | 'if' expr block ('else' (block | stmt))?
//!          | 'choice' expr block block | block ('[' expr ']' block)?
//!          | 'uniform' expr 'as' ident block | 'while' expr block
//!          | 'flip' ident expr
//! block   := '{' program '}'
//! ```
//!
//! `n/d` written without spaces is a rational literal, `1/3` is therefore a
//! constant while `1 / 3` is a division.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use dashu_int::{IBig, UBig};
use dashu_ratio::RBig;
use thiserror::Error;

use crate::ast::{build, BinOp, Command, Expr, UnOp};
use crate::value::{Ident, Value, RESERVED_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: `{name}` takes {expected} argument(s), got {found}")]
    Arity { line: usize, col: usize, name: String, expected: usize, found: usize },
    #[error("parameter error: {0}")]
    Param(String),
}

impl ParseError {
    /// True for malformed text, false for well-formed text that is rejected.
    pub fn is_syntax(&self) -> bool {
        !matches!(self, ParseError::Param(_))
    }
}

const KEYWORDS: &[&str] = &[
    "skip", "observe", "if", "else", "choice", "uniform", "as", "while", "flip", "true", "false",
    "floor", "abs", "is_prime", "is_even",
];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Value),
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "<-", "<=", ">=", "!=", "&&", "||", ";", "{", "}", "[", "]", "(", ")", ",", "+", "-", "*", "/",
    "%", "=", "<", ">", "!",
];

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, col, msg: msg.into() }
}

fn lex(src: &str, first_line: usize) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let (mut i, mut line, mut line_start) = (0, first_line, 0);
    while i < bytes.len() {
        let c = bytes[i];
        let col = i - line_start + 1;
        if c == b'\n' {
            line += 1;
            i += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let int_part = &src[start..i];
            let value = if i + 1 < bytes.len() && bytes[i] == b'/' && bytes[i + 1].is_ascii_digit() {
                let den_start = i + 1;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let den: UBig = src[den_start..i].parse().unwrap();
                if den == UBig::ZERO {
                    return Err(syntax(line, col, "rational literal with zero denominator"));
                }
                Value::Rat(RBig::from_parts(int_part.parse().unwrap(), den))
            } else if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                let frac_start = i + 1;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = format!("{int_part}{}", &src[frac_start..i]);
                let scale = UBig::from(10u8).pow(i - frac_start);
                Value::Rat(RBig::from_parts(digits.parse().unwrap(), scale))
            } else {
                Value::Int(int_part.parse::<IBig>().unwrap())
            };
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(syntax(line, col, "malformed number"));
            }
            toks.push(Token { tok: Tok::Num(value), start, end: i, line, col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'\'')
            {
                i += 1;
            }
            toks.push(Token { tok: Tok::Ident(src[start..i].to_string()), start, end: i, line, col });
            continue;
        }
        let rest = &src[i..];
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                toks.push(Token { tok: Tok::Sym(s), start, end: i, line, col });
            }
            None => {
                let ch = rest.chars().next().unwrap();
                return Err(syntax(line, col, format!("unexpected character `{ch}`")));
            }
        }
    }
    let col = i - line_start + 1;
    toks.push(Token { tok: Tok::Eof, start: i, end: i, line, col });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> ParseError {
        let t = self.peek();
        let found = match &t.tok {
            Tok::Num(v) => format!("`{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        };
        syntax(t.line, t.col, format!("{}, found {found}", msg.into()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(t) if t == kw)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{s}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{kw}`")))
        }
    }

    fn ident(&mut self) -> Result<Ident, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(name) if KEYWORDS.contains(&name.as_str()) => {
                Err(syntax(t.line, t.col, format!("keyword `{name}` used as a variable")))
            }
            Tok::Ident(name) if name.starts_with(RESERVED_PREFIX) => {
                Err(syntax(t.line, t.col, format!("identifier `{name}` uses the reserved `__` prefix")))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Ident::from(name.as_str()))
            }
            _ => Err(self.err_here("expected an identifier")),
        }
    }

    fn program(&mut self) -> Result<Command, ParseError> {
        let mut stmts = vec![self.stmt()?];
        while self.eat_sym(";") {
            if self.is_sym("}") || matches!(self.peek().tok, Tok::Eof) {
                break;
            }
            stmts.push(self.stmt()?);
        }
        Ok(build::seq(stmts))
    }

    fn block(&mut self) -> Result<Command, ParseError> {
        self.expect_sym("{")?;
        let c = self.program()?;
        self.expect_sym("}")?;
        Ok(c)
    }

    fn stmt(&mut self) -> Result<Command, ParseError> {
        if self.is_sym("{") {
            let left = self.block()?;
            if self.eat_sym("[") {
                let p = self.expr()?;
                self.expect_sym("]")?;
                let right = self.block()?;
                return Ok(Command::Choice(p, Arc::new(left), Arc::new(right)));
            }
            return Ok(left);
        }
        let kw = match &self.peek().tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.err_here("expected a statement")),
        };
        match kw.as_str() {
            "skip" => {
                self.bump();
                Ok(Command::Skip)
            }
            "observe" => {
                self.bump();
                Ok(Command::Observe(self.expr()?))
            }
            "if" => {
                self.bump();
                let e = self.expr()?;
                let then = self.block()?;
                let other = if self.is_kw("else") {
                    self.bump();
                    if self.is_kw("if") { self.stmt()? } else { self.block()? }
                } else {
                    Command::Skip
                };
                Ok(build::ite(e, then, other))
            }
            "choice" => {
                self.bump();
                let p = self.expr()?;
                let a = self.block()?;
                let b = self.block()?;
                Ok(build::choice(p, a, b))
            }
            "uniform" => {
                self.bump();
                let n = self.expr()?;
                self.expect_kw("as")?;
                let x = self.ident()?;
                let body = self.block()?;
                Ok(Command::Uniform(n, x, Arc::new(body)))
            }
            "while" => {
                self.bump();
                let e = self.expr()?;
                let body = self.block()?;
                Ok(build::while_(e, body))
            }
            "flip" => {
                self.bump();
                let x = self.ident()?;
                let p = self.expr()?;
                Ok(build::choice(
                    p,
                    Command::Assign(x.clone(), Expr::bool(true)),
                    Command::Assign(x, Expr::bool(false)),
                ))
            }
            _ => {
                let x = self.ident()?;
                self.expect_sym("<-")?;
                Ok(Command::Assign(x, self.expr()?))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.and_expr()?;
        while self.eat_sym("||") {
            e = build::or(e, self.and_expr()?);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.not_expr()?;
        while self.eat_sym("&&") {
            e = build::and(e, self.not_expr()?);
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym("!") {
            return Ok(!self.not_expr()?);
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let a = self.add_expr()?;
        let op = match &self.peek().tok {
            Tok::Sym(s @ ("=" | "!=" | "<" | "<=" | ">" | ">=")) => *s,
            _ => return Ok(a),
        };
        self.bump();
        let b = self.add_expr()?;
        Ok(match op {
            "=" => build::eq(a, b),
            "!=" => !build::eq(a, b),
            "<" => build::lt(a, b),
            "<=" => build::le(a, b),
            ">" => build::lt(b, a),
            _ => build::le(b, a),
        })
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.mul_expr()?;
        loop {
            if self.eat_sym("+") {
                e = e + self.mul_expr()?;
            } else if self.eat_sym("-") {
                e = e - self.mul_expr()?;
            } else {
                return Ok(e);
            }
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.unary()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                Tok::Sym("%") => BinOp::Mod,
                _ => return Ok(e),
            };
            self.bump();
            e = Expr::binary(op, e, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_sym("-") {
            let minus = self.bump();
            // A minus glued to a number is part of the literal.
            if let Tok::Num(v) = &self.peek().tok {
                if self.peek().start == minus.end {
                    let v = v.clone();
                    self.bump();
                    return Ok(Expr::Const(match v {
                        Value::Int(n) => Value::Int(-n),
                        Value::Rat(q) => Value::Rat(-q),
                        Value::Bool(_) => unreachable!(),
                    }));
                }
            }
            return Ok(-self.unary()?);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v.clone()))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "true" || name == "false" => {
                self.bump();
                Ok(Expr::bool(name == "true"))
            }
            Tok::Ident(name) if UnOp::from_call_name(name).is_some() => {
                let op = UnOp::from_call_name(name).unwrap();
                self.bump();
                self.expect_sym("(")?;
                let mut args = Vec::new();
                if !self.is_sym(")") {
                    args.push(self.expr()?);
                    while self.eat_sym(",") {
                        args.push(self.expr()?);
                    }
                }
                self.expect_sym(")")?;
                if args.len() != 1 {
                    return Err(ParseError::Arity {
                        line: t.line,
                        col: t.col,
                        name: name.clone(),
                        expected: 1,
                        found: args.len(),
                    });
                }
                Ok(Expr::unary(op, args.pop().unwrap()))
            }
            Tok::Ident(_) => Ok(Expr::Var(self.ident()?)),
            _ => Err(self.err_here("expected an expression")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek().tok {
            Tok::Eof => Ok(()),
            _ => Err(self.err_here("expected `;` or end of input")),
        }
    }
}

/// A program file: `#param` declarations with defaults, then the body.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub params: Vec<(Ident, Expr)>,
    pub body: Command,
}

impl Source {
    /// Substitute parameters (defaults unless overridden) into the body.
    pub fn instantiate(&self, overrides: &[(String, Expr)]) -> Result<Command, ParseError> {
        for (name, _) in overrides {
            if !self.params.iter().any(|(p, _)| &**p == name.as_str()) {
                return Err(ParseError::Param(format!("unknown parameter `{name}`")));
            }
        }
        let mut sub: HashMap<Ident, Expr> = HashMap::new();
        for (name, default) in &self.params {
            let chosen = overrides
                .iter()
                .rev()
                .find(|(o, _)| o.as_str() == &**name)
                .map(|(_, e)| e.clone())
                .unwrap_or_else(|| default.clone());
            // Later defaults may mention earlier parameters.
            let value = chosen.substitute(&sub);
            sub.insert(name.clone(), value);
        }
        Ok(self.body.substitute(&sub))
    }
}

fn parse_with<T>(src: &str, first_line: usize, f: impl FnOnce(&mut Parser) -> Result<T, ParseError>) -> Result<T, ParseError> {
    let toks = lex(src, first_line)?;
    let mut p = Parser { toks, pos: 0 };
    let out = f(&mut p)?;
    p.finish()?;
    Ok(out)
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    parse_with(src, 1, |p| p.expr())
}

pub fn parse_source(src: &str) -> Result<Source, ParseError> {
    let mut params = Vec::new();
    let mut body_text = String::with_capacity(src.len());
    for (n, line) in src.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("#param") {
            if rest.starts_with(char::is_whitespace) {
                let (name, value) = parse_with(rest, n + 1, |p| {
                    let name = p.ident()?;
                    p.expect_sym("=")?;
                    Ok((name, p.expr()?))
                })?;
                if params.iter().any(|(p, _): &(Ident, Expr)| *p == name) {
                    return Err(ParseError::Param(format!("parameter `{name}` declared twice")));
                }
                params.push((name, value));
            }
        }
        body_text.push_str(line);
        body_text.push('\n');
    }
    let body = parse_with(&body_text, 1, |p| p.program())?;
    let mut written = BTreeSet::new();
    body.written_vars(&mut written);
    if let Some((name, _)) = params.iter().find(|(p, _)| written.contains(p)) {
        return Err(ParseError::Param(format!("parameter `{name}` is assigned in the program")));
    }
    Ok(Source { params, body })
}

/// Parse a program, substituting `#param` defaults.
pub fn parse_program(src: &str) -> Result<Command, ParseError> {
    parse_source(src)?.instantiate(&[])
}
