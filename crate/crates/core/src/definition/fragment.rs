//! The rule grammar compiled definitions are written in.
//!
//! ```text
//! rules   := rule+
//! rule    := head ':-' literal (',' literal)* '.'
//! head    := 'complex_event' '(' atom ',' VAR ',' VAR ')'
//! literal := 'simple_event' '(' atom ',' VAR ',' VAR ')'
//!          | '(' VAR ',' VAR ')' '\=' '(' VAR ',' VAR ')'
//!          | expr ('>=' | '=<') expr
//! expr    := 'dist' '(' VAR ',' VAR ')' | NUMBER | VAR ('-' VAR)?
//! ```
//!
//! Whitespace is insignificant and `%` starts a comment running to the end
//! of the line. The canonical rendering puts one rule per line.

use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub name: String,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String),
    Num(f64),
    Diff(String, String),
    Dist(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    /// `>=`
    Ge,
    /// `=<`
    Le,
}

impl CmpOp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Event {
        label: String,
        time: String,
        loc: String,
    },
    Compare {
        lhs: Expr,
        op: CmpOp,
        rhs: Expr,
    },
    /// The two (time, location) pairs name different facts.
    Distinct {
        left: (String, String),
        right: (String, String),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head: Head,
    pub body: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

pub(crate) fn fmt_number(x: f64) -> String {
    // f64 Display is shortest-round-trip and never uses exponents
    format!("{x}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => f.write_str(v),
            Expr::Num(n) => f.write_str(&fmt_number(*n)),
            Expr::Diff(a, b) => write!(f, "{a} - {b}"),
            Expr::Dist(a, b) => write!(f, "dist({a}, {b})"),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Event { label, time, loc } => write!(f, "simple_event({label}, {time}, {loc})"),
            Literal::Compare { lhs, op, rhs } => {
                let op = match op {
                    CmpOp::Ge => ">=",
                    CmpOp::Le => "=<",
                };
                write!(f, "{lhs} {op} {rhs}")
            }
            Literal::Distinct { left, right } => {
                write!(f, "({}, {}) \\= ({}, {})", left.0, left.1, right.0, right.1)
            }
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "complex_event({}, {}, {}) :- ",
            self.head.name, self.head.start, self.head.end
        )?;
        for (i, lit) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{lit}")?;
        }
        f.write_char('.')
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_char('\n')?;
            }
            write!(f, "{rule}")?;
        }
        Ok(())
    }
}

impl Rule {
    /// Variables bound by event atoms, split into time and location positions.
    pub fn bound_vars(&self) -> (Vec<&str>, Vec<&str>) {
        let mut times = Vec::new();
        let mut locs = Vec::new();
        for lit in &self.body {
            if let Literal::Event { time, loc, .. } = lit {
                times.push(time.as_str());
                locs.push(loc.as_str());
            }
        }
        (times, locs)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at line {line}, column {column}: expected {}, found {found}", .expected.join(" | "))]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Atom(String),
    Var(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Dot,
    Neck,
    Ge,
    Le,
    Minus,
    NotUnify,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Atom(a) => write!(f, "atom `{a}`"),
            Tok::Var(v) => write!(f, "variable `{v}`"),
            Tok::Num(n) => write!(f, "number `{n}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Neck => f.write_str("`:-`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Le => f.write_str("`=<`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::NotUnify => f.write_str("`\\=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, SyntaxError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, found: String| SyntaxError {
        line,
        column,
        expected: vec!["a token".into()],
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut advance = |n: usize, i: &mut usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                *i += 1;
            }
        };
        if c.is_whitespace() {
            advance(1, &mut i);
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                advance(1, &mut i);
            }
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let tok = match (c, two.as_str()) {
            (_, ":-") => {
                advance(2, &mut i);
                Tok::Neck
            }
            (_, ">=") => {
                advance(2, &mut i);
                Tok::Ge
            }
            (_, "=<") => {
                advance(2, &mut i);
                Tok::Le
            }
            (_, "\\=") => {
                advance(2, &mut i);
                Tok::NotUnify
            }
            ('(', _) => {
                advance(1, &mut i);
                Tok::LParen
            }
            (')', _) => {
                advance(1, &mut i);
                Tok::RParen
            }
            (',', _) => {
                advance(1, &mut i);
                Tok::Comma
            }
            ('.', _) => {
                advance(1, &mut i);
                Tok::Dot
            }
            ('-', _) => {
                advance(1, &mut i);
                Tok::Minus
            }
            (c, _) if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let s: String = chars[i..j].iter().collect();
                advance(j - i, &mut i);
                Tok::Num(s.parse().map_err(|_| err(start_line, start_col, s.clone()))?)
            }
            (c, _) if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                advance(j - i, &mut i);
                if c.is_ascii_lowercase() {
                    Tok::Atom(s)
                } else {
                    Tok::Var(s)
                }
            }
            (c, _) => return Err(err(start_line, start_col, format!("`{c}`"))),
        };
        out.push(Spanned {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let at = &self.toks[self.pos];
        SyntaxError {
            line: at.line,
            column: at.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: at.tok.to_string(),
        }
    }

    fn expect(&mut self, want: Tok, name: &str) -> Result<(), SyntaxError> {
        if *self.peek() == want {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        match self.peek() {
            Tok::Atom(a) if a == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(&[&format!("`{kw}`")])),
        }
    }

    fn atom(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Atom(a) => {
                self.pos += 1;
                Ok(a)
            }
            _ => Err(self.error(&["atom"])),
        }
    }

    fn var(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Var(v) => {
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error(&["variable"])),
        }
    }

    /// `( X , Y )`
    fn var_pair(&mut self) -> Result<(String, String), SyntaxError> {
        self.expect(Tok::LParen, "`(`")?;
        let a = self.var()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.var()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok((a, b))
    }

    fn triple(&mut self) -> Result<(String, String, String), SyntaxError> {
        self.expect(Tok::LParen, "`(`")?;
        let a = self.atom()?;
        self.expect(Tok::Comma, "`,`")?;
        let t = self.var()?;
        self.expect(Tok::Comma, "`,`")?;
        let l = self.var()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok((a, t, l))
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek().clone() {
            Tok::Atom(a) if a == "dist" => {
                self.pos += 1;
                let (x, y) = self.var_pair()?;
                Ok(Expr::Dist(x, y))
            }
            Tok::Num(n) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Tok::Var(v) => {
                self.pos += 1;
                if *self.peek() == Tok::Minus {
                    self.pos += 1;
                    let w = self.var()?;
                    Ok(Expr::Diff(v, w))
                } else {
                    Ok(Expr::Var(v))
                }
            }
            _ => Err(self.error(&["`dist`", "number", "variable"])),
        }
    }

    fn literal(&mut self) -> Result<Literal, SyntaxError> {
        match self.peek().clone() {
            Tok::Atom(a) if a == "simple_event" => {
                self.pos += 1;
                let (label, time, loc) = self.triple()?;
                Ok(Literal::Event { label, time, loc })
            }
            Tok::LParen => {
                let left = self.var_pair()?;
                self.expect(Tok::NotUnify, "`\\=`")?;
                let right = self.var_pair()?;
                Ok(Literal::Distinct { left, right })
            }
            Tok::Atom(a) if a == "dist" => self.comparison(),
            Tok::Num(_) | Tok::Var(_) => self.comparison(),
            _ => Err(self.error(&["`simple_event`", "`(`", "`dist`", "number", "variable"])),
        }
    }

    fn comparison(&mut self) -> Result<Literal, SyntaxError> {
        let lhs = self.expr()?;
        let op = match self.peek() {
            Tok::Ge => CmpOp::Ge,
            Tok::Le => CmpOp::Le,
            _ => {
                let mut expected = vec!["`>=`", "`=<`"];
                if matches!(lhs, Expr::Var(_)) {
                    expected.push("`-`");
                }
                return Err(self.error(&expected));
            }
        };
        self.pos += 1;
        let rhs = self.expr()?;
        Ok(Literal::Compare { lhs, op, rhs })
    }

    fn rule(&mut self) -> Result<Rule, SyntaxError> {
        self.keyword("complex_event")?;
        let (name, start, end) = self.triple()?;
        self.expect(Tok::Neck, "`:-`")?;
        let mut body = vec![self.literal()?];
        loop {
            match self.peek() {
                Tok::Comma => {
                    self.pos += 1;
                    body.push(self.literal()?);
                }
                Tok::Dot => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.error(&["`,`", "`.`"])),
            }
        }
        Ok(Rule {
            head: Head { name, start, end },
            body,
        })
    }
}

/// Parses one or more rules. Comments and whitespace are ignored.
pub fn parse_fragment(text: &str) -> Result<RuleSet, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut rules = vec![p.rule()?];
    while *p.peek() != Tok::Eof {
        rules.push(p.rule()?);
    }
    Ok(RuleSet { rules })
}
