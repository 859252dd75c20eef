use std::fmt;

use thiserror::Error;

use super::*;

/// Syntax or static error with the position it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(" | "))?;
        }
        Ok(())
    }
}

/// Parses and statically checks a property. Any error-level diagnostic from
/// [`validate`] is reported as a `ParseError` at the offending node.
pub fn parse_property(source: &str) -> Result<PropertyAst, ParseError> {
    let ast = parse_property_unchecked(source)?;
    if let Some(d) = validate(&ast, None).into_iter().find(|d| d.severity == Severity::Error) {
        return Err(ParseError {
            line: d.span.line,
            col: d.span.col,
            message: d.message,
            expected: Vec::new(),
        });
    }
    Ok(ast)
}

/// Syntax-only parse: binding and typing are not checked.
pub fn parse_property_unchecked(source: &str) -> Result<PropertyAst, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let ast = p.property()?;
    p.expect_eof()?;
    Ok(ast)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Semi,
    Eq,
    TildeEq,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Int(i) => write!(f, "number {i}"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::TildeEq => f.write_str("`~=`"),
            Tok::Arrow => f.write_str("`=>`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);
    let err = |line, col, message: String| ParseError {
        line,
        col,
        message,
        expected: Vec::new(),
    };

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let span = Span::new(line, col);
        match c {
            c if c.is_whitespace() => {
                bump!();
            }
            '/' => {
                bump!();
                if chars.peek() != Some(&'/') {
                    return Err(err(span.line, span.col, "unexpected `/`".into()));
                }
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump!();
                }
            }
            '{' | '}' | '(' | ')' | ',' | ';' => {
                bump!();
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    _ => Tok::Semi,
                };
                out.push((tok, span));
            }
            '=' => {
                bump!();
                if chars.peek() == Some(&'>') {
                    bump!();
                    out.push((Tok::Arrow, span));
                } else {
                    out.push((Tok::Eq, span));
                }
            }
            '~' => {
                bump!();
                if chars.peek() != Some(&'=') {
                    return Err(err(span.line, span.col, "expected `~=`".into()));
                }
                bump!();
                out.push((Tok::TildeEq, span));
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        None => return Err(err(span.line, span.col, "unterminated string".into())),
                        Some('"') => break,
                        Some('\\') => {
                            let esc = bump!();
                            s.push(match esc {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                other => return Err(err(line, col, format!("unknown escape {other:?}"))),
                            });
                        }
                        Some(ch) => s.push(ch),
                    }
                }
                out.push((Tok::Str(s), span));
            }
            '-' | '0'..='9' => {
                let mut s = String::new();
                if c == '-' {
                    s.push('-');
                    bump!();
                }
                while chars.peek().is_some_and(char::is_ascii_digit) {
                    s.push(bump!().unwrap());
                }
                let v = s
                    .parse()
                    .map_err(|_| err(span.line, span.col, format!("invalid number `{s}`")))?;
                out.push((Tok::Int(v), span));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while chars.peek().is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_') {
                    s.push(bump!().unwrap());
                }
                out.push((Tok::Ident(s), span));
            }
            other => return Err(err(span.line, span.col, format!("unexpected character {other:?}"))),
        }
    }
    out.push((Tok::Eof, Span::new(line, col)));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, Span)>,
    pos: usize,
}

const STMT_START: &[&str] = &["let", "if", "click", "long_click", "set_text", "press_back", "wait"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn advance(&mut self) -> (Tok, Span) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>, expected: &[&str]) -> ParseError {
        let span = self.span();
        ParseError {
            line: span.line,
            col: span.col,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        self.error(format!("unexpected {}", self.peek()), expected)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Span, ParseError> {
        if self.is_kw(kw) {
            Ok(self.advance().1)
        } else {
            Err(self.unexpected(&[kw]))
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.advance().1)
        } else {
            Err(self.unexpected(&[label]))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                let span = self.advance().1;
                Ok((s, span))
            }
            Tok::Ident(s) => Err(self.error(format!("`{s}` is a reserved word"), &[what])),
            _ => Err(self.unexpected(&[what])),
        }
    }

    fn string(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => Ok((s, self.advance().1)),
            _ => Err(self.unexpected(&["string"])),
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.unexpected(&["end of input"]))
        }
    }

    fn section(&mut self, name: &str) -> Result<Span, ParseError> {
        if self.is_kw(name) {
            return Ok(self.advance().1);
        }
        Err(self.error(format!("missing `{name}` section, found {}", self.peek()), &[name]))
    }

    fn property(&mut self) -> Result<PropertyAst, ParseError> {
        let span = self.expect_kw("property")?;
        let (name, _) = self.ident("property name")?;
        self.expect(Tok::LBrace, "{")?;

        self.section("pre")?;
        self.expect(Tok::LBrace, "{")?;
        let precondition = self.expr()?;
        self.eat(&Tok::Semi);
        self.expect(Tok::RBrace, "}")?;

        self.section("run")?;
        let interaction = self.block()?;

        self.section("post")?;
        self.expect(Tok::LBrace, "{")?;
        let mut postcondition = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let span = self
                .expect_kw("assert")
                .map_err(|_| self.unexpected(&["assert", "}"]))?;
            let expr = self.expr()?;
            self.eat(&Tok::Semi);
            postcondition.push(Assertion { expr, span });
        }
        self.expect(Tok::RBrace, "}")?;
        Ok(PropertyAst {
            name,
            precondition,
            interaction,
            postcondition,
            span,
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace, "{")?;
        let mut stmts = Vec::new();
        while !self.eat(&Tok::RBrace) {
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => {
                let mut expected = STMT_START.to_vec();
                expected.push("}");
                return Err(self.unexpected(&expected));
            }
        };
        let stmt = match kw.as_str() {
            "let" => {
                self.advance();
                let (var, _) = self.ident("variable name")?;
                self.expect(Tok::Eq, "=")?;
                if self.eat_kw("all") {
                    self.expect(Tok::LParen, "(")?;
                    let selector = self.selector()?;
                    self.expect(Tok::RParen, ")")?;
                    Stmt::LetAll { var, selector, span }
                } else if self.eat_kw("pick") {
                    self.expect(Tok::LParen, "(")?;
                    let (source, _) = self.ident("list variable")?;
                    self.expect(Tok::Comma, ",")?;
                    let (elem, _) = self.ident("element name")?;
                    self.expect(Tok::Arrow, "=>")?;
                    let predicate = self.expr()?;
                    self.expect(Tok::RParen, ")")?;
                    Stmt::LetPick {
                        var,
                        source,
                        elem,
                        predicate,
                        span,
                    }
                } else {
                    return Err(self.unexpected(&["all", "pick"]));
                }
            }
            "if" => {
                self.advance();
                let cond = self.expr()?;
                let then_branch = self.block()?;
                let else_branch = if self.eat_kw("else") { Some(self.block()?) } else { None };
                return Ok(Stmt::If {
                    cond,
                    then_branch,
                    else_branch,
                    span,
                });
            }
            other => match ActionKind::parse(other) {
                Some(kind) => Stmt::Do(self.action(kind)?),
                None => {
                    let mut expected = STMT_START.to_vec();
                    expected.push("}");
                    return Err(self.error(format!("unknown statement `{other}`"), &expected));
                }
            },
        };
        self.eat(&Tok::Semi);
        Ok(stmt)
    }

    fn action(&mut self, kind: ActionKind) -> Result<Action, ParseError> {
        let span = self.advance().1;
        self.expect(Tok::LParen, "(")?;
        let mut action = Action {
            kind,
            target: None,
            argument: None,
            span,
        };
        match kind {
            ActionKind::Click | ActionKind::LongClick => {
                action.target = Some(self.target()?);
            }
            ActionKind::SetText => {
                action.target = Some(self.target()?);
                self.expect(Tok::Comma, ",")?;
                action.argument = Some(ActionArg::Text(self.string()?.0));
            }
            ActionKind::PressBack => {}
            ActionKind::Wait => match self.peek().clone() {
                Tok::Int(ms) if ms >= 0 => {
                    self.advance();
                    action.argument = Some(ActionArg::Millis(ms as u64));
                }
                _ => return Err(self.unexpected(&["duration in milliseconds"])),
            },
        }
        self.expect(Tok::RParen, ")")?;
        Ok(action)
    }

    fn target(&mut self) -> Result<Target, ParseError> {
        if self.is_kw("widget") {
            return Ok(Target::Selector(self.selector()?));
        }
        match self.peek() {
            Tok::Ident(_) => {
                let (name, span) = self.ident("variable")?;
                Ok(Target::Var { name, span })
            }
            _ => Err(self.unexpected(&["widget(...)", "variable"])),
        }
    }

    fn selector(&mut self) -> Result<Selector, ParseError> {
        let span = self.expect_kw("widget")?;
        self.expect(Tok::LParen, "(")?;
        let mut clauses = Vec::new();
        let mut mode_all = None;
        loop {
            let key = match self.peek() {
                Tok::Ident(s) => s.clone(),
                _ => return Err(self.unexpected(&["text", "id", "desc", "class", "mode"])),
            };
            self.advance();
            if key == "mode" {
                self.expect(Tok::Eq, "=")?;
                mode_all = Some(if self.eat_kw("contains") {
                    MatchMode::Contains
                } else if self.eat_kw("exact") {
                    MatchMode::Exact
                } else {
                    return Err(self.unexpected(&["contains", "exact"]));
                });
            } else {
                let field = Field::parse(&key).ok_or_else(|| {
                    self.error(
                        format!("unknown selector field `{key}`"),
                        &["text", "id", "desc", "class"],
                    )
                })?;
                let mode = if self.eat(&Tok::TildeEq) {
                    MatchMode::Contains
                } else {
                    self.expect(Tok::Eq, "=").map_err(|_| self.unexpected(&["=", "~="]))?;
                    MatchMode::Exact
                };
                let (value, _) = self.string()?;
                clauses.push(Clause { field, mode, value });
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen, ")")?;
        if let Some(mode) = mode_all {
            for c in &mut clauses {
                c.mode = mode;
            }
        }
        Ok(Selector { clauses, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.is_kw("or") {
            let span = self.advance().1;
            let rhs = self.and_expr()?;
            lhs = Expr::Or {
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.is_kw("and") {
            let span = self.advance().1;
            let rhs = self.unary()?;
            lhs = Expr::And {
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_kw("not") {
            let span = self.advance().1;
            let operand = self.unary()?;
            return Ok(Expr::Not {
                operand: Box::new(operand),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let expected = [
            "(",
            "string",
            "number",
            "true",
            "false",
            "exists",
            "attr",
            "contains",
            "startswith",
            "equals",
            "not",
            "variable",
        ];
        match self.peek().clone() {
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Tok::RParen, ")")?;
                Ok(e)
            }
            Tok::Str(value) => {
                self.advance();
                Ok(Expr::Str { value, span })
            }
            Tok::Int(value) => {
                self.advance();
                Ok(Expr::Int { value, span })
            }
            Tok::Ident(word) => match word.as_str() {
                "true" | "false" => {
                    self.advance();
                    Ok(Expr::Bool {
                        value: word == "true",
                        span,
                    })
                }
                "exists" => {
                    self.advance();
                    self.expect(Tok::LParen, "(")?;
                    let selector = self.selector()?;
                    self.expect(Tok::RParen, ")")?;
                    Ok(Expr::Exists { selector, span })
                }
                "attr" => {
                    self.advance();
                    self.expect(Tok::LParen, "(")?;
                    let target = self.target()?;
                    self.expect(Tok::Comma, ",")?;
                    let (name, _) = self.string()?;
                    let field = Field::parse(&name).ok_or_else(|| {
                        self.error(
                            format!("unknown attribute {name:?}"),
                            &["\"text\"", "\"id\"", "\"desc\"", "\"class\""],
                        )
                    })?;
                    self.expect(Tok::RParen, ")")?;
                    Ok(Expr::Attr { target, field, span })
                }
                "contains" | "startswith" | "equals" => {
                    let op = match word.as_str() {
                        "contains" => CompareOp::Contains,
                        "startswith" => CompareOp::StartsWith,
                        _ => CompareOp::Equals,
                    };
                    self.advance();
                    self.expect(Tok::LParen, "(")?;
                    let lhs = self.expr()?;
                    self.expect(Tok::Comma, ",")?;
                    let rhs = self.expr()?;
                    self.expect(Tok::RParen, ")")?;
                    Ok(Expr::Compare {
                        op,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                        span,
                    })
                }
                w if RESERVED.contains(&w) => Err(self.unexpected(&expected)),
                _ => {
                    self.advance();
                    Ok(Expr::Var { name: word, span })
                }
            },
            _ => Err(self.unexpected(&expected)),
        }
    }
}
