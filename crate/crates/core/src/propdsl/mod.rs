//! Executable-property IR: a precondition, an interaction scenario and a
//! list of postcondition assertions, with a small textual syntax.
//!
//! ```text
//! property open_directory {
//!   pre {
//!     exists(widget(id="file_name")) and exists(widget(id="search"))
//!   }
//!   run {
//!     let names = all(widget(id="file_name"));
//!     let name = pick(names, n => not contains(n, "."));
//!     click(name);
//!   }
//!   post {
//!     assert contains(attr(widget(id="path"), "text"), name);
//!   }
//! }
//! ```
//!
//! All nodes carry a [`Span`] for diagnostics. Spans never take part in
//! equality, so `==` on the AST is structural equality.

mod emit;
mod metrics;
pub(crate) mod parser;
mod printer;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use emit::{emit_framework_script, EmissionTemplate, EmitError};
pub use metrics::{char_complexity, complexity, ComplexityMetrics};
pub use parser::{parse_property, parse_property_unchecked, ParseError};
pub use printer::{print_expr, print_property, print_selector, print_stmt};
pub use validate::{validate, Diagnostic, Severity};

/// Source position (1-based). Always compares equal.
#[derive(Debug, Clone, Copy, Default, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Self { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Widget attribute addressable by selectors and `attr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Text,
    Id,
    Desc,
    Class,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Text, Field::Id, Field::Desc, Field::Class];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Text => "text",
            Field::Id => "id",
            Field::Desc => "desc",
            Field::Class => "class",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Exact,
    Contains,
}

impl MatchMode {
    pub fn matches(self, actual: &str, wanted: &str) -> bool {
        match self {
            MatchMode::Exact => actual == wanted,
            MatchMode::Contains => actual.contains(wanted),
        }
    }
}

/// One `field=value` identifier clause.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub field: Field,
    pub mode: MatchMode,
    pub value: String,
}

impl Clause {
    pub fn exact(field: Field, value: impl Into<String>) -> Self {
        Self {
            field,
            mode: MatchMode::Exact,
            value: value.into(),
        }
    }
}

/// Conjunction of identifier clauses locating widgets on the current screen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub clauses: Vec<Clause>,
    pub span: Span,
}

impl Selector {
    pub fn new(clauses: Vec<Clause>) -> Self {
        Self {
            clauses,
            span: Span::default(),
        }
    }

    pub fn single(field: Field, value: impl Into<String>) -> Self {
        Self::new(vec![Clause::exact(field, value)])
    }

    /// True when every clause holds for the given attribute lookup.
    pub fn matches<'a>(&self, get: impl Fn(Field) -> Option<&'a str>) -> bool {
        !self.clauses.is_empty()
            && self
                .clauses
                .iter()
                .all(|c| get(c.field).is_some_and(|v| c.mode.matches(v, &c.value)))
    }
}

/// What an attribute read or an action refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Selector(Selector),
    Var { name: String, span: Span },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Contains,
    StartsWith,
    Equals,
}

impl CompareOp {
    pub fn keyword(self) -> &'static str {
        match self {
            CompareOp::Contains => "contains",
            CompareOp::StartsWith => "startswith",
            CompareOp::Equals => "equals",
        }
    }

    pub fn apply(self, lhs: &str, rhs: &str) -> bool {
        match self {
            CompareOp::Contains => lhs.contains(rhs),
            CompareOp::StartsWith => lhs.starts_with(rhs),
            CompareOp::Equals => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Str {
        value: String,
        span: Span,
    },
    Int {
        value: i64,
        span: Span,
    },
    Bool {
        value: bool,
        span: Span,
    },
    /// A bound widget used as a value: its text.
    Var {
        name: String,
        span: Span,
    },
    Attr {
        target: Target,
        field: Field,
        span: Span,
    },
    Exists {
        selector: Selector,
        span: Span,
    },
    Compare {
        op: CompareOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Not {
        operand: Box<Expr>,
        span: Span,
    },
    And {
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Or {
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Str { span, .. }
            | Expr::Int { span, .. }
            | Expr::Bool { span, .. }
            | Expr::Var { span, .. }
            | Expr::Attr { span, .. }
            | Expr::Exists { span, .. }
            | Expr::Compare { span, .. }
            | Expr::Not { span, .. }
            | Expr::And { span, .. }
            | Expr::Or { span, .. } => *span,
        }
    }

    pub fn str(value: impl Into<String>) -> Self {
        Expr::Str {
            value: value.into(),
            span: Span::default(),
        }
    }

    pub fn bool(value: bool) -> Self {
        Expr::Bool {
            value,
            span: Span::default(),
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var {
            name: name.into(),
            span: Span::default(),
        }
    }

    pub fn exists(selector: Selector) -> Self {
        Expr::Exists {
            selector,
            span: Span::default(),
        }
    }

    pub fn attr(target: Target, field: Field) -> Self {
        Expr::Attr {
            target,
            field,
            span: Span::default(),
        }
    }

    pub fn compare(op: CompareOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Compare {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span: Span::default(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(operand: Expr) -> Self {
        Expr::Not {
            operand: Box::new(operand),
            span: Span::default(),
        }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        Expr::And {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span: Span::default(),
        }
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Self {
        Expr::Or {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span: Span::default(),
        }
    }

    /// Left-associated conjunction; `None` for an empty list.
    pub fn conjunction(terms: impl IntoIterator<Item = Expr>) -> Option<Expr> {
        terms.into_iter().reduce(Expr::and)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongClick,
    SetText,
    PressBack,
    Wait,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Click,
        ActionKind::LongClick,
        ActionKind::SetText,
        ActionKind::PressBack,
        ActionKind::Wait,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::LongClick => "long_click",
            ActionKind::SetText => "set_text",
            ActionKind::PressBack => "press_back",
            ActionKind::Wait => "wait",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == s)
    }

    pub fn takes_target(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongClick | ActionKind::SetText)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Longest allowed `wait`, in milliseconds.
pub const MAX_WAIT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionArg {
    Text(String),
    Millis(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub kind: ActionKind,
    pub target: Option<Target>,
    pub argument: Option<ActionArg>,
    pub span: Span,
}

impl Action {
    pub fn on(kind: ActionKind, target: Target) -> Self {
        Self {
            kind,
            target: Some(target),
            argument: None,
            span: Span::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    /// `let v = all(selector);`: every matching widget on the current screen.
    LetAll {
        var: String,
        selector: Selector,
        span: Span,
    },
    /// `let v = pick(source, e => predicate);`: first element of a list
    /// variable for which the predicate holds.
    LetPick {
        var: String,
        source: String,
        elem: String,
        predicate: Expr,
        span: Span,
    },
    Do(Action),
    If {
        cond: Expr,
        then_branch: Vec<Stmt>,
        else_branch: Option<Vec<Stmt>>,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::LetAll { span, .. } | Stmt::LetPick { span, .. } | Stmt::If { span, .. } => *span,
            Stmt::Do(a) => a.span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assertion {
    pub expr: Expr,
    pub span: Span,
}

/// A parsed property: precondition, interaction scenario, postcondition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyAst {
    pub name: String,
    pub precondition: Expr,
    pub interaction: Vec<Stmt>,
    pub postcondition: Vec<Assertion>,
    pub span: Span,
}

impl PropertyAst {
    /// Every `Do` in the interaction, branch bodies included, in source order.
    pub fn actions(&self) -> Vec<&Action> {
        fn walk<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Action>) {
            for s in stmts {
                match s {
                    Stmt::Do(a) => out.push(a),
                    Stmt::If {
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        walk(then_branch, out);
                        if let Some(e) = else_branch {
                            walk(e, out);
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.interaction, &mut out);
        out
    }

    /// Every selector literal anywhere in the property.
    pub fn selectors(&self) -> Vec<&Selector> {
        let mut out = Vec::new();
        collect_expr_selectors(&self.precondition, &mut out);
        collect_stmt_selectors(&self.interaction, &mut out);
        for a in &self.postcondition {
            collect_expr_selectors(&a.expr, &mut out);
        }
        out
    }
}

fn collect_target<'a>(t: &'a Target, out: &mut Vec<&'a Selector>) {
    if let Target::Selector(s) = t {
        out.push(s);
    }
}

fn collect_expr_selectors<'a>(e: &'a Expr, out: &mut Vec<&'a Selector>) {
    match e {
        Expr::Attr { target, .. } => collect_target(target, out),
        Expr::Exists { selector, .. } => out.push(selector),
        Expr::Compare { lhs, rhs, .. } | Expr::And { lhs, rhs, .. } | Expr::Or { lhs, rhs, .. } => {
            collect_expr_selectors(lhs, out);
            collect_expr_selectors(rhs, out);
        }
        Expr::Not { operand, .. } => collect_expr_selectors(operand, out),
        Expr::Str { .. } | Expr::Int { .. } | Expr::Bool { .. } | Expr::Var { .. } => {}
    }
}

fn collect_stmt_selectors<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Selector>) {
    for s in stmts {
        match s {
            Stmt::LetAll { selector, .. } => out.push(selector),
            Stmt::LetPick { predicate, .. } => collect_expr_selectors(predicate, out),
            Stmt::Do(a) => {
                if let Some(t) = &a.target {
                    collect_target(t, out);
                }
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                collect_expr_selectors(cond, out);
                collect_stmt_selectors(then_branch, out);
                if let Some(e) = else_branch {
                    collect_stmt_selectors(e, out);
                }
            }
        }
    }
}

/// Words that cannot be used as property or variable names.
pub const RESERVED: &[&str] = &[
    "property",
    "pre",
    "run",
    "post",
    "let",
    "if",
    "else",
    "assert",
    "and",
    "or",
    "not",
    "true",
    "false",
    "all",
    "pick",
    "widget",
    "attr",
    "exists",
    "contains",
    "startswith",
    "equals",
    "click",
    "long_click",
    "set_text",
    "press_back",
    "wait",
    "mode",
];

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !RESERVED.contains(&s)
}
