use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::*;
use crate::grounding::{match_widget, WidgetContextStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    #[serde(skip)]
    pub span: Span,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {sev}[{}]: {}", self.span, self.code, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarKind {
    List,
    Widget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Str,
    Bool,
    /// Already reported; suppresses cascades.
    Unknown,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Str => "string",
            Ty::Bool => "bool",
            Ty::Unknown => "unknown",
        })
    }
}

struct Checker {
    scopes: Vec<HashMap<String, VarKind>>,
    out: Vec<Diagnostic>,
}

/// Static checks: variable binding, typing, action shapes, and (with a
/// store) whether each selector can be grounded to any known widget.
pub fn validate(ast: &PropertyAst, store: Option<&WidgetContextStore>) -> Vec<Diagnostic> {
    let mut c = Checker {
        scopes: vec![HashMap::new()],
        out: Vec::new(),
    };
    if !is_identifier(&ast.name) {
        c.error("bad-name", ast.span, format!("invalid property name {:?}", ast.name));
    }
    c.expect_bool(&ast.precondition, "precondition");
    c.block(&ast.interaction, false);
    if ast.actions().is_empty() {
        c.error("no-events", ast.span, "interaction scenario contains no action".into());
    }
    // Postconditions see the top-level bindings of the interaction.
    for a in &ast.postcondition {
        c.expect_bool(&a.expr, "assertion");
    }

    if let Some(store) = store {
        for sel in ast.selectors() {
            let query: Vec<&str> = sel
                .clauses
                .iter()
                .filter(|cl| cl.field != Field::Class)
                .map(|cl| cl.value.as_str())
                .collect();
            if query.is_empty() {
                continue;
            }
            let grounded = match_widget(&query.join(" "), store)
                .map(|m| !m.candidates.is_empty())
                .unwrap_or(false);
            if !grounded {
                c.out.push(Diagnostic {
                    severity: Severity::Warning,
                    code: "ungrounded-selector",
                    message: format!("{} matches no widget in the context store", print_selector(sel)),
                    span: sel.span,
                });
            }
        }
    }
    c.out
}

impl Checker {
    fn error(&mut self, code: &'static str, span: Span, message: String) {
        self.out.push(Diagnostic {
            severity: Severity::Error,
            code,
            message,
            span,
        });
    }

    fn lookup(&self, name: &str) -> Option<VarKind> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn bind(&mut self, name: &str, kind: VarKind) {
        self.scopes
            .last_mut()
            .expect("scope stack is never empty")
            .insert(name.to_string(), kind);
    }

    fn widget_var(&mut self, name: &str, span: Span) -> bool {
        match self.lookup(name) {
            Some(VarKind::Widget) => true,
            Some(VarKind::List) => {
                self.error(
                    "type-mismatch",
                    span,
                    format!("`{name}` is a widget list; pick an element first"),
                );
                false
            }
            None => {
                self.error("unbound-variable", span, format!("unbound variable `{name}`"));
                false
            }
        }
    }

    fn selector(&mut self, sel: &Selector) {
        if sel.clauses.is_empty() {
            self.error("empty-selector", sel.span, "selector has no clauses".into());
        }
        for c in &sel.clauses {
            if c.value.is_empty() {
                self.error(
                    "empty-selector",
                    sel.span,
                    format!("selector clause `{}` has an empty value", c.field),
                );
            }
        }
    }

    fn target(&mut self, t: &Target) {
        match t {
            Target::Selector(s) => self.selector(s),
            Target::Var { name, span } => {
                self.widget_var(name, *span);
            }
        }
    }

    fn expect_bool(&mut self, e: &Expr, what: &str) {
        let ty = self.expr(e);
        if ty == Ty::Str {
            self.error("type-mismatch", e.span(), format!("{what} must be bool, found {ty}"));
        }
    }

    fn expect(&mut self, e: &Expr, want: Ty) {
        let ty = self.expr(e);
        if ty != want && ty != Ty::Unknown {
            self.error("type-mismatch", e.span(), format!("expected {want}, found {ty}"));
        }
    }

    fn expr(&mut self, e: &Expr) -> Ty {
        match e {
            Expr::Str { .. } | Expr::Int { .. } => Ty::Str,
            Expr::Bool { .. } => Ty::Bool,
            Expr::Var { name, span } => {
                if self.widget_var(name, *span) {
                    Ty::Str
                } else {
                    Ty::Unknown
                }
            }
            Expr::Attr { target, .. } => {
                self.target(target);
                Ty::Str
            }
            Expr::Exists { selector, .. } => {
                self.selector(selector);
                Ty::Bool
            }
            Expr::Compare { lhs, rhs, .. } => {
                self.expect(lhs, Ty::Str);
                self.expect(rhs, Ty::Str);
                Ty::Bool
            }
            Expr::Not { operand, .. } => {
                self.expect(operand, Ty::Bool);
                Ty::Bool
            }
            Expr::And { lhs, rhs, .. } | Expr::Or { lhs, rhs, .. } => {
                self.expect(lhs, Ty::Bool);
                self.expect(rhs, Ty::Bool);
                Ty::Bool
            }
        }
    }

    fn action(&mut self, a: &Action) {
        let shape_ok = match (a.kind, &a.target, &a.argument) {
            (ActionKind::Click | ActionKind::LongClick, Some(_), None) => true,
            (ActionKind::SetText, Some(_), Some(ActionArg::Text(_))) => true,
            (ActionKind::PressBack, None, None) => true,
            (ActionKind::Wait, None, Some(ActionArg::Millis(ms))) => {
                if *ms == 0 || *ms > MAX_WAIT_MS {
                    self.error(
                        "bad-action",
                        a.span,
                        format!("wait duration must be in (0, {MAX_WAIT_MS}] ms, got {ms}"),
                    );
                }
                true
            }
            _ => false,
        };
        if !shape_ok {
            self.error("bad-action", a.span, format!("malformed `{}` action arguments", a.kind));
        }
        if let Some(t) = &a.target {
            self.target(t);
        }
    }

    fn block(&mut self, stmts: &[Stmt], scoped: bool) {
        if scoped {
            self.scopes.push(HashMap::new());
        }
        for s in stmts {
            match s {
                Stmt::LetAll { var, selector, .. } => {
                    self.selector(selector);
                    self.bind(var, VarKind::List);
                }
                Stmt::LetPick {
                    var,
                    source,
                    elem,
                    predicate,
                    span,
                } => {
                    match self.lookup(source) {
                        Some(VarKind::List) => {}
                        Some(VarKind::Widget) => self.error(
                            "type-mismatch",
                            *span,
                            format!("`{source}` is a single widget, not a list"),
                        ),
                        None => self.error("unbound-variable", *span, format!("unbound variable `{source}`")),
                    }
                    self.scopes.push(HashMap::from([(elem.clone(), VarKind::Widget)]));
                    self.expect_bool(predicate, "pick predicate");
                    self.scopes.pop();
                    self.bind(var, VarKind::Widget);
                }
                Stmt::Do(a) => self.action(a),
                Stmt::If {
                    cond,
                    then_branch,
                    else_branch,
                    ..
                } => {
                    self.expect_bool(cond, "branch condition");
                    self.block(then_branch, true);
                    if let Some(e) = else_branch {
                        self.block(e, true);
                    }
                }
            }
        }
        if scoped {
            self.scopes.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(ds: &[Diagnostic]) -> usize {
        ds.iter().filter(|d| d.severity == Severity::Error).count()
    }

    #[test]
    fn undefined_variable_is_one_error() {
        let ast = parse_property_unchecked("property p { pre { true } run { click(ghost); } post { assert true; } }")
            .unwrap();
        let ds = validate(&ast, None);
        assert_eq!(errors(&ds), 1, "{ds:?}");
        assert_eq!(ds[0].code, "unbound-variable");
    }

    #[test]
    fn branch_bindings_do_not_leak() {
        let ast = parse_property_unchecked(
            r#"property p { pre { true } run {
                 if true { let xs = all(widget(text="a")); let x = pick(xs, e => true); click(x); }
               } post { assert equals(x, "a"); } }"#,
        )
        .unwrap();
        let ds = validate(&ast, None);
        assert_eq!(errors(&ds), 1, "{ds:?}");
    }

    #[test]
    fn action_shapes() {
        let mut ast = parse_property("property p { pre { true } run { wait(100); } post { } }").unwrap();
        assert!(validate(&ast, None).is_empty());
        if let Stmt::Do(a) = &mut ast.interaction[0] {
            a.argument = Some(ActionArg::Millis(10_001));
        }
        assert_eq!(errors(&validate(&ast, None)), 1);
        ast.interaction[0] = Stmt::Do(Action {
            kind: ActionKind::SetText,
            target: Some(Target::Selector(Selector::single(Field::Id, "title"))),
            argument: None,
            span: Span::default(),
        });
        assert_eq!(validate(&ast, None)[0].code, "bad-action");
    }

    #[test]
    fn list_var_used_as_value() {
        let ast = parse_property_unchecked(
            r#"property p { pre { true } run { let xs = all(widget(text="a")); click(xs); } post { } }"#,
        )
        .unwrap();
        assert_eq!(validate(&ast, None)[0].code, "type-mismatch");
    }

    #[test]
    fn grounding_warnings() {
        use crate::grounding::tests::{annotated_store, widget};
        let store = annotated_store(vec![(
            widget(
                Some("Settings"),
                Some("app.settings"),
                None,
                "android.widget.Button",
                true,
                0,
            ),
            "Settings option",
            "Opens the settings screen",
        )]);
        let ok = parse_property(
            r#"property p { pre { exists(widget(text="Settings")) } run { click(widget(text="Settings")); } post { } }"#,
        )
        .unwrap();
        assert!(validate(&ok, Some(&store)).is_empty());
        let ghost =
            parse_property(r#"property p { pre { true } run { click(widget(id="nonexistent")); } post { } }"#).unwrap();
        let ds = validate(&ghost, Some(&store));
        assert_eq!(ds.len(), 1);
        assert_eq!((ds[0].severity, ds[0].code), (Severity::Warning, "ungrounded-selector"));
    }

    #[test]
    fn no_events_is_an_error() {
        let ast = parse_property_unchecked("property p { pre { true } run { } post { } }").unwrap();
        assert_eq!(validate(&ast, None)[0].code, "no-events");
    }
}
