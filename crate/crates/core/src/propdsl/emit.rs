//! Template-driven rendering of a property into another script shape.
//!
//! A template maps node kinds to format strings with `{placeholder}` holes.
//! Block placeholders (`{run}`, `{post}`, `{then}`, `{else}`) expand to one
//! line per statement, each indented and newline-terminated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::printer::{escape, needs_parens, precedence};
use super::*;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmitError {
    #[error("template `{template}` has no rendering for `{kind}`")]
    UnsupportedNode { template: String, kind: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionTemplate {
    pub name: String,
    pub indent: String,
    /// Indentation depth of the top-level `run`/`post` statements.
    pub block_depth: usize,
    pub rules: BTreeMap<String, String>,
}

impl EmissionTemplate {
    /// Renders the DSL itself; output equals [`print_property`].
    pub fn dsl() -> Self {
        serde_json::from_str(include_str!("../../assets/templates/dsl.template.json"))
            .expect("bundled dsl template is valid")
    }

    /// Kea-style Python property with uiautomator2 selectors.
    pub fn kea() -> Self {
        serde_json::from_str(include_str!("../../assets/templates/kea.template.json"))
            .expect("bundled kea template is valid")
    }

    fn rule(&self, kind: &str) -> Result<&str, EmitError> {
        self.rules
            .get(kind)
            .map(String::as_str)
            .ok_or_else(|| EmitError::UnsupportedNode {
                template: self.name.clone(),
                kind: kind.to_string(),
            })
    }

    fn fill(&self, kind: &str, vars: &[(&str, &str)]) -> Result<String, EmitError> {
        Ok(substitute(self.rule(kind)?, vars))
    }
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        let key = &after[..key_len];
        let closed = after[key_len..].starts_with('}');
        match vars
            .iter()
            .find(|(k, _)| *k == key)
            .filter(|_| closed && !key.is_empty())
        {
            Some((_, value)) => {
                out.push_str(value);
                rest = &after[key_len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders `ast` through `template`. Pure substitution; nothing is
/// reinterpreted.
pub fn emit_framework_script(ast: &PropertyAst, template: &EmissionTemplate) -> Result<String, EmitError> {
    let e = Emitter { t: template };
    let pre = e.expr(&ast.precondition)?;
    let run = e.block(&ast.interaction, template.block_depth)?;
    let mut post_stmts = Vec::new();
    for a in &ast.postcondition {
        let expr = e.expr(&a.expr)?;
        post_stmts.push(template.fill("assert", &[("expr", &expr)])?);
    }
    let post = e.indent_lines(&post_stmts, template.block_depth);
    template.fill(
        "property",
        &[("name", &ast.name), ("pre", &pre), ("run", &run), ("post", &post)],
    )
}

struct Emitter<'a> {
    t: &'a EmissionTemplate,
}

impl Emitter<'_> {
    fn indent_lines(&self, stmts: &[String], depth: usize) -> String {
        let pad = self.t.indent.repeat(depth);
        let mut out = String::new();
        for s in stmts {
            for line in s.lines() {
                out.push_str(&pad);
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    fn block(&self, stmts: &[Stmt], depth: usize) -> Result<String, EmitError> {
        let rendered = stmts.iter().map(|s| self.stmt(s)).collect::<Result<Vec<_>, _>>()?;
        Ok(self.indent_lines(&rendered, depth))
    }

    fn stmt(&self, s: &Stmt) -> Result<String, EmitError> {
        let t = self.t;
        match s {
            Stmt::LetAll { var, selector, .. } => {
                let sel = self.selector(selector)?;
                t.fill("let_all", &[("var", var), ("selector", &sel)])
            }
            Stmt::LetPick {
                var,
                source,
                elem,
                predicate,
                ..
            } => {
                let pred = self.expr(predicate)?;
                t.fill(
                    "let_pick",
                    &[("var", var), ("source", source), ("elem", elem), ("pred", &pred)],
                )
            }
            Stmt::Do(a) => {
                let target = match &a.target {
                    Some(t) => self.target(t)?,
                    None => String::new(),
                };
                let (text, ms) = match &a.argument {
                    Some(ActionArg::Text(s)) => (escape(s), String::new()),
                    Some(ActionArg::Millis(ms)) => (String::new(), ms.to_string()),
                    None => (String::new(), String::new()),
                };
                t.fill(a.kind.keyword(), &[("target", &target), ("text", &text), ("ms", &ms)])
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                let cond = self.expr(cond)?;
                let then = self.block(then_branch, 1)?;
                match else_branch {
                    Some(e) => {
                        let els = self.block(e, 1)?;
                        t.fill("if_else", &[("cond", &cond), ("then", &then), ("else", &els)])
                    }
                    None => t.fill("if", &[("cond", &cond), ("then", &then)]),
                }
            }
        }
    }

    fn selector(&self, sel: &Selector) -> Result<String, EmitError> {
        let mut parts = Vec::new();
        for c in &sel.clauses {
            let field = self.t.rule(&format!("field.{}", c.field))?;
            let kind = match c.mode {
                MatchMode::Exact => "clause",
                MatchMode::Contains => "clause_contains",
            };
            parts.push(self.t.fill(kind, &[("field", field), ("value", &escape(&c.value))])?);
        }
        let sep = self.t.rule("clause_sep")?;
        self.t.fill("selector", &[("clauses", &parts.join(sep))])
    }

    fn target(&self, t: &Target) -> Result<String, EmitError> {
        match t {
            Target::Selector(s) => self.selector(s),
            Target::Var { name, .. } => self.t.fill("var", &[("name", name)]),
        }
    }

    fn operand(&self, parent: u8, e: &Expr, right: bool) -> Result<String, EmitError> {
        let inner = self.expr(e)?;
        if needs_parens(parent, e, right) {
            self.t.fill("paren", &[("inner", &inner)])
        } else {
            Ok(inner)
        }
    }

    fn expr(&self, e: &Expr) -> Result<String, EmitError> {
        let t = self.t;
        match e {
            Expr::Str { value, .. } => t.fill("string", &[("value", &escape(value))]),
            Expr::Int { value, .. } => t.fill("int", &[("value", &value.to_string())]),
            Expr::Bool { value, .. } => t.fill(if *value { "true" } else { "false" }, &[]),
            Expr::Var { name, .. } => t.fill("var_value", &[("name", name)]),
            Expr::Attr { target, field, .. } => {
                let target = self.target(target)?;
                t.fill("attr", &[("target", &target), ("field", field.as_str())])
            }
            Expr::Exists { selector, .. } => {
                let sel = self.selector(selector)?;
                t.fill("exists", &[("selector", &sel)])
            }
            Expr::Compare { op, lhs, rhs, .. } => {
                let l = self.expr(lhs)?;
                let r = self.expr(rhs)?;
                t.fill(op.keyword(), &[("lhs", &l), ("rhs", &r)])
            }
            Expr::Not { operand, .. } => {
                let inner = if precedence(operand) < 3 {
                    let i = self.expr(operand)?;
                    t.fill("paren", &[("inner", &i)])?
                } else {
                    self.expr(operand)?
                };
                t.fill("not", &[("operand", &inner)])
            }
            Expr::And { lhs, rhs, .. } => {
                let l = self.operand(2, lhs, false)?;
                let r = self.operand(2, rhs, true)?;
                t.fill("and", &[("lhs", &l), ("rhs", &r)])
            }
            Expr::Or { lhs, rhs, .. } => {
                let l = self.operand(1, lhs, false)?;
                let r = self.operand(1, rhs, true)?;
                t.fill("or", &[("lhs", &l), ("rhs", &r)])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::tests::OPEN_DIR;
    use super::*;

    #[test]
    fn substitution_leaves_braces_alone() {
        assert_eq!(
            substitute("if {cond} {\n{then}}", &[("cond", "x"), ("then", "  y\n")]),
            "if x {\n  y\n}"
        );
        assert_eq!(substitute("{unknown} {", &[]), "{unknown} {");
    }

    #[test]
    fn identity_template_matches_printer() {
        let dsl = EmissionTemplate::dsl();
        for src in [
            "property p { pre { true } run { press_back() } post { assert true } }",
            OPEN_DIR,
        ] {
            let ast = parse_property(src).unwrap();
            assert_eq!(emit_framework_script(&ast, &dsl).unwrap(), print_property(&ast));
        }
    }

    #[test]
    fn missing_if_rule_is_unsupported() {
        let ast = parse_property(r#"property p { pre { true } run { if true { press_back(); } } post { } }"#).unwrap();
        let mut t = EmissionTemplate::dsl();
        t.rules.remove("if");
        assert_eq!(
            emit_framework_script(&ast, &t),
            Err(EmitError::UnsupportedNode {
                template: "dsl".into(),
                kind: "if".into()
            })
        );
    }
}
