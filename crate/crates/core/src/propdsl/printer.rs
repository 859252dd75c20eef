use std::fmt::Write;

use super::*;

const INDENT: &str = "  ";

/// Canonical text of a property; `parse_property` of the result yields an
/// equal AST.
pub fn print_property(ast: &PropertyAst) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "property {} {{", ast.name);
    let _ = writeln!(out, "{INDENT}pre {{");
    let _ = writeln!(out, "{INDENT}{INDENT}{}", print_expr(&ast.precondition));
    let _ = writeln!(out, "{INDENT}}}");
    let _ = writeln!(out, "{INDENT}run {{");
    print_block(&ast.interaction, 2, &mut out);
    let _ = writeln!(out, "{INDENT}}}");
    let _ = writeln!(out, "{INDENT}post {{");
    for a in &ast.postcondition {
        let _ = writeln!(out, "{INDENT}{INDENT}assert {};", print_expr(&a.expr));
    }
    let _ = writeln!(out, "{INDENT}}}");
    out.push_str("}\n");
    out
}

fn print_block(stmts: &[Stmt], depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    for s in stmts {
        match s {
            Stmt::LetAll { var, selector, .. } => {
                let _ = writeln!(out, "{pad}let {var} = all({});", print_selector(selector));
            }
            Stmt::LetPick {
                var,
                source,
                elem,
                predicate,
                ..
            } => {
                let _ = writeln!(
                    out,
                    "{pad}let {var} = pick({source}, {elem} => {});",
                    print_expr(predicate)
                );
            }
            Stmt::Do(a) => {
                let _ = writeln!(out, "{pad}{};", print_action(a));
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                let _ = writeln!(out, "{pad}if {} {{", print_expr(cond));
                print_block(then_branch, depth + 1, out);
                match else_branch {
                    Some(e) => {
                        let _ = writeln!(out, "{pad}}} else {{");
                        print_block(e, depth + 1, out);
                        let _ = writeln!(out, "{pad}}}");
                    }
                    None => {
                        let _ = writeln!(out, "{pad}}}");
                    }
                }
            }
        }
    }
}

/// One statement on one line; `if` bodies are joined with spaces.
pub fn print_stmt(s: &Stmt) -> String {
    let mut out = String::new();
    print_block(std::slice::from_ref(s), 0, &mut out);
    out.lines().map(str::trim).collect::<Vec<_>>().join(" ")
}

fn print_action(a: &Action) -> String {
    let mut args = Vec::new();
    if let Some(t) = &a.target {
        args.push(print_target(t));
    }
    match &a.argument {
        Some(ActionArg::Text(s)) => args.push(quote(s)),
        Some(ActionArg::Millis(ms)) => args.push(ms.to_string()),
        None => {}
    }
    format!("{}({})", a.kind.keyword(), args.join(", "))
}

fn print_target(t: &Target) -> String {
    match t {
        Target::Selector(s) => print_selector(s),
        Target::Var { name, .. } => name.clone(),
    }
}

pub fn print_selector(sel: &Selector) -> String {
    let clauses: Vec<String> = sel
        .clauses
        .iter()
        .map(|c| {
            let op = match c.mode {
                MatchMode::Exact => "=",
                MatchMode::Contains => "~=",
            };
            format!("{}{}{}", c.field, op, quote(&c.value))
        })
        .collect();
    format!("widget({})", clauses.join(", "))
}

/// Binding strength used to decide where parentheses are needed.
pub(super) fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Or { .. } => 1,
        Expr::And { .. } => 2,
        Expr::Not { .. } => 3,
        _ => 4,
    }
}

/// Parenthesization for binary operands so that re-parsing (left
/// associative) reproduces the same tree.
pub(super) fn needs_parens(parent: u8, child: &Expr, right: bool) -> bool {
    let p = precedence(child);
    p < parent || (right && p == parent && parent < 3)
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Str { value, .. } => quote(value),
        Expr::Int { value, .. } => value.to_string(),
        Expr::Bool { value, .. } => value.to_string(),
        Expr::Var { name, .. } => name.clone(),
        Expr::Attr { target, field, .. } => {
            format!("attr({}, \"{}\")", print_target(target), field)
        }
        Expr::Exists { selector, .. } => format!("exists({})", print_selector(selector)),
        Expr::Compare { op, lhs, rhs, .. } => {
            format!("{}({}, {})", op.keyword(), print_expr(lhs), print_expr(rhs))
        }
        Expr::Not { operand, .. } => {
            if precedence(operand) < 3 {
                format!("not ({})", print_expr(operand))
            } else {
                format!("not {}", print_expr(operand))
            }
        }
        Expr::And { lhs, rhs, .. } => binary("and", 2, lhs, rhs),
        Expr::Or { lhs, rhs, .. } => binary("or", 1, lhs, rhs),
    }
}

fn binary(op: &str, prec: u8, lhs: &Expr, rhs: &Expr) -> String {
    let side = |e: &Expr, right| {
        if needs_parens(prec, e, right) {
            format!("({})", print_expr(e))
        } else {
            print_expr(e)
        }
    };
    format!("{} {op} {}", side(lhs, false), side(rhs, true))
}

pub(super) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn quote(s: &str) -> String {
    format!("\"{}\"", escape(s))
}

#[cfg(test)]
mod tests {
    use super::super::parser::tests::OPEN_DIR;
    use super::*;

    #[test]
    fn minimal_canonical_text() {
        let ast = parse_property("property p { pre { true } run { press_back() } post { assert true } }").unwrap();
        let text = print_property(&ast);
        assert_eq!(
            text,
            "property p {\n  pre {\n    true\n  }\n  run {\n    press_back();\n  }\n  post {\n    assert true;\n  }\n}\n"
        );
        assert_eq!(parse_property(&text).unwrap(), ast);
    }

    #[test]
    fn amaze_round_trip() {
        let ast = parse_property(OPEN_DIR).unwrap();
        let printed = print_property(&ast);
        assert_eq!(parse_property(&printed).unwrap(), ast);
        assert_eq!(print_property(&parse_property(&printed).unwrap()), printed);
    }

    #[test]
    fn nested_if_round_trip() {
        let src = r#"property p {
  pre { exists(widget(text="A")) or not (exists(widget(text="B")) and true) }
  run {
    if exists(widget(desc~="menu")) {
      click(widget(desc~="menu"));
      if not exists(widget(text="C")) { press_back(); } else { wait(250); }
    } else {
      set_text(widget(class="android.widget.EditText"), "a \"quoted\"\nline");
    }
  }
  post { assert true or false and (true or false); }
}"#;
        let ast = parse_property(src).unwrap();
        let printed = print_property(&ast);
        assert_eq!(parse_property(&printed).unwrap(), ast);
    }

    #[test]
    fn right_nested_conjunction_keeps_shape() {
        let e = Expr::and(Expr::bool(true), Expr::and(Expr::bool(false), Expr::bool(true)));
        assert_eq!(print_expr(&e), "true and (false and true)");
        let e = Expr::and(Expr::and(Expr::bool(true), Expr::bool(false)), Expr::bool(true));
        assert_eq!(print_expr(&e), "true and false and true");
    }
}
