use serde::{Deserialize, Serialize};

use super::*;

/// Size of a property: logical clauses and operators in the pre- and
/// postconditions, number of events, and printed length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComplexityMetrics {
    pub clause_count: usize,
    pub operator_count: usize,
    pub event_count: usize,
    pub char_count: usize,
}

pub fn complexity(ast: &PropertyAst) -> ComplexityMetrics {
    let mut clauses = 0;
    let mut operators = 0;
    count_logic(&ast.precondition, &mut clauses, &mut operators);
    for a in &ast.postcondition {
        count_logic(&a.expr, &mut clauses, &mut operators);
    }
    ComplexityMetrics {
        clause_count: clauses,
        operator_count: operators,
        event_count: ast.actions().len(),
        char_count: char_complexity(&print_property(ast)),
    }
}

fn count_logic(e: &Expr, clauses: &mut usize, operators: &mut usize) {
    match e {
        Expr::Not { operand, .. } => {
            *operators += 1;
            count_logic(operand, clauses, operators);
        }
        Expr::And { lhs, rhs, .. } | Expr::Or { lhs, rhs, .. } => {
            *operators += 1;
            count_logic(lhs, clauses, operators);
            count_logic(rhs, clauses, operators);
        }
        // Atomic boolean terms. String-typed leaves only appear inside these.
        Expr::Bool { .. } | Expr::Exists { .. } | Expr::Compare { .. } => *clauses += 1,
        Expr::Str { .. } | Expr::Int { .. } | Expr::Var { .. } | Expr::Attr { .. } => {}
    }
}

/// Character count of free text, in Unicode scalar values.
pub fn char_complexity(text: &str) -> usize {
    text.chars().count()
}

#[cfg(test)]
mod tests {
    use super::super::parser::tests::OPEN_DIR;
    use super::*;

    #[test]
    fn minimal_counts() {
        let ast = parse_property("property p { pre { true } run { press_back() } post { assert true } }").unwrap();
        let m = complexity(&ast);
        assert_eq!((m.clause_count, m.operator_count, m.event_count), (2, 0, 1));
        assert_eq!(m.char_count, print_property(&ast).chars().count());
    }

    #[test]
    fn amaze_counts() {
        let m = complexity(&parse_property(OPEN_DIR).unwrap());
        // pre: 2 exists + 1 and; post: 1 contains
        assert_eq!((m.clause_count, m.operator_count, m.event_count), (3, 1, 1));
    }

    #[test]
    fn branches_counted_once_each() {
        let ast = parse_property(
            r#"property p { pre { true } run {
                 if exists(widget(text="a")) { click(widget(text="a")); } else { press_back(); press_back(); }
               } post { } }"#,
        )
        .unwrap();
        assert_eq!(complexity(&ast).event_count, 3);
    }

    #[test]
    fn char_counts() {
        assert_eq!(char_complexity("click the undo button"), 21);
        assert_eq!(char_complexity(""), 0);
        // Independent count: one scalar per char, newline included.
        let text = "Precondition: é exists\nFunction body:\n1. Click ✓";
        let manual = text.bytes().filter(|b| (b & 0xC0) != 0x80).count();
        assert_eq!(char_complexity(text), manual);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn char_complexity_is_additive(a in any::<String>(), b in any::<String>()) {
                prop_assert_eq!(char_complexity(&(a.clone() + &b)), char_complexity(&a) + char_complexity(&b));
            }
        }
    }
}
