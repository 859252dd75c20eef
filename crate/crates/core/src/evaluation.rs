//! Judging a generated property against a ground truth: behavior on a
//! correct/buggy model pair, a structural diff, and a failure symptom.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::grounding::{resolve_selector, WidgetContextStore};
use crate::propdsl::*;
use crate::simulator::{execute_property, AppModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no seeded-bug model supplied")]
    ModelPairMissing,
    #[error("generated and ground-truth sets do not line up: {0}")]
    NameMismatch(String),
}

/// A correct model and its seeded-bug variant.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub correct: AppModel,
    pub buggy: Option<AppModel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdicts {
    pub gen_correct: String,
    pub gen_buggy: String,
    pub gt_correct: String,
    pub gt_buggy: String,
}

impl Verdicts {
    pub fn agree(&self) -> bool {
        self.gen_correct == self.gt_correct && self.gen_buggy == self.gt_buggy
    }
}

pub fn behavioral_verdicts(pair: &ModelPair, gen: &PropertyAst, gt: &PropertyAst) -> Result<Verdicts, EvalError> {
    let buggy = pair.buggy.as_ref().ok_or(EvalError::ModelPairMissing)?;
    let kind = |m: &AppModel, p: &PropertyAst| execute_property(m, p).0.kind().to_string();
    Ok(Verdicts {
        gen_correct: kind(&pair.correct, gen),
        gen_buggy: kind(buggy, gen),
        gt_correct: kind(&pair.correct, gt),
        gt_buggy: kind(buggy, gt),
    })
}

/// Same verdict kinds on both the correct and the seeded-bug model.
pub fn behavioral_equivalent(pair: &ModelPair, gen: &PropertyAst, gt: &PropertyAst) -> Result<bool, EvalError> {
    behavioral_verdicts(pair, gen, gt).map(|v| v.agree())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    WidgetMismatch,
    ActionMismatch,
    Missing,
    Extra,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventPair {
    pub gen: Option<String>,
    pub gt: Option<String>,
    pub status: EventStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchDiff {
    Equal,
    MissingBranch,
    ExtraBranch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuralDiff {
    pub missing_pre_clauses: Vec<String>,
    pub extra_pre_clauses: Vec<String>,
    pub missing_post_clauses: Vec<String>,
    pub extra_post_clauses: Vec<String>,
    /// Aligned events that differ; matches are only counted.
    pub event_diff: Vec<EventPair>,
    pub matched_events: usize,
    pub branch_diff: BranchDiff,
    /// Same atoms under different operators, differing pick predicates or
    /// collected lists, and differing branch conditions.
    pub logic_mismatches: Vec<String>,
}

impl StructuralDiff {
    pub fn is_empty(&self) -> bool {
        self.missing_pre_clauses.is_empty()
            && self.extra_pre_clauses.is_empty()
            && self.missing_post_clauses.is_empty()
            && self.extra_post_clauses.is_empty()
            && self.event_diff.is_empty()
            && self.branch_diff == BranchDiff::Equal
            && self.logic_mismatches.is_empty()
    }

    fn events_with(&self, status: EventStatus) -> usize {
        self.event_diff.iter().filter(|e| e.status == status).count()
    }

    /// One-line summary for report tables.
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        let mut add = |n: usize, what: &str| {
            if n > 0 {
                parts.push(format!("{n} {what}"));
            }
        };
        add(self.missing_pre_clauses.len(), "missing pre");
        add(self.extra_pre_clauses.len(), "extra pre");
        add(self.missing_post_clauses.len(), "missing post");
        add(self.extra_post_clauses.len(), "extra post");
        add(self.events_with(EventStatus::WidgetMismatch), "widget mismatch");
        add(self.events_with(EventStatus::ActionMismatch), "action mismatch");
        add(self.events_with(EventStatus::Missing), "missing event");
        add(self.events_with(EventStatus::Extra), "extra event");
        add(self.logic_mismatches.len(), "logic mismatch");
        match self.branch_diff {
            BranchDiff::Equal => {}
            BranchDiff::MissingBranch => parts.push("missing branch".into()),
            BranchDiff::ExtraBranch => parts.push("extra branch".into()),
        }
        if parts.is_empty() {
            "identical".into()
        } else {
            parts.join(", ")
        }
    }
}

/// Canonical rendering: selectors become the set of store widgets they
/// resolve to (their own text when they resolve to none), variables their
/// binding position.
struct Canon<'a> {
    store: &'a WidgetContextStore,
    vars: HashMap<String, String>,
}

impl<'a> Canon<'a> {
    fn new(ast: &PropertyAst, store: &'a WidgetContextStore) -> Self {
        fn walk(stmts: &[Stmt], vars: &mut HashMap<String, String>) {
            for s in stmts {
                match s {
                    Stmt::LetAll { var, .. } | Stmt::LetPick { var, .. } => {
                        let n = vars.len();
                        vars.insert(var.clone(), format!("${n}"));
                    }
                    Stmt::If {
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        walk(then_branch, vars);
                        if let Some(e) = else_branch {
                            walk(e, vars);
                        }
                    }
                    Stmt::Do(_) => {}
                }
            }
        }
        let mut vars = HashMap::new();
        walk(&ast.interaction, &mut vars);
        Self { store, vars }
    }

    fn selector(&self, sel: &Selector) -> String {
        let uids = resolve_selector(sel, self.store);
        if uids.is_empty() {
            print_selector(sel)
        } else {
            format!("W[{}]", uids.into_iter().collect::<Vec<_>>().join(","))
        }
    }

    fn var(&self, name: &str) -> String {
        self.vars.get(name).cloned().unwrap_or_else(|| format!("?{name}"))
    }

    fn target(&self, t: &Target) -> String {
        match t {
            Target::Selector(s) => self.selector(s),
            Target::Var { name, .. } => self.var(name),
        }
    }

    fn expr(&self, e: &Expr) -> String {
        match e {
            Expr::Str { value, .. } => format!("{value:?}"),
            Expr::Int { value, .. } => value.to_string(),
            Expr::Bool { value, .. } => value.to_string(),
            Expr::Var { name, .. } => self.var(name),
            Expr::Attr { target, field, .. } => format!("attr({},{field})", self.target(target)),
            Expr::Exists { selector, .. } => format!("exists({})", self.selector(selector)),
            Expr::Compare { op, lhs, rhs, .. } => {
                format!("{}({},{})", op.keyword(), self.expr(lhs), self.expr(rhs))
            }
            Expr::Not { operand, .. } => format!("not({})", self.expr(operand)),
            Expr::And { lhs, rhs, .. } => format!("and({},{})", self.expr(lhs), self.expr(rhs)),
            Expr::Or { lhs, rhs, .. } => format!("or({},{})", self.expr(lhs), self.expr(rhs)),
        }
    }

    /// Atomic terms under `e`, sorted, ignoring the operators around them.
    fn atoms(&self, e: &Expr) -> Vec<String> {
        fn walk(c: &Canon, e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Not { operand, .. } => walk(c, operand, out),
                Expr::And { lhs, rhs, .. } | Expr::Or { lhs, rhs, .. } => {
                    walk(c, lhs, out);
                    walk(c, rhs, out);
                }
                other => out.push(c.expr(other)),
            }
        }
        let mut out = Vec::new();
        walk(self, e, &mut out);
        out.sort();
        out
    }
}

fn conjuncts<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    match e {
        Expr::And { lhs, rhs, .. } => {
            conjuncts(lhs, out);
            conjuncts(rhs, out);
        }
        other => out.push(other),
    }
}

struct ClauseDiff {
    missing: Vec<String>,
    extra: Vec<String>,
    logic: Vec<String>,
}

fn compare_clauses(gen: &[&Expr], gt: &[&Expr], cg: &Canon, ct: &Canon) -> ClauseDiff {
    let mut gt_left: Vec<Option<&Expr>> = gt.iter().map(|e| Some(*e)).collect();
    let gt_keys: Vec<String> = gt.iter().map(|e| ct.expr(e)).collect();
    let mut extra = Vec::new();
    for e in gen {
        let key = cg.expr(e);
        match (0..gt.len()).find(|&i| gt_left[i].is_some() && gt_keys[i] == key) {
            Some(i) => gt_left[i] = None,
            None => extra.push(*e),
        }
    }
    let mut missing: Vec<&Expr> = gt_left.into_iter().flatten().collect();
    // An extra and a missing clause over the same atoms differ only in
    // their operators.
    let mut logic = Vec::new();
    extra.retain(|x| {
        let atoms = cg.atoms(x);
        match missing.iter().position(|m| ct.atoms(m) == atoms) {
            Some(i) => {
                let m = missing.remove(i);
                logic.push(format!("`{}` written as `{}`", print_expr(m), print_expr(x)));
                false
            }
            None => true,
        }
    });
    // Regrouped conjuncts, e.g. `a and b` written as `a or b`.
    if !missing.is_empty() && !extra.is_empty() {
        let mut ma: Vec<String> = missing.iter().flat_map(|m| ct.atoms(m)).collect();
        let mut xa: Vec<String> = extra.iter().flat_map(|x| cg.atoms(x)).collect();
        ma.sort();
        xa.sort();
        if ma == xa {
            let shown = |v: &[&Expr]| v.iter().map(|e| print_expr(e)).collect::<Vec<_>>().join(" and ");
            logic.push(format!("`{}` written as `{}`", shown(&missing), shown(&extra)));
            missing.clear();
            extra.clear();
        }
    }
    ClauseDiff {
        missing: missing.into_iter().map(print_expr).collect(),
        extra: extra.into_iter().map(print_expr).collect(),
        logic,
    }
}

#[derive(Debug, Clone)]
struct Event {
    kind: ActionKind,
    target: String,
    argument: String,
    /// Branch position, e.g. `0.then`.
    path: String,
    shown: String,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind && self.target == o.target && self.argument == o.argument && self.path == o.path
    }
}

/// Everything in an interaction except the actions themselves.
#[derive(Default)]
struct Shape {
    events: Vec<Event>,
    lets: Vec<String>,
    lets_shown: Vec<String>,
    /// (has else, canonical condition, printed condition) per `if`.
    branches: Vec<(bool, String, String)>,
}

fn shape(ast: &PropertyAst, c: &Canon) -> Shape {
    fn walk(stmts: &[Stmt], path: &str, c: &Canon, out: &mut Shape) {
        for s in stmts {
            match s {
                Stmt::Do(a) => {
                    let target = a.target.as_ref().map(|t| c.target(t)).unwrap_or_default();
                    let argument = match &a.argument {
                        Some(ActionArg::Text(t)) => format!("{t:?}"),
                        Some(ActionArg::Millis(ms)) => ms.to_string(),
                        None => String::new(),
                    };
                    out.events.push(Event {
                        kind: a.kind,
                        target,
                        argument,
                        path: path.to_string(),
                        shown: print_stmt(s),
                    });
                }
                Stmt::LetAll { selector, .. } => {
                    out.lets.push(format!("all({})", c.selector(selector)));
                    out.lets_shown.push(print_stmt(s));
                }
                Stmt::LetPick { source, predicate, .. } => {
                    // The element binding is local; name it positionally.
                    let mut local = Canon {
                        store: c.store,
                        vars: c.vars.clone(),
                    };
                    if let Stmt::LetPick { elem, .. } = s {
                        local.vars.insert(elem.clone(), "$elem".into());
                    }
                    out.lets
                        .push(format!("pick({},{})", c.var(source), local.expr(predicate)));
                    out.lets_shown.push(print_stmt(s));
                }
                Stmt::If {
                    cond,
                    then_branch,
                    else_branch,
                    ..
                } => {
                    let n = out.branches.len();
                    out.branches
                        .push((else_branch.is_some(), c.expr(cond), print_expr(cond)));
                    walk(then_branch, &format!("{path}/{n}.then"), c, out);
                    if let Some(e) = else_branch {
                        walk(e, &format!("{path}/{n}.else"), c, out);
                    }
                }
            }
        }
    }
    let mut out = Shape::default();
    walk(&ast.interaction, "", c, &mut out);
    out
}

/// Longest-common-subsequence alignment; unmatched stretches between
/// anchors are paired positionally. Returns the differing pairs and the
/// number of matches.
fn align_events(gen: &[Event], gt: &[Event]) -> (Vec<EventPair>, usize) {
    let (n, m) = (gen.len(), gt.len());
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if gen[i] == gt[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut anchors = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if gen[i] == gt[j] {
            anchors.push((i, j));
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let matched = anchors.len();
    anchors.push((n, m));

    let mut out = Vec::new();
    let (mut gi, mut tj) = (0, 0);
    for (ai, aj) in anchors {
        let g_gap = &gen[gi..ai];
        let t_gap = &gt[tj..aj];
        for k in 0..g_gap.len().max(t_gap.len()) {
            let pair = match (g_gap.get(k), t_gap.get(k)) {
                (Some(g), Some(t)) => EventPair {
                    gen: Some(g.shown.clone()),
                    gt: Some(t.shown.clone()),
                    status: if g.kind == t.kind && g.target != t.target {
                        EventStatus::WidgetMismatch
                    } else {
                        EventStatus::ActionMismatch
                    },
                },
                (Some(g), None) => EventPair {
                    gen: Some(g.shown.clone()),
                    gt: None,
                    status: EventStatus::Extra,
                },
                (None, Some(t)) => EventPair {
                    gen: None,
                    gt: Some(t.shown.clone()),
                    status: EventStatus::Missing,
                },
                (None, None) => unreachable!(),
            };
            out.push(pair);
        }
        gi = ai + 1;
        tj = aj + 1;
    }
    (out, matched)
}

pub fn structural_compare(gen: &PropertyAst, gt: &PropertyAst, store: &WidgetContextStore) -> StructuralDiff {
    let cg = Canon::new(gen, store);
    let ct = Canon::new(gt, store);

    let (mut gp, mut tp) = (Vec::new(), Vec::new());
    conjuncts(&gen.precondition, &mut gp);
    conjuncts(&gt.precondition, &mut tp);
    // A bare `true` precondition states nothing.
    let trivial = |e: &&Expr| !matches!(e, Expr::Bool { value: true, .. });
    gp.retain(trivial);
    tp.retain(trivial);
    let pre = compare_clauses(&gp, &tp, &cg, &ct);

    let (mut gq, mut tq) = (Vec::new(), Vec::new());
    for a in &gen.postcondition {
        conjuncts(&a.expr, &mut gq);
    }
    for a in &gt.postcondition {
        conjuncts(&a.expr, &mut tq);
    }
    gq.retain(trivial);
    tq.retain(trivial);
    let post = compare_clauses(&gq, &tq, &cg, &ct);

    let sg = shape(gen, &cg);
    let st = shape(gt, &ct);
    let mut logic = pre.logic;
    logic.extend(post.logic);

    let mut gt_lets: Vec<Option<usize>> = (0..st.lets.len()).map(Some).collect();
    for (i, l) in sg.lets.iter().enumerate() {
        match gt_lets.iter().position(|j| j.is_some_and(|j| st.lets[j] == *l)) {
            Some(k) => gt_lets[k] = None,
            None => logic.push(format!("binding `{}` differs", sg.lets_shown[i])),
        }
    }
    for j in gt_lets.into_iter().flatten() {
        logic.push(format!("binding `{}` not reproduced", st.lets_shown[j]));
    }

    let branch_diff = {
        let gen_count: usize = sg.branches.iter().map(|b| 1 + b.0 as usize).sum();
        let gt_count: usize = st.branches.iter().map(|b| 1 + b.0 as usize).sum();
        match gen_count.cmp(&gt_count) {
            std::cmp::Ordering::Less => BranchDiff::MissingBranch,
            std::cmp::Ordering::Greater => BranchDiff::ExtraBranch,
            std::cmp::Ordering::Equal => {
                if sg.branches.iter().map(|b| b.0).eq(st.branches.iter().map(|b| b.0)) {
                    BranchDiff::Equal
                } else {
                    BranchDiff::MissingBranch
                }
            }
        }
    };
    for (g, t) in sg.branches.iter().zip(&st.branches) {
        if g.1 != t.1 {
            logic.push(format!("branch condition `{}` written as `{}`", t.2, g.2));
        }
    }

    let (event_diff, matched_events) = align_events(&sg.events, &st.events);
    StructuralDiff {
        missing_pre_clauses: pre.missing,
        extra_pre_clauses: pre.extra,
        missing_post_clauses: post.missing,
        extra_post_clauses: post.extra,
        event_diff,
        matched_events,
        branch_diff,
        logic_mismatches: logic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureSymptom {
    WidgetMismatch,
    LogicIncompleteness,
    LogicRedundancy,
    SemanticDeviation,
    None,
}

pub fn classify_failure(diff: &StructuralDiff, behavioral_ok: bool) -> FailureSymptom {
    if diff.events_with(EventStatus::WidgetMismatch) > 0 {
        return FailureSymptom::WidgetMismatch;
    }
    if !diff.missing_pre_clauses.is_empty()
        || !diff.missing_post_clauses.is_empty()
        || diff.events_with(EventStatus::Missing) > 0
        || diff.branch_diff == BranchDiff::MissingBranch
    {
        return FailureSymptom::LogicIncompleteness;
    }
    if !diff.extra_pre_clauses.is_empty()
        || !diff.extra_post_clauses.is_empty()
        || diff.events_with(EventStatus::Extra) > 0
        || diff.branch_diff == BranchDiff::ExtraBranch
    {
        return FailureSymptom::LogicRedundancy;
    }
    if !diff.is_empty() || !behavioral_ok {
        return FailureSymptom::SemanticDeviation;
    }
    FailureSymptom::None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectnessReport {
    pub behavioral_ok: bool,
    pub verdicts: Verdicts,
    pub diff: StructuralDiff,
    pub symptom: FailureSymptom,
    pub correct: bool,
}

pub fn judge(
    pair: &ModelPair,
    gen: &PropertyAst,
    gt: &PropertyAst,
    store: &WidgetContextStore,
) -> Result<CorrectnessReport, EvalError> {
    let verdicts = behavioral_verdicts(pair, gen, gt)?;
    let behavioral_ok = verdicts.agree();
    let diff = structural_compare(gen, gt, store);
    let symptom = classify_failure(&diff, behavioral_ok);
    Ok(CorrectnessReport {
        correct: behavioral_ok && diff.is_empty(),
        behavioral_ok,
        verdicts,
        diff,
        symptom,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NamedReport {
    pub name: String,
    #[serde(flatten)]
    pub report: CorrectnessReport,
}

/// A property that could not be judged, e.g. because it does not parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unjudged {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub properties: Vec<NamedReport>,
    pub unjudged: Vec<Unjudged>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub symptoms: BTreeMap<String, usize>,
}

impl BatchReport {
    pub fn new(properties: Vec<NamedReport>, unjudged: Vec<Unjudged>) -> Self {
        let total = properties.len() + unjudged.len();
        let correct = properties.iter().filter(|p| p.report.correct).count();
        let mut symptoms = BTreeMap::new();
        for p in &properties {
            if p.report.symptom != FailureSymptom::None {
                *symptoms.entry(format!("{:?}", p.report.symptom)).or_insert(0) += 1;
            }
        }
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            properties,
            unjudged,
            correct,
            total,
            symptoms,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| property | correct | verdicts (gen / gt) | symptom | diff |\n|---|---|---|---|---|\n");
        for p in &self.properties {
            let r = &p.report;
            out.push_str(&format!(
                "| {} | {} | {}, {} / {}, {} | {:?} | {} |\n",
                p.name,
                if r.correct { "yes" } else { "no" },
                r.verdicts.gen_correct,
                r.verdicts.gen_buggy,
                r.verdicts.gt_correct,
                r.verdicts.gt_buggy,
                r.symptom,
                r.diff.summary()
            ));
        }
        for u in &self.unjudged {
            out.push_str(&format!(
                "| {} | no | not judged | - | {} |\n",
                u.name,
                u.error.replace('|', "\\|")
            ));
        }
        out.push_str(&format!(
            "\nAccuracy: {}/{} ({:.1}%)\n",
            self.correct,
            self.total,
            self.accuracy * 100.0
        ));
        out
    }
}
