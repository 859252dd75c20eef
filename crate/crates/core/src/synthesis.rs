//! From structured natural-language descriptions to properties: description
//! parsing, context selection, prompt assembly, the LLM repair loop, and a
//! rule-based baseline for offline use.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{
    match_score, match_widget, render_attribute_object, tokenize, EnrichedWidget, WidgetContextStore,
};
use crate::prompt::{Message, PromptBundle, Role};
use crate::propdsl::*;
use crate::provider::{ChatProvider, ProviderError};

pub const DEFAULT_CONTEXT_BUDGET: usize = 60;
pub const DEFAULT_REPAIR_BUDGET: u32 = 2;
/// Widgets scoring at least this much are always sent, whatever the budget.
pub const ALWAYS_INCLUDE_SCORE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("description has no `{0}` segment")]
    MissingSegment(&'static str),
    #[error("function body has no numbered steps")]
    EmptySteps,
    #[error("expected exactly 2 demonstrations, got {0}")]
    MissingDemos(usize),
    #[error("empty model response")]
    EmptyResponse,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no valid property after {attempts} attempts: {}", diagnostics.join("; "))]
    SynthesisFailed { attempts: u32, diagnostics: Vec<String> },
    #[error("unrecognized step: {0:?}")]
    UnrecognizedStep(String),
    #[error("no widget matches {0:?}")]
    UnresolvedWidget(String),
    #[error("generated property is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyDescription {
    pub name: String,
    pub precondition_text: String,
    pub steps: Vec<String>,
}

impl PropertyDescription {
    pub fn render(&self) -> String {
        let mut out = format!(
            "Property: {}\nPrecondition: {}\nFunction body:\n",
            self.name, self.precondition_text
        );
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{}. {s}\n", i + 1));
        }
        out
    }

    fn lines(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.precondition_text.as_str()).chain(self.steps.iter().map(String::as_str))
    }
}

pub fn parse_description(text: &str) -> Result<PropertyDescription, SynthesisError> {
    parse_description_with_default(text, "unnamed")
}

/// Like [`parse_description`], naming the property `default_name` when the
/// text has no `Property:` header.
pub fn parse_description_with_default(text: &str, default_name: &str) -> Result<PropertyDescription, SynthesisError> {
    #[derive(PartialEq)]
    enum Section {
        Head,
        Pre,
        Body,
    }
    let mut name = None;
    let mut pre = Vec::new();
    let mut steps: Vec<String> = Vec::new();
    let mut section = Section::Head;
    let mut saw_pre = false;
    let mut saw_body = false;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = header_value(line, "property") {
            name = Some(rest.to_string());
            continue;
        }
        if let Some(rest) = header_value(line, "precondition") {
            section = Section::Pre;
            saw_pre = true;
            if !rest.is_empty() {
                pre.push(rest.to_string());
            }
            continue;
        }
        if let Some(rest) = header_value(line, "function body") {
            section = Section::Body;
            saw_body = true;
            if let Some(step) = numbered(rest) {
                steps.push(step.to_string());
            }
            continue;
        }
        match section {
            Section::Head => {}
            Section::Pre => pre.push(line.to_string()),
            Section::Body => match numbered(line) {
                Some(step) => steps.push(step.to_string()),
                None => match steps.last_mut() {
                    Some(last) => {
                        last.push(' ');
                        last.push_str(line);
                    }
                    None => return Err(SynthesisError::EmptySteps),
                },
            },
        }
    }
    if !saw_pre || pre.is_empty() {
        return Err(SynthesisError::MissingSegment("Precondition"));
    }
    if !saw_body {
        return Err(SynthesisError::MissingSegment("Function body"));
    }
    steps.retain(|s| !s.is_empty());
    if steps.is_empty() {
        return Err(SynthesisError::EmptySteps);
    }
    Ok(PropertyDescription {
        name: name
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| default_name.to_string()),
        precondition_text: pre.join(" "),
        steps,
    })
}

/// Value after `header:` when `line` starts with the header, ignoring case
/// and markdown emphasis.
fn header_value<'a>(line: &'a str, header: &str) -> Option<&'a str> {
    let stripped = line.trim_start_matches(['*', '#', ' ']);
    let head = stripped.get(..header.len())?;
    if !head.eq_ignore_ascii_case(header) {
        return None;
    }
    let rest = stripped[header.len()..].trim_start_matches('*').trim_start();
    rest.strip_prefix(':').map(|r| r.trim_start_matches('*').trim())
}

fn numbered(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')).map(str::trim)
}

/// The widgets most relevant to the description: ranked by their best
/// match score over the description lines, cut at `budget`, with strong
/// matches always kept.
pub fn select_context_subset(
    desc: &PropertyDescription,
    store: &WidgetContextStore,
    budget: usize,
) -> Vec<EnrichedWidget> {
    // Each line and each of its comma/"and" clauses is a separate query.
    let queries: Vec<BTreeSet<String>> = desc
        .lines()
        .flat_map(|line| {
            let normalized = line.to_ascii_lowercase().replace(',', " and ");
            let clauses: Vec<String> = normalized.split(" and ").map(str::to_string).collect();
            std::iter::once(line.to_string()).chain(clauses)
        })
        .map(|q| tokenize(&q))
        .filter(|q| !q.is_empty())
        .collect();
    let mut ranked: Vec<(f64, usize, usize)> = store
        .widgets
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let best = queries.iter().map(|q| match_score(q, w)).fold(0.0, f64::max);
            (best, w.attributes.node_index, i)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    ranked
        .into_iter()
        .enumerate()
        .filter(|(rank, (score, _, _))| *rank < budget.max(1) || *score >= ALWAYS_INCLUDE_SCORE)
        .map(|(_, (_, _, i))| store.widgets[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisDemo {
    pub description: String,
    pub property: String,
}

pub fn bundled_synthesis_demos() -> Vec<SynthesisDemo> {
    [
        include_str!("../assets/demos/01_delete_note.demo.json"),
        include_str!("../assets/demos/02_search_tag.demo.json"),
    ]
    .iter()
    .map(|s| serde_json::from_str(s).expect("bundled demo is valid"))
    .collect()
}

pub fn bundled_api_catalog() -> &'static str {
    include_str!("../assets/api_catalog.txt")
}

const SYNTH_ROLE: &str = "You are an expert in Android app testing and property-based GUI testing, and your role is to write executable properties for Android apps in the property DSL described below.";
const SYNTH_API_HEADER: &str = "The following APIs are available for writing property:";
const SYNTH_CONTEXT_HEADER: &str =
    "The app's UI widget identifiers are detailed below for reference, ensuring accurate element selection in tests:";
const SYNTH_EMPTY_CONTEXT: &str =
    "Note: no widget context is available for this app; derive identifiers from the property description only.";
const SYNTH_DEMO_HEADER: &str =
    "Here are the two example test snippets that you might write, based on the given property descriptions:";
const SYNTH_TASK_HEADER: &str = "Your task: Using the available APIs, UI widget identifiers and following the example format, please write a test snippet for the following property:";
const SYNTH_CONSTRAINTS: &str = "Respond only with the property DSL code, strictly adhering to the given property description. Do not include any explanations, comments, or text outside the code block.";

/// One context entry in the shape the model sees.
pub fn render_context_entry(w: &EnrichedWidget) -> String {
    let a = &w.attributes;
    let ann = w.annotation.as_ref();
    render_attribute_object(&[
        ("text", a.text.as_deref()),
        ("resource_id", a.resource_id.as_deref()),
        ("description", a.content_description.as_deref()),
        ("class", Some(&a.class_name)),
        ("semantic label", ann.map(|x| x.semantic_label.as_str())),
        ("functionality", ann.map(|x| x.functionality.as_str())),
    ])
}

/// Assembles the six-part synthesis prompt.
pub fn build_synthesis_prompt(
    desc: &PropertyDescription,
    context: &[EnrichedWidget],
    api_catalog: &str,
    demos: &[SynthesisDemo],
) -> Result<PromptBundle, SynthesisError> {
    if demos.len() != 2 {
        return Err(SynthesisError::MissingDemos(demos.len()));
    }
    let mut p = PromptBundle::default();
    p.push_component(1, "Role Assignment", Message::new(Role::System, SYNTH_ROLE));
    p.push_component(
        2,
        "Framework APIs",
        Message::new(Role::User, format!("{SYNTH_API_HEADER}\n{}", api_catalog.trim_end())),
    );

    let context_text = if context.is_empty() {
        format!("{SYNTH_CONTEXT_HEADER}\n[]\n{SYNTH_EMPTY_CONTEXT}")
    } else {
        let entries: Vec<String> = context
            .iter()
            .map(|w| format!("  {}", render_context_entry(w)))
            .collect();
        format!("{SYNTH_CONTEXT_HEADER}\n[\n{}\n]", entries.join(",\n"))
    };
    p.push_component(3, "Enriched Widget Context", Message::new(Role::User, context_text));

    let mut demo_text = String::from(SYNTH_DEMO_HEADER);
    for (i, d) in demos.iter().enumerate() {
        demo_text.push_str(&format!(
            "\n\nExample {n} description:\n{}\nExample {n} property:\n```\n{}\n```",
            d.description.trim_end(),
            d.property.trim_end(),
            n = i + 1
        ));
    }
    p.push_component(4, "Few-shot Demonstrations", Message::new(Role::User, demo_text));
    p.push_component(
        5,
        "Property Description",
        Message::new(Role::User, format!("{SYNTH_TASK_HEADER}\n{}", desc.render())),
    );
    p.push_component(6, "Constraints", Message::new(Role::User, SYNTH_CONSTRAINTS));
    Ok(p)
}

/// Interior of the first fenced block, or the trimmed response.
pub fn extract_code(response: &str) -> Result<String, SynthesisError> {
    if let Some(start) = response.find("```") {
        let after = &response[start + 3..];
        // Skip the info string on the opening fence line.
        let body = after.find('\n').map(|nl| &after[nl + 1..]).unwrap_or("");
        let inner = body.find("```").map(|end| &body[..end]).unwrap_or(body);
        let inner = inner.trim();
        if !inner.is_empty() {
            return Ok(inner.to_string());
        }
    }
    let trimmed = response.trim();
    if trimmed.is_empty() {
        Err(SynthesisError::EmptyResponse)
    } else {
        Ok(trimmed.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub ast: PropertyAst,
    pub raw_response: String,
    pub retries_used: u32,
    pub provider_model: String,
}

fn repair_request(diagnostic: &str) -> String {
    format!(
        "The property you wrote is not valid:\n{diagnostic}\nFix the problem and respond only with the corrected property DSL code."
    )
}

fn check_reply(reply: &str) -> Result<PropertyAst, String> {
    extract_code(reply)
        .map_err(|e| e.to_string())
        .and_then(|code| parse_property(&code).map_err(|e| e.to_string()))
}

/// The follow-up prompt sent after an invalid `reply` to `prompt`, or
/// `None` when the reply is a valid property.
pub fn repair_prompt(prompt: &PromptBundle, reply: &str) -> Option<PromptBundle> {
    check_reply(reply)
        .err()
        .map(|diag| prompt.with_followup(reply, &repair_request(&diag)))
}

/// Sends the prompt and checks the reply; invalid replies get up to
/// `repair_budget` follow-up rounds carrying the diagnostic.
pub fn synthesize(
    provider: &dyn ChatProvider,
    bundle: &PromptBundle,
    repair_budget: u32,
) -> Result<SynthesisResult, SynthesisError> {
    let mut prompt = bundle.clone();
    let mut diagnostics = Vec::new();
    for attempt in 0..=repair_budget {
        let reply = provider.complete(&prompt)?;
        match check_reply(&reply) {
            Ok(ast) => {
                return Ok(SynthesisResult {
                    ast,
                    raw_response: reply,
                    retries_used: attempt,
                    provider_model: provider.model().to_string(),
                })
            }
            Err(diag) => {
                prompt = prompt.with_followup(&reply, &repair_request(&diag));
                diagnostics.push(diag);
            }
        }
    }
    Err(SynthesisError::SynthesisFailed {
        attempts: repair_budget + 1,
        diagnostics,
    })
}

// ---- baseline ----

/// Rule-based synthesizer for a fixed step vocabulary: click, long click,
/// input "x" into, press back, wait, get, select ... that (does not)
/// contain/start with/equal "x", assert, and single-step if/otherwise.
pub fn baseline_synthesize(
    desc: &PropertyDescription,
    store: &WidgetContextStore,
) -> Result<PropertyAst, SynthesisError> {
    let mut b = Baseline {
        store,
        lists: Vec::new(),
        picks: Vec::new(),
    };
    let precondition = b.precondition(&desc.precondition_text)?;
    let mut interaction = Vec::new();
    let mut postcondition = Vec::new();
    for step in &desc.steps {
        let step = clean(step);
        if let Some(rest) = strip_verb(&step, &["assert", "verify", "check"]) {
            postcondition.push(Assertion {
                expr: b.condition(rest.trim_start_matches("that ").trim())?,
                span: Span::default(),
            });
        } else {
            interaction.push(b.step(&step)?);
        }
    }
    let name = if is_identifier(&desc.name) {
        desc.name.clone()
    } else {
        "unnamed".to_string()
    };
    let ast = PropertyAst {
        name,
        precondition,
        interaction,
        postcondition,
        span: Span::default(),
    };
    if let Some(d) = validate(&ast, None).into_iter().find(|d| d.severity == Severity::Error) {
        return Err(SynthesisError::Invalid(d.message));
    }
    Ok(ast)
}

struct Baseline<'a> {
    store: &'a WidgetContextStore,
    lists: Vec<String>,
    picks: Vec<String>,
}

fn clean(step: &str) -> String {
    step.trim().trim_end_matches(['.', ';']).trim().to_string()
}

/// Rest of `s` after one of the verbs (case-insensitive, whole word).
fn strip_verb<'s>(s: &'s str, verbs: &[&str]) -> Option<&'s str> {
    verbs.iter().find_map(|v| {
        let head = s.get(..v.len())?;
        if !head.eq_ignore_ascii_case(v) {
            return None;
        }
        let rest = &s[v.len()..];
        if rest.is_empty() {
            Some(rest)
        } else if rest.starts_with(' ') {
            Some(rest.trim_start())
        } else {
            None
        }
    })
}

/// Splits at the first case-insensitive occurrence of `sep`.
fn split_ci<'s>(s: &'s str, sep: &str) -> Option<(&'s str, &'s str)> {
    let lower = s.to_ascii_lowercase();
    lower.find(sep).map(|i| (&s[..i], &s[i + sep.len()..]))
}

fn quoted(s: &str) -> Option<String> {
    let s = s.trim();
    for q in ['"', '\'', '“'] {
        if let Some(body) = s.strip_prefix(q) {
            let close = if q == '“' { '”' } else { q };
            return body.strip_suffix(close).map(str::to_string);
        }
    }
    None
}

fn first_quoted(s: &str) -> Option<(String, &str, &str)> {
    let start = s.find('"')?;
    let len = s[start + 1..].find('"')?;
    Some((
        s[start + 1..start + 1 + len].to_string(),
        &s[..start],
        &s[start + 2 + len..],
    ))
}

fn is_pronoun(phrase: &str) -> bool {
    matches!(
        phrase.trim().to_ascii_lowercase().as_str(),
        "it" | "them" | "that item" | "the selected item"
    )
}

const EXISTS_SUFFIXES: &[&str] = &[
    " exists",
    " exist",
    " is displayed",
    " are displayed",
    " is visible",
    " are visible",
    " is shown",
    " are shown",
    " appears",
];
const ABSENT_SUFFIXES: &[&str] = &[
    " does not exist",
    " do not exist",
    " is not displayed",
    " is not visible",
    " is not shown",
    " disappears",
    " is gone",
];

fn strip_suffix_ci<'s>(s: &'s str, suffixes: &[&str]) -> Option<&'s str> {
    let lower = s.to_ascii_lowercase();
    suffixes
        .iter()
        .find(|suf| lower.ends_with(*suf))
        .map(|suf| &s[..s.len() - suf.len()])
}

impl Baseline<'_> {
    fn widget(&self, phrase: &str) -> Result<&EnrichedWidget, SynthesisError> {
        let phrase = phrase.trim();
        let query = quoted(phrase).unwrap_or_else(|| phrase.to_string());
        let unresolved = || SynthesisError::UnresolvedWidget(phrase.to_string());
        let m = match_widget(&query, self.store).map_err(|_| unresolved())?;
        let best = m.candidates.first().ok_or_else(unresolved)?;
        self.store.get(&best.widget_uid).ok_or_else(unresolved)
    }

    /// Selector for the best match: the text if the phrase names it, else
    /// the first present identifier.
    fn selector(&self, phrase: &str) -> Result<Selector, SynthesisError> {
        let w = self.widget(phrase)?;
        let q = tokenize(&quoted(phrase).unwrap_or_else(|| phrase.to_string()));
        let text_named = w
            .attributes
            .text
            .as_deref()
            .is_some_and(|t| !tokenize(t).is_disjoint(&q));
        let order: &[Field] = if text_named {
            &[Field::Text]
        } else {
            &[Field::Id, Field::Desc, Field::Text, Field::Class]
        };
        let field = order
            .iter()
            .copied()
            .find(|f| w.get(*f).is_some())
            .unwrap_or(Field::Class);
        Ok(Selector::single(field, w.get(field).unwrap_or_default()))
    }

    fn target(&self, phrase: &str) -> Result<Target, SynthesisError> {
        if is_pronoun(phrase) {
            return self
                .picks
                .last()
                .map(|v| Target::Var {
                    name: v.clone(),
                    span: Span::default(),
                })
                .ok_or_else(|| SynthesisError::UnresolvedWidget(phrase.to_string()));
        }
        Ok(Target::Selector(self.selector(phrase)?))
    }

    fn precondition(&self, text: &str) -> Result<Expr, SynthesisError> {
        let t = clean(text);
        if matches!(
            t.to_ascii_lowercase().as_str(),
            "none" | "true" | "always" | "any state"
        ) {
            return Ok(Expr::bool(true));
        }
        let mut terms = Vec::new();
        let normalized = t.replace(',', " and ");
        let mut rest = normalized.as_str();
        while let Some((head, tail)) = split_ci(rest, " and ") {
            terms.push(head.to_string());
            rest = tail;
        }
        terms.push(rest.to_string());
        // "A and B exist": the suffix belongs to every conjunct.
        let shared_absent = strip_suffix_ci(terms.last().map(String::as_str).unwrap_or(""), ABSENT_SUFFIXES).is_some();
        let mut exprs = Vec::new();
        for term in terms.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
            let (phrase, absent) = match strip_suffix_ci(term, ABSENT_SUFFIXES) {
                Some(p) => (p, true),
                None => (strip_suffix_ci(term, EXISTS_SUFFIXES).unwrap_or(term), shared_absent),
            };
            let e = Expr::exists(self.selector(phrase)?);
            exprs.push(if absent { Expr::not(e) } else { e });
        }
        Expr::conjunction(exprs).ok_or_else(|| SynthesisError::UnrecognizedStep(text.to_string()))
    }

    /// String-valued operand: a literal, the picked element, or a widget's text.
    fn value(&self, phrase: &str, prefer_pick: bool) -> Result<Expr, SynthesisError> {
        let phrase = phrase.trim();
        if let Some(s) = quoted(phrase) {
            return Ok(Expr::str(s));
        }
        if is_pronoun(phrase) || prefer_pick {
            if let Some(v) = self.picks.last() {
                return Ok(Expr::var(v.clone()));
            }
        }
        Ok(Expr::attr(Target::Selector(self.selector(phrase)?), Field::Text))
    }

    fn condition(&self, text: &str) -> Result<Expr, SynthesisError> {
        let text = text.trim();
        if let Some(phrase) = strip_suffix_ci(text, ABSENT_SUFFIXES) {
            return Ok(Expr::not(Expr::exists(self.selector(phrase)?)));
        }
        for (sep, op, negate) in [
            (" does not contain ", CompareOp::Contains, true),
            (" contains ", CompareOp::Contains, false),
            (" does not start with ", CompareOp::StartsWith, true),
            (" starts with ", CompareOp::StartsWith, false),
            (" does not equal ", CompareOp::Equals, true),
            (" equals ", CompareOp::Equals, false),
            (" is not ", CompareOp::Equals, true),
            (" is ", CompareOp::Equals, false),
        ] {
            if let Some((lhs, rhs)) = split_ci(text, sep) {
                if op == CompareOp::Equals && sep.starts_with(" is") && quoted(rhs).is_none() {
                    continue;
                }
                let e = Expr::compare(op, self.value(lhs, false)?, self.value(rhs, true)?);
                return Ok(if negate { Expr::not(e) } else { e });
            }
        }
        if let Some(phrase) = strip_suffix_ci(text, EXISTS_SUFFIXES) {
            return Ok(Expr::exists(self.selector(phrase)?));
        }
        Err(SynthesisError::UnrecognizedStep(text.to_string()))
    }

    fn fresh(existing: &[String], base: &str) -> String {
        match existing.len() {
            0 => base.to_string(),
            n => format!("{base}_{}", n + 1),
        }
    }

    fn step(&mut self, step: &str) -> Result<Stmt, SynthesisError> {
        let unrecognized = || SynthesisError::UnrecognizedStep(step.to_string());
        if let Some(rest) = strip_verb(step, &["if"]) {
            return self.branch(rest);
        }
        if let Some(rest) = strip_verb(step, &["long click", "long-click", "long press"]) {
            return Ok(Stmt::Do(Action::on(ActionKind::LongClick, self.target(rest)?)));
        }
        if let Some(rest) = strip_verb(step, &["click", "tap"]) {
            return Ok(Stmt::Do(Action::on(ActionKind::Click, self.target(rest)?)));
        }
        if strip_verb(step, &["press back", "go back"]).is_some_and(str::is_empty) {
            return Ok(Stmt::Do(Action {
                kind: ActionKind::PressBack,
                target: None,
                argument: None,
                span: Span::default(),
            }));
        }
        if let Some(rest) = strip_verb(step, &["input", "type", "enter"]) {
            let (text, _, after) = first_quoted(rest).ok_or_else(unrecognized)?;
            let phrase = strip_verb(after.trim(), &["into", "in", "to"]).ok_or_else(unrecognized)?;
            let mut a = Action::on(ActionKind::SetText, self.target(phrase)?);
            a.argument = Some(ActionArg::Text(text));
            return Ok(Stmt::Do(a));
        }
        if let Some(rest) = strip_verb(step, &["wait"]) {
            let rest = rest.trim_start_matches("for ").trim();
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            let n: u64 = digits.parse().map_err(|_| unrecognized())?;
            let unit = rest[digits.len()..].trim().to_ascii_lowercase();
            let ms = match unit.as_str() {
                "" | "ms" | "milliseconds" => n,
                "s" | "second" | "seconds" => n * 1000,
                _ => return Err(unrecognized()),
            };
            return Ok(Stmt::Do(Action {
                kind: ActionKind::Wait,
                target: None,
                argument: Some(ActionArg::Millis(ms)),
                span: Span::default(),
            }));
        }
        if let Some(rest) = strip_verb(step, &["get", "collect"]) {
            let selector = self.selector(rest)?;
            let var = Self::fresh(&self.lists, "items");
            self.lists.push(var.clone());
            return Ok(Stmt::LetAll {
                var,
                selector,
                span: Span::default(),
            });
        }
        if let Some(rest) = strip_verb(step, &["select", "pick", "choose"]) {
            let source = self.lists.last().cloned().ok_or_else(unrecognized)?;
            let elem = Expr::var("e");
            let predicate = match split_ci(rest, " that ").or_else(|| split_ci(rest, " which ")) {
                None => Expr::bool(true),
                Some((_, clause)) => {
                    let (rhs, negate, op) = [
                        ("does not contain ", true, CompareOp::Contains),
                        ("contains ", false, CompareOp::Contains),
                        ("does not start with ", true, CompareOp::StartsWith),
                        ("starts with ", false, CompareOp::StartsWith),
                        ("does not equal ", true, CompareOp::Equals),
                        ("equals ", false, CompareOp::Equals),
                        ("is not ", true, CompareOp::Equals),
                        ("is ", false, CompareOp::Equals),
                    ]
                    .iter()
                    .find_map(|(p, n, op)| strip_verb(clause.trim(), &[p.trim_end()]).map(|r| (r, *n, *op)))
                    .ok_or_else(unrecognized)?;
                    let lit = quoted(rhs).ok_or_else(unrecognized)?;
                    let e = Expr::compare(op, elem, Expr::str(lit));
                    if negate {
                        Expr::not(e)
                    } else {
                        e
                    }
                }
            };
            let var = Self::fresh(&self.picks, "item");
            self.picks.push(var.clone());
            return Ok(Stmt::LetPick {
                var,
                source,
                elem: "e".into(),
                predicate,
                span: Span::default(),
            });
        }
        Err(unrecognized())
    }

    fn branch(&mut self, rest: &str) -> Result<Stmt, SynthesisError> {
        let unrecognized = || SynthesisError::UnrecognizedStep(format!("if {rest}"));
        let (cond, body) = split_ci(rest, ", then ")
            .or_else(|| split_ci(rest, " then "))
            .or_else(|| split_ci(rest, ", "))
            .ok_or_else(unrecognized)?;
        let (then_text, else_text) = match split_ci(body, ", otherwise ")
            .or_else(|| split_ci(body, " otherwise "))
            .or_else(|| split_ci(body, ", else "))
            .or_else(|| split_ci(body, " else "))
        {
            Some((t, e)) => (t, Some(e)),
            None => (body, None),
        };
        let cond = self.condition(cond)?;
        // Bindings made inside a branch are not visible afterwards.
        let (lists, picks) = (self.lists.len(), self.picks.len());
        let then_stmt = self.step(&clean(then_text))?;
        self.lists.truncate(lists);
        self.picks.truncate(picks);
        let else_branch = match else_text {
            Some(e) => {
                let s = self.step(&clean(e))?;
                self.lists.truncate(lists);
                self.picks.truncate(picks);
                Some(vec![s])
            }
            None => None,
        };
        Ok(Stmt::If {
            cond,
            then_branch: vec![then_stmt],
            else_branch,
            span: Span::default(),
        })
    }
}
