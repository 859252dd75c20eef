//! Scripted app models and a property interpreter over them.
//!
//! A model is a set of screens holding widgets plus transitions keyed by
//! (screen, widget attributes, action). Running a property evaluates the
//! precondition on the initial screen, performs the interaction, then checks
//! the assertions on the final screen.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propdsl::*;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("app model schema: {0}")]
    SchemaError(String),
    #[error("app model reference: {0}")]
    DanglingReference(String),
    #[error("reading app model: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimWidget {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub resource_id: Option<String>,
    #[serde(default)]
    pub content_description: Option<String>,
    pub class: String,
    #[serde(default)]
    pub clickable: bool,
    /// When set, the displayed text is this state variable.
    #[serde(default)]
    pub text_var: Option<String>,
}

/// Effect of a transition, applied in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Goto(String),
    /// `value` may contain `{text}` (the acted widget's text) and
    /// `{var:NAME}` (a state variable).
    Set {
        var: String,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub screen: String,
    /// Attribute values the acted widget must have; absent for `press_back`.
    #[serde(default)]
    pub widget: Option<BTreeMap<String, String>>,
    pub action: String,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppModel {
    pub initial: String,
    #[serde(default)]
    pub state: BTreeMap<String, String>,
    pub screens: BTreeMap<String, Vec<SimWidget>>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

fn widget_field<'a>(w: &'a SimWidget, field: Field, text: Option<&'a str>) -> Option<&'a str> {
    match field {
        Field::Text => text,
        Field::Id => w.resource_id.as_deref(),
        Field::Desc => w.content_description.as_deref(),
        Field::Class => Some(w.class.as_str()),
    }
}

impl AppModel {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: AppModel = serde_json::from_str(text).map_err(|e| ModelError::SchemaError(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.screens.is_empty() {
            return Err(ModelError::SchemaError("no screens".into()));
        }
        if !self.screens.contains_key(&self.initial) {
            return Err(ModelError::DanglingReference(format!(
                "initial screen `{}`",
                self.initial
            )));
        }
        for (id, widgets) in &self.screens {
            for w in widgets {
                if w.class.is_empty() {
                    return Err(ModelError::SchemaError(format!("widget without class on `{id}`")));
                }
                if let Some(v) = &w.text_var {
                    if !self.state.contains_key(v) {
                        return Err(ModelError::DanglingReference(format!("text_var `{v}` on `{id}`")));
                    }
                }
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let kind = ActionKind::parse(&t.action)
                .ok_or_else(|| ModelError::SchemaError(format!("transition {i}: unknown action `{}`", t.action)))?;
            let widgets = self
                .screens
                .get(&t.screen)
                .ok_or_else(|| ModelError::DanglingReference(format!("transition {i}: screen `{}`", t.screen)))?;
            match (&t.widget, kind.takes_target()) {
                (Some(key), true) => {
                    let sel = key_selector(key)
                        .map_err(|f| ModelError::SchemaError(format!("transition {i}: unknown field `{f}`")))?;
                    let vars = &self.state;
                    if !widgets
                        .iter()
                        .any(|w| sel.matches(|f| widget_field(w, f, static_text(w, vars))))
                    {
                        return Err(ModelError::DanglingReference(format!(
                            "transition {i}: no widget {} on `{}`",
                            print_selector(&sel),
                            t.screen
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(ModelError::SchemaError(format!(
                        "transition {i}: widget key does not fit action `{}`",
                        t.action
                    )))
                }
            }
            for e in &t.effects {
                match e {
                    Effect::Goto(s) if !self.screens.contains_key(s) => {
                        return Err(ModelError::DanglingReference(format!("transition {i}: goto `{s}`")))
                    }
                    Effect::Set { var, .. } if !self.state.contains_key(var) => {
                        return Err(ModelError::DanglingReference(format!(
                            "transition {i}: state var `{var}`"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Widgets on `screen` matching `sel`, in document order, with the
    /// initial state supplying dynamic texts.
    pub fn evaluate_selector(&self, screen: &str, sel: &Selector) -> Vec<&SimWidget> {
        self.screens
            .get(screen)
            .map(|ws| {
                ws.iter()
                    .filter(|w| sel.matches(|f| widget_field(w, f, static_text(w, &self.state))))
                    .collect()
            })
            .unwrap_or_default()
    }
    /// A uiautomator-style dump of `screen` in its initial state, one row
    /// per widget, for seeding capture directories from a model.
    pub fn screen_hierarchy_xml(&self, screen: &str, package: &str) -> Option<String> {
        self.hierarchy_xml(screen, package, &self.state)
    }

    /// Like [`AppModel::screen_hierarchy_xml`], with `vars` supplying
    /// dynamic texts.
    pub fn hierarchy_xml(&self, screen: &str, package: &str, vars: &BTreeMap<String, String>) -> Option<String> {
        let widgets = self.screens.get(screen)?;
        let esc = |s: &str| {
            s.replace('&', "&amp;")
                .replace('<', "&lt;")
                .replace('>', "&gt;")
                .replace('"', "&quot;")
        };
        let height = 200 + 120 * widgets.len() as u32;
        let mut out = format!(
            "<?xml version='1.0' encoding='UTF-8' standalone='yes' ?>\n<hierarchy rotation=\"0\">\n  <node index=\"0\" text=\"\" resource-id=\"\" class=\"android.widget.FrameLayout\" package=\"{}\" content-desc=\"\" clickable=\"false\" bounds=\"[0,0][1080,{height}]\">\n",
            esc(package)
        );
        for (i, w) in widgets.iter().enumerate() {
            let top = 100 + 120 * i as u32;
            out.push_str(&format!(
                "    <node index=\"{i}\" text=\"{}\" resource-id=\"{}\" class=\"{}\" package=\"{}\" content-desc=\"{}\" clickable=\"{}\" bounds=\"[0,{top}][1080,{}]\" />\n",
                esc(static_text(w, vars).unwrap_or("")),
                esc(w.resource_id.as_deref().unwrap_or("")),
                esc(&w.class),
                esc(package),
                esc(w.content_description.as_deref().unwrap_or("")),
                w.clickable,
                top + 100
            ));
        }
        out.push_str("  </node>\n</hierarchy>\n");
        Some(out)
    }

    /// Breadth-first walk over modelled transitions and back navigation
    /// from the initial state. Returns each distinct rendered screen once,
    /// in discovery order; stops after `max_states` explored states.
    pub fn explore(&self, max_states: usize) -> Vec<ScreenState> {
        type Node = (String, BTreeMap<String, String>, Vec<String>);
        let start: Node = (self.initial.clone(), self.state.clone(), Vec::new());
        let mut seen = BTreeSet::from([start.clone()]);
        let mut queue = VecDeque::from([start]);
        let mut rendered = BTreeSet::new();
        let mut out = Vec::new();
        while let Some((screen, vars, history)) = queue.pop_front() {
            let widgets = &self.screens[&screen];
            let texts: Vec<Option<&str>> = widgets.iter().map(|w| static_text(w, &vars)).collect();
            if rendered.insert((screen.clone(), format!("{texts:?}"))) {
                out.push(ScreenState {
                    screen: screen.clone(),
                    vars: vars.clone(),
                });
            }
            let mut next: Vec<Node> = Vec::new();
            for t in self.transitions.iter().filter(|t| t.screen == screen) {
                let acted: Vec<Option<&str>> = match &t.widget {
                    None => vec![None],
                    Some(key) => {
                        let Ok(sel) = key_selector(key) else { continue };
                        widgets
                            .iter()
                            .filter(|w| sel.matches(|f| widget_field(w, f, static_text(w, &vars))))
                            .map(|w| Some(static_text(w, &vars).unwrap_or("")))
                            .collect()
                    }
                };
                for text in acted {
                    let (mut s, mut v, mut h) = (screen.clone(), vars.clone(), history.clone());
                    for e in &t.effects {
                        match e {
                            Effect::Goto(g) => {
                                h.push(std::mem::replace(&mut s, g.clone()));
                            }
                            Effect::Set { var, value } => {
                                let mut val = value.replace("{text}", text.unwrap_or(""));
                                for (k, x) in &vars {
                                    val = val.replace(&format!("{{var:{k}}}"), x);
                                }
                                v.insert(var.clone(), val);
                            }
                        }
                    }
                    next.push((s, v, h));
                }
            }
            let explicit_back = self
                .transitions
                .iter()
                .any(|t| t.screen == screen && t.action == ActionKind::PressBack.keyword());
            if !explicit_back {
                if let Some((prev, rest)) = history.split_last() {
                    next.push((prev.clone(), vars.clone(), rest.to_vec()));
                }
            }
            for n in next {
                if seen.len() >= max_states {
                    break;
                }
                if seen.insert(n.clone()) {
                    queue.push_back(n);
                }
            }
        }
        out
    }
}

/// A screen together with the state variables it is rendered with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScreenState {
    pub screen: String,
    pub vars: BTreeMap<String, String>,
}

fn static_text<'a>(w: &'a SimWidget, vars: &'a BTreeMap<String, String>) -> Option<&'a str> {
    match &w.text_var {
        Some(v) => vars.get(v).map(String::as_str),
        None => w.text.as_deref(),
    }
}

fn key_selector(key: &BTreeMap<String, String>) -> Result<Selector, String> {
    key.iter()
        .map(|(f, v)| {
            Field::parse(f)
                .map(|field| Clause::exact(field, v.clone()))
                .ok_or_else(|| f.clone())
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Selector::new)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum Verdict {
    Passed,
    Violated,
    PreconditionUnsatisfied,
    ExecutionError(String),
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Passed => "passed",
            Verdict::Violated => "violated",
            Verdict::PreconditionUnsatisfied => "precondition_unsatisfied",
            Verdict::ExecutionError(_) => "execution_error",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::ExecutionError(m) => write!(f, "execution_error: {m}"),
            other => f.write_str(other.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub action: ActionKind,
    /// Printed attributes of the acted widget; absent for targetless actions.
    pub widget: Option<String>,
    pub screen_before: String,
    pub screen_after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
    pub assertion_results: Vec<(String, bool)>,
    /// Virtual time spent in `wait`, in ms.
    pub clock_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WidgetRef {
    screen_idx: usize,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Binding {
    List(Vec<(WidgetRef, Option<String>)>),
    One(WidgetRef, Option<String>),
}

struct Run<'m> {
    model: &'m AppModel,
    screen_ids: Vec<&'m String>,
    screen: usize,
    history: Vec<usize>,
    vars: BTreeMap<String, String>,
    overrides: HashMap<(usize, usize), String>,
    scopes: Vec<HashMap<String, Binding>>,
    trace: RunTrace,
}

type Eval<T> = Result<T, String>;

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Str(String),
    Bool(bool),
}

/// Runs `ast` on a fresh instance of `model`.
pub fn execute_property(model: &AppModel, ast: &PropertyAst) -> (Verdict, RunTrace) {
    let screen_ids: Vec<&String> = model.screens.keys().collect();
    let screen = screen_ids
        .iter()
        .position(|s| **s == model.initial)
        .expect("checked at load");
    let mut run = Run {
        model,
        screen_ids,
        screen,
        history: Vec::new(),
        vars: model.state.clone(),
        overrides: HashMap::new(),
        scopes: vec![HashMap::new()],
        trace: RunTrace::default(),
    };
    match run.bool(&ast.precondition) {
        Ok(true) => {}
        Ok(false) | Err(_) => return (Verdict::PreconditionUnsatisfied, run.trace),
    }
    if let Err(e) = run.block(&ast.interaction, false) {
        return (Verdict::ExecutionError(e), run.trace);
    }
    let mut all_true = true;
    for a in &ast.postcondition {
        let ok = run.bool(&a.expr).unwrap_or(false);
        all_true &= ok;
        run.trace.assertion_results.push((print_expr(&a.expr), ok));
    }
    let verdict = if all_true { Verdict::Passed } else { Verdict::Violated };
    (verdict, run.trace)
}

impl Run<'_> {
    fn widgets(&self, screen: usize) -> &[SimWidget] {
        &self.model.screens[self.screen_ids[screen]]
    }

    fn text(&self, r: WidgetRef) -> Option<&str> {
        let w = &self.widgets(r.screen_idx)[r.idx];
        if let Some(v) = &w.text_var {
            return self.vars.get(v).map(String::as_str);
        }
        self.overrides
            .get(&(r.screen_idx, r.idx))
            .map(String::as_str)
            .or(w.text.as_deref())
    }

    fn field(&self, r: WidgetRef, field: Field) -> Option<&str> {
        let w = &self.widgets(r.screen_idx)[r.idx];
        widget_field(w, field, self.text(r))
    }

    fn select(&self, sel: &Selector) -> Vec<WidgetRef> {
        (0..self.widgets(self.screen).len())
            .map(|idx| WidgetRef {
                screen_idx: self.screen,
                idx,
            })
            .filter(|r| sel.matches(|f| self.field(*r, f)))
            .collect()
    }

    fn describe(&self, r: WidgetRef) -> String {
        let clauses = Field::ALL
            .iter()
            .filter_map(|f| self.field(r, *f).map(|v| Clause::exact(*f, v)))
            .collect();
        print_selector(&Selector::new(clauses))
    }

    fn lookup(&self, name: &str) -> Eval<&Binding> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name))
            .ok_or_else(|| format!("unbound variable `{name}`"))
    }

    fn bind(&mut self, name: &str, b: Binding) {
        self.scopes
            .last_mut()
            .expect("scope stack is never empty")
            .insert(name.to_string(), b);
    }

    /// The widget a bound variable refers to, with its text at binding time.
    fn widget_var(&self, name: &str) -> Eval<(WidgetRef, Option<String>)> {
        match self.lookup(name)? {
            Binding::One(r, snap) => Ok((*r, snap.clone())),
            Binding::List(_) => Err(format!("`{name}` is a list")),
        }
    }

    fn resolve(&self, t: &Target) -> Eval<WidgetRef> {
        match t {
            Target::Selector(sel) => self
                .select(sel)
                .first()
                .copied()
                .ok_or_else(|| format!("no widget matches {}", print_selector(sel))),
            Target::Var { name, .. } => {
                let (r, _) = self.widget_var(name)?;
                if r.screen_idx != self.screen {
                    return Err(format!(
                        "`{name}` belongs to screen `{}`, current screen is `{}`",
                        self.screen_ids[r.screen_idx], self.screen_ids[self.screen]
                    ));
                }
                Ok(r)
            }
        }
    }

    fn string(&self, e: &Expr) -> Eval<String> {
        match self.eval(e)? {
            Val::Str(s) => Ok(s),
            Val::Bool(_) => Err(format!("expected a string: {}", print_expr(e))),
        }
    }

    fn bool(&self, e: &Expr) -> Eval<bool> {
        match self.eval(e)? {
            Val::Bool(b) => Ok(b),
            Val::Str(_) => Err(format!("expected a bool: {}", print_expr(e))),
        }
    }

    fn eval(&self, e: &Expr) -> Eval<Val> {
        Ok(match e {
            Expr::Str { value, .. } => Val::Str(value.clone()),
            Expr::Int { value, .. } => Val::Str(value.to_string()),
            Expr::Bool { value, .. } => Val::Bool(*value),
            Expr::Var { name, .. } => {
                let (r, snap) = self.widget_var(name)?;
                // Live text while the widget is on screen, else the snapshot.
                let text = if r.screen_idx == self.screen {
                    self.text(r).map(str::to_string)
                } else {
                    snap
                };
                Val::Str(text.unwrap_or_default())
            }
            Expr::Attr { target, field, .. } => {
                let r = match target {
                    Target::Var { name, .. } => {
                        let (r, snap) = self.widget_var(name)?;
                        if r.screen_idx != self.screen && *field == Field::Text {
                            return Ok(Val::Str(snap.unwrap_or_default()));
                        }
                        r
                    }
                    t => self.resolve(t)?,
                };
                Val::Str(self.field(r, *field).unwrap_or_default().to_string())
            }
            Expr::Exists { selector, .. } => Val::Bool(!self.select(selector).is_empty()),
            Expr::Compare { op, lhs, rhs, .. } => Val::Bool(op.apply(&self.string(lhs)?, &self.string(rhs)?)),
            Expr::Not { operand, .. } => Val::Bool(!self.bool(operand)?),
            Expr::And { lhs, rhs, .. } => Val::Bool(self.bool(lhs)? && self.bool(rhs)?),
            Expr::Or { lhs, rhs, .. } => Val::Bool(self.bool(lhs)? || self.bool(rhs)?),
        })
    }

    fn block(&mut self, stmts: &[Stmt], scoped: bool) -> Eval<()> {
        if scoped {
            self.scopes.push(HashMap::new());
        }
        let result = stmts.iter().try_for_each(|s| self.stmt(s));
        if scoped {
            self.scopes.pop();
        }
        result
    }

    fn stmt(&mut self, s: &Stmt) -> Eval<()> {
        match s {
            Stmt::LetAll { var, selector, .. } => {
                let items = self
                    .select(selector)
                    .into_iter()
                    .map(|r| (r, self.text(r).map(str::to_string)))
                    .collect();
                self.bind(var, Binding::List(items));
            }
            Stmt::LetPick {
                var,
                source,
                elem,
                predicate,
                ..
            } => {
                let Binding::List(items) = self.lookup(source)?.clone() else {
                    return Err(format!("`{source}` is not a list"));
                };
                let mut chosen = None;
                for (r, snap) in items {
                    self.scopes
                        .push(HashMap::from([(elem.clone(), Binding::One(r, snap.clone()))]));
                    let ok = self.bool(predicate);
                    self.scopes.pop();
                    if ok? {
                        chosen = Some((r, snap));
                        break;
                    }
                }
                let (r, snap) =
                    chosen.ok_or_else(|| format!("no element of `{source}` satisfies the pick predicate"))?;
                self.bind(var, Binding::One(r, snap));
            }
            Stmt::Do(a) => self.action(a)?,
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                if self.bool(cond)? {
                    self.block(then_branch, true)?;
                } else if let Some(e) = else_branch {
                    self.block(e, true)?;
                }
            }
        }
        Ok(())
    }

    fn action(&mut self, a: &Action) -> Eval<()> {
        let before = self.screen;
        let target = a.target.as_ref().map(|t| self.resolve(t)).transpose()?;
        let described = target.map(|r| self.describe(r));
        let acted_text = target
            .and_then(|r| self.text(r).map(str::to_string))
            .unwrap_or_default();

        match (a.kind, &a.argument) {
            (ActionKind::Wait, Some(ActionArg::Millis(ms))) => self.trace.clock_ms += ms,
            (ActionKind::SetText, Some(ActionArg::Text(s))) => {
                let r = target.ok_or("set_text needs a target")?;
                match self.widgets(r.screen_idx)[r.idx].text_var.clone() {
                    Some(v) => {
                        self.vars.insert(v, s.clone());
                    }
                    None => {
                        self.overrides.insert((r.screen_idx, r.idx), s.clone());
                    }
                }
            }
            _ => {}
        }

        let transition = self.model.transitions.iter().find(|t| {
            *t.screen == *self.screen_ids[self.screen]
                && ActionKind::parse(&t.action) == Some(a.kind)
                && match (&t.widget, target) {
                    (None, None) => true,
                    (Some(key), Some(r)) => key_selector(key).is_ok_and(|sel| sel.matches(|f| self.field(r, f))),
                    _ => false,
                }
        });
        match transition {
            Some(t) => {
                for effect in &t.effects {
                    match effect {
                        Effect::Goto(s) => {
                            self.history.push(self.screen);
                            self.screen = self.screen_ids.iter().position(|id| *id == s).expect("checked at load");
                        }
                        Effect::Set { var, value } => {
                            let v = self.substitute(value, &acted_text);
                            self.vars.insert(var.clone(), v);
                        }
                    }
                }
            }
            None if a.kind == ActionKind::PressBack => {
                if let Some(prev) = self.history.pop() {
                    self.screen = prev;
                }
            }
            None => {}
        }
        self.trace.events.push(TraceEvent {
            action: a.kind,
            widget: described,
            screen_before: self.screen_ids[before].clone(),
            screen_after: self.screen_ids[self.screen].clone(),
        });
        Ok(())
    }

    fn substitute(&self, template: &str, acted_text: &str) -> String {
        let mut out = template.replace("{text}", acted_text);
        for (k, v) in &self.vars {
            out = out.replace(&format!("{{var:{k}}}"), v);
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::propdsl::parser::tests::OPEN_DIR;

    /// File browser: clicking a directory row opens it and extends the path.
    pub(crate) const AMAZE: &str = r#"{
      "initial": "file_list",
      "state": {"path": "/storage/emulated/0"},
      "screens": {
        "file_list": [
          {"resource_id": "path", "class": "android.widget.TextView", "text_var": "path"},
          {"content_description": "Search", "resource_id": "search", "class": "android.widget.ImageButton", "clickable": true},
          {"text": "Download", "resource_id": "file_name", "class": "android.widget.TextView", "clickable": true},
          {"text": "notes.txt", "resource_id": "file_name", "class": "android.widget.TextView", "clickable": true}
        ],
        "dir_view": [
          {"resource_id": "path", "class": "android.widget.TextView", "text_var": "path"},
          {"content_description": "Search", "resource_id": "search", "class": "android.widget.ImageButton", "clickable": true}
        ]
      },
      "transitions": [
        {"screen": "file_list", "widget": {"text": "Download"}, "action": "click",
         "effects": [{"goto": "dir_view"}, {"set": {"var": "path", "value": "{var:path}/{text}"}}]}
      ]
    }"#;

    /// Same app where clicking the directory opens a file dialog instead.
    pub(crate) const AMAZE_BUGGY: &str = r#"{
      "initial": "file_list",
      "state": {"path": "/storage/emulated/0"},
      "screens": {
        "file_list": [
          {"resource_id": "path", "class": "android.widget.TextView", "text_var": "path"},
          {"content_description": "Search", "resource_id": "search", "class": "android.widget.ImageButton", "clickable": true},
          {"text": "Download", "resource_id": "file_name", "class": "android.widget.TextView", "clickable": true},
          {"text": "notes.txt", "resource_id": "file_name", "class": "android.widget.TextView", "clickable": true}
        ],
        "open_dialog": [
          {"resource_id": "path", "class": "android.widget.TextView", "text_var": "path"},
          {"text": "Open as", "class": "android.widget.TextView"}
        ]
      },
      "transitions": [
        {"screen": "file_list", "widget": {"text": "Download"}, "action": "click", "effects": [{"goto": "open_dialog"}]}
      ]
    }"#;

    #[test]
    fn exported_hierarchy_parses() {
        let m = AppModel::from_json(AMAZE).unwrap();
        let xml = m.screen_hierarchy_xml("file_list", "com.amaze").unwrap();
        let ws = crate::capture::parse_view_hierarchy(&xml).unwrap();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[0].text.as_deref(), Some("/storage/emulated/0"));
        assert_eq!(ws[1].content_description.as_deref(), Some("Search"));
        assert!(ws[2].clickable && !ws[0].clickable);
        assert!(m.screen_hierarchy_xml("missing", "x").is_none());
    }

    #[test]
    fn explore_reaches_dynamic_states() {
        let m = AppModel::from_json(AMAZE).unwrap();
        let states = m.explore(64);
        assert_eq!(states[0].screen, "file_list");
        let opened = states.iter().find(|s| s.screen == "dir_view").unwrap();
        assert_eq!(opened.vars["path"], "/storage/emulated/0/Download");
        // Back from the directory shows the list with the extended path.
        assert!(states
            .iter()
            .any(|s| s.screen == "file_list" && s.vars["path"].ends_with("/Download")));
        assert!(m.explore(3).len() <= 3);
        let xml = m.hierarchy_xml("dir_view", "com.amaze", &opened.vars).unwrap();
        assert!(xml.contains("/storage/emulated/0/Download"));
    }

    #[test]
    fn loads_and_selects() {
        let m = AppModel::from_json(AMAZE).unwrap();
        assert_eq!(m.screens.keys().collect::<Vec<_>>(), ["dir_view", "file_list"]);
        let hit = m.evaluate_selector("file_list", &Selector::single(Field::Text, "Download"));
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].text.as_deref(), Some("Download"));
        let contains = Selector::new(vec![Clause {
            field: Field::Text,
            mode: MatchMode::Contains,
            value: "Down".into(),
        }]);
        assert_eq!(m.evaluate_selector("file_list", &contains), hit);
        assert!(m
            .evaluate_selector("file_list", &Selector::single(Field::Text, "Upload"))
            .is_empty());
    }

    #[test]
    fn load_errors() {
        let dangling = AMAZE.replace(r#"{"goto": "dir_view"}"#, r#"{"goto": "nowhere"}"#);
        assert!(matches!(
            AppModel::from_json(&dangling),
            Err(ModelError::DanglingReference(_))
        ));
        let bad_widget = AMAZE.replace(r#""widget": {"text": "Download"}"#, r#""widget": {"text": "Upload"}"#);
        assert!(matches!(
            AppModel::from_json(&bad_widget),
            Err(ModelError::DanglingReference(_))
        ));
        assert!(matches!(
            AppModel::from_json(r#"{"initial": "a", "screens": {}}"#),
            Err(ModelError::SchemaError(_))
        ));
        assert!(matches!(AppModel::from_json("{"), Err(ModelError::SchemaError(_))));
    }

    #[test]
    fn amaze_bug_reproduction() {
        let ast = parse_property(OPEN_DIR).unwrap();
        let good = AppModel::from_json(AMAZE).unwrap();
        let (v, trace) = execute_property(&good, &ast);
        assert_eq!(v, Verdict::Passed, "{trace:?}");
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].action, ActionKind::Click);
        assert_eq!(
            (
                trace.events[0].screen_before.as_str(),
                trace.events[0].screen_after.as_str()
            ),
            ("file_list", "dir_view")
        );

        let buggy = AppModel::from_json(AMAZE_BUGGY).unwrap();
        let (v, trace) = execute_property(&buggy, &ast);
        assert_eq!(v, Verdict::Violated);
        assert_eq!(trace.assertion_results.len(), 1);
        assert!(!trace.assertion_results[0].1);
        // Executing never mutates the model.
        assert_eq!(buggy, AppModel::from_json(AMAZE_BUGGY).unwrap());
    }

    #[test]
    fn precondition_and_errors() {
        let m = AppModel::from_json(AMAZE).unwrap();
        let absent =
            parse_property(r#"property p { pre { exists(widget(text="Upload")) } run { press_back(); } post { } }"#)
                .unwrap();
        assert_eq!(execute_property(&m, &absent).0, Verdict::PreconditionUnsatisfied);
        let missing =
            parse_property(r#"property p { pre { true } run { click(widget(text="Upload")); } post { } }"#).unwrap();
        assert!(matches!(execute_property(&m, &missing).0, Verdict::ExecutionError(_)));
        // Stale variable after navigation.
        let stale = parse_property(
            r#"property p { pre { true } run {
                 let xs = all(widget(id="file_name"));
                 let x = pick(xs, e => true);
                 click(x);
                 click(x);
               } post { } }"#,
        )
        .unwrap();
        let (v, trace) = execute_property(&m, &stale);
        assert!(matches!(v, Verdict::ExecutionError(_)));
        assert_eq!(trace.events.len(), 1);
    }

    #[test]
    fn no_op_back_wait_and_set_text() {
        let m = AppModel::from_json(AMAZE).unwrap();
        let ast = parse_property(
            r#"property p { pre { true } run {
                 click(widget(text="notes.txt"));
                 click(widget(text="Download"));
                 press_back();
                 wait(250);
                 set_text(widget(text="notes.txt"), "a.md");
               } post {
                 assert exists(widget(text="a.md"));
                 assert equals(attr(widget(id="path"), "text"), "/storage/emulated/0/Download");
               } }"#,
        )
        .unwrap();
        let (v, trace) = execute_property(&m, &ast);
        assert_eq!(v, Verdict::Passed, "{trace:?}");
        assert_eq!(trace.events.len(), 5);
        assert_eq!(trace.events[0].screen_after, "file_list");
        assert_eq!(trace.events[2].screen_after, "file_list");
        assert_eq!(trace.clock_ms, 250);
    }

    #[test]
    fn branches_count_taken_path_only() {
        let m = AppModel::from_json(AMAZE).unwrap();
        let ast = parse_property(
            r#"property p { pre { true } run {
                 if exists(widget(text="Download")) { click(widget(text="Download")); wait(1); } else { press_back(); }
               } post { assert exists(widget(id="path")); } }"#,
        )
        .unwrap();
        let (v, trace) = execute_property(&m, &ast);
        assert_eq!(v, Verdict::Passed);
        assert_eq!(trace.events.len(), 2);
    }
}
