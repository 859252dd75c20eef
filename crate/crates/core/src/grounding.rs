//! Widget annotation, the enriched context store, and phrase-to-widget
//! matching.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capture::{
    crop_widget_image, highlight_widget, Bounds, CaptureError, PageCapture, RasterImage, WidgetAttributes,
};
use crate::prompt::{Attachment, Message, PromptBundle, Role};
use crate::propdsl::{Field, Selector};
use crate::provider::{ChatProvider, ProviderError};

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const MAX_LABEL_WORDS: usize = 8;
/// Stroke width of the red box drawn on annotation screenshots.
pub const HIGHLIGHT_STROKE: u32 = 4;

const W_LABEL: f64 = 0.30;
const W_TEXT: f64 = 0.25;
const W_FUNCTIONALITY: f64 = 0.20;
const W_RESOURCE_ID: f64 = 0.15;
const W_DESC: f64 = 0.10;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("expected exactly 2 demonstrations, got {0}")]
    MissingDemos(usize),
    #[error("annotation response is malformed: {0}")]
    MalformedAnnotation(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("empty match query")]
    EmptyQuery,
    #[error("captures span several apps: `{expected}` and `{found}`")]
    MixedApps { expected: String, found: String },
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("context store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetAnnotation {
    pub semantic_label: String,
    pub functionality: String,
}

impl WidgetAnnotation {
    /// Trims both fields and checks them against the annotation contract.
    fn checked(semantic_label: &str, functionality: &str) -> Result<Self, String> {
        let semantic_label = semantic_label.trim();
        let functionality = functionality.trim();
        if semantic_label.is_empty() || functionality.is_empty() {
            return Err("semantic_label and functionality must be non-empty".into());
        }
        let words = semantic_label.split_whitespace().count();
        if words > MAX_LABEL_WORDS {
            return Err(format!(
                "semantic_label has {words} words, at most {MAX_LABEL_WORDS} allowed"
            ));
        }
        Ok(Self {
            semantic_label: semantic_label.to_string(),
            functionality: functionality.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichedWidget {
    pub widget_uid: String,
    pub attributes: WidgetAttributes,
    pub annotation: Option<WidgetAnnotation>,
    pub source_capture: String,
}

impl EnrichedWidget {
    pub fn new(capture_id: &str, attributes: WidgetAttributes) -> Self {
        let digest = Sha256::digest(format!("{capture_id}:{}", attributes.node_index).as_bytes());
        Self {
            widget_uid: hex::encode(&digest[..8]),
            attributes,
            annotation: None,
            source_capture: capture_id.to_string(),
        }
    }

    pub fn get(&self, field: Field) -> Option<&str> {
        let a = &self.attributes;
        match field {
            Field::Text => a.text.as_deref(),
            Field::Id => a.resource_id.as_deref(),
            Field::Desc => a.content_description.as_deref(),
            Field::Class => Some(a.class_name.as_str()),
        }
    }
}

type DedupKey = (Option<String>, Option<String>, Option<String>, String);

fn dedup_key(a: &WidgetAttributes) -> DedupKey {
    (
        a.resource_id.clone(),
        a.text.clone(),
        a.content_description.clone(),
        a.class_name.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WidgetContextStore {
    pub app_name: String,
    pub widgets: Vec<EnrichedWidget>,
    pub dedup_index: BTreeMap<DedupKey, String>,
}

/// One widget as persisted in `context.json`.
#[derive(Debug, Serialize, Deserialize)]
struct WidgetRecord {
    uid: String,
    text: Option<String>,
    resource_id: Option<String>,
    content_description: Option<String>,
    class: String,
    semantic_label: Option<String>,
    functionality: Option<String>,
    clickable: bool,
    bounds: Bounds,
    node_index: usize,
    source_capture: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreFile {
    app_name: String,
    widgets: Vec<WidgetRecord>,
}

impl WidgetContextStore {
    pub fn new(app_name: impl Into<String>) -> Self {
        Self {
            app_name: app_name.into(),
            ..Self::default()
        }
    }

    /// Adds a widget unless one with the same dedup key is already present.
    /// Returns whether it was inserted.
    pub fn insert(&mut self, widget: EnrichedWidget) -> bool {
        let key = dedup_key(&widget.attributes);
        if self.dedup_index.contains_key(&key) {
            return false;
        }
        self.dedup_index.insert(key, widget.widget_uid.clone());
        self.widgets.push(widget);
        true
    }

    pub fn get(&self, uid: &str) -> Option<&EnrichedWidget> {
        self.widgets.iter().find(|w| w.widget_uid == uid)
    }

    pub fn annotated_count(&self) -> usize {
        self.widgets.iter().filter(|w| w.annotation.is_some()).count()
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            app_name: self.app_name.clone(),
            widgets: self
                .widgets
                .iter()
                .map(|w| WidgetRecord {
                    uid: w.widget_uid.clone(),
                    text: w.attributes.text.clone(),
                    resource_id: w.attributes.resource_id.clone(),
                    content_description: w.attributes.content_description.clone(),
                    class: w.attributes.class_name.clone(),
                    semantic_label: w.annotation.as_ref().map(|a| a.semantic_label.clone()),
                    functionality: w.annotation.as_ref().map(|a| a.functionality.clone()),
                    clickable: w.attributes.clickable,
                    bounds: w.attributes.bounds,
                    node_index: w.attributes.node_index,
                    source_capture: w.source_capture.clone(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("store serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, GroundingError> {
        let file: StoreFile = serde_json::from_str(text).map_err(|e| GroundingError::Store(e.to_string()))?;
        let mut store = Self::new(file.app_name);
        for r in file.widgets {
            let annotation = match (r.semantic_label, r.functionality) {
                (Some(semantic_label), Some(functionality)) => Some(WidgetAnnotation {
                    semantic_label,
                    functionality,
                }),
                (None, None) => None,
                _ => {
                    return Err(GroundingError::Store(format!(
                        "widget {} has only one annotation field",
                        r.uid
                    )))
                }
            };
            let uid = r.uid.clone();
            let inserted = store.insert(EnrichedWidget {
                widget_uid: r.uid,
                attributes: WidgetAttributes {
                    text: r.text,
                    resource_id: r.resource_id,
                    content_description: r.content_description,
                    class_name: r.class,
                    clickable: r.clickable,
                    bounds: r.bounds,
                    node_index: r.node_index,
                },
                annotation,
                source_capture: r.source_capture,
            });
            if !inserted {
                return Err(GroundingError::Store(format!("duplicate widget {uid}")));
            }
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GroundingError::Store(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Produces a semantic label and functionality for one widget.
pub trait Annotator: Send + Sync {
    fn annotate(&self, page: &PageCapture, widget: &WidgetAttributes) -> Result<WidgetAnnotation, GroundingError>;
}

/// Offline annotator deriving labels from the raw attributes.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAnnotator;

impl Annotator for HeuristicAnnotator {
    fn annotate(&self, page: &PageCapture, widget: &WidgetAttributes) -> Result<WidgetAnnotation, GroundingError> {
        Ok(heuristic_annotate(page, widget))
    }
}

pub fn heuristic_annotate(_page: &PageCapture, widget: &WidgetAttributes) -> WidgetAnnotation {
    let label = widget
        .text
        .as_deref()
        .or(widget.content_description.as_deref())
        .map(str::to_string)
        .filter(|s| !s.trim().is_empty())
        .or_else(|| {
            widget
                .resource_id
                .as_deref()
                .map(humanize_resource_id)
                .filter(|s| !s.is_empty())
        })
        .unwrap_or_else(|| widget.class_suffix().to_string());
    let label = label
        .split_whitespace()
        .take(MAX_LABEL_WORDS)
        .collect::<Vec<_>>()
        .join(" ");
    let verb = if widget.clickable { "Triggers" } else { "Displays" };
    WidgetAnnotation {
        functionality: format!("{verb} {label}"),
        semantic_label: label,
    }
}

const ID_PREFIXES: [&str; 4] = ["btn", "tv", "iv", "id"];

/// `com.app:id/btn_submitForm` becomes `submit form`.
pub fn humanize_resource_id(resource_id: &str) -> String {
    let local = resource_id.rsplit('/').next().unwrap_or(resource_id);
    let words = split_words(local);
    let kept: Vec<&String> = words.iter().filter(|w| !ID_PREFIXES.contains(&w.as_str())).collect();
    if kept.is_empty() {
        words.join(" ")
    } else {
        kept.into_iter().map(String::as_str).collect::<Vec<_>>().join(" ")
    }
}

/// Lowercase words split on anything non-alphanumeric and on camelCase
/// boundaries.
fn split_words(s: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;
    for c in s.chars() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            prev = None;
            continue;
        }
        if c.is_uppercase() && prev.is_some_and(|p| p.is_lowercase() || p.is_ascii_digit()) && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.extend(c.to_lowercase());
        prev = Some(c);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

const STOPWORDS: &[&str] = &[
    "the", "a", "an", "to", "of", "and", "on", "in", "is", "it", "its", "that", "this", "with", "for", "all", "exist",
    "exists",
];

/// Matcher tokens: split words minus stopwords, with a trailing plural `s`
/// folded away.
pub fn tokenize(s: &str) -> BTreeSet<String> {
    split_words(s)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| {
            let plural =
                w.len() > 3 && w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is"));
            if plural {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .collect()
}

fn dice(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub widget_uid: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub query: String,
    pub candidates: Vec<Candidate>,
}

/// Weighted overlap between the query and one widget, in [0, 1].
pub fn match_score(query_tokens: &BTreeSet<String>, w: &EnrichedWidget) -> f64 {
    let field = |s: Option<&str>| s.map(tokenize).unwrap_or_default();
    let a = &w.attributes;
    let (label, func) = match &w.annotation {
        Some(ann) => (tokenize(&ann.semantic_label), tokenize(&ann.functionality)),
        None => Default::default(),
    };
    let id = field(a.resource_id.as_deref().map(humanize_resource_id).as_deref());
    W_LABEL * dice(query_tokens, &label)
        + W_TEXT * dice(query_tokens, &field(a.text.as_deref()))
        + W_FUNCTIONALITY * dice(query_tokens, &func)
        + W_RESOURCE_ID * dice(query_tokens, &id)
        + W_DESC * dice(query_tokens, &field(a.content_description.as_deref()))
}

pub fn match_widget(query: &str, store: &WidgetContextStore) -> Result<MatchResult, GroundingError> {
    if query.trim().is_empty() {
        return Err(GroundingError::EmptyQuery);
    }
    let q = tokenize(query);
    let mut scored: Vec<(f64, usize, usize)> = store
        .widgets
        .iter()
        .enumerate()
        .map(|(i, w)| (match_score(&q, w), w.attributes.node_index, i))
        .filter(|(s, _, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(MatchResult {
        query: query.to_string(),
        candidates: scored
            .into_iter()
            .map(|(score, _, i)| Candidate {
                widget_uid: store.widgets[i].widget_uid.clone(),
                score,
            })
            .collect(),
    })
}

/// Uids of every store widget the selector matches.
pub fn resolve_selector(sel: &Selector, store: &WidgetContextStore) -> BTreeSet<String> {
    store
        .widgets
        .iter()
        .filter(|w| sel.matches(|f| w.get(f)))
        .map(|w| w.widget_uid.clone())
        .collect()
}

/// True when both selectors resolve to the same non-empty widget set.
pub fn same_widget(a: &Selector, b: &Selector, store: &WidgetContextStore) -> bool {
    let ra = resolve_selector(a, store);
    !ra.is_empty() && ra == resolve_selector(b, store)
}

/// Builds the store: widgets are deduplicated across captures (first
/// occurrence wins), then annotated with at most `concurrency` calls in
/// flight.
pub fn build_context_store(
    captures: &[PageCapture],
    annotator: &dyn Annotator,
    concurrency: usize,
) -> Result<WidgetContextStore, GroundingError> {
    let Some(first) = captures.first() else {
        return Ok(WidgetContextStore::default());
    };
    let mut store = WidgetContextStore::new(first.app_name.clone());
    let mut pages = Vec::new();
    for (ci, page) in captures.iter().enumerate() {
        if page.app_name != store.app_name {
            return Err(GroundingError::MixedApps {
                expected: store.app_name.clone(),
                found: page.app_name.clone(),
            });
        }
        for w in &page.widgets {
            if store.insert(EnrichedWidget::new(&page.capture_id, w.clone())) {
                pages.push(ci);
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<WidgetAnnotation, GroundingError>>>> =
        Mutex::new((0..store.widgets.len()).map(|_| None).collect());
    let workers = concurrency.max(1).min(store.widgets.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= store.widgets.len() {
                    break;
                }
                let r = annotator.annotate(&captures[pages[i]], &store.widgets[i].attributes);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    for (w, r) in store.widgets.iter_mut().zip(results) {
        w.annotation = Some(r.expect("every widget visited")?);
    }
    Ok(store)
}

/// A worked example for the annotation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDemo {
    pub app_name: String,
    pub activity_name: String,
    pub attributes: DemoAttributes,
    pub output: WidgetAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoAttributes {
    pub text: Option<String>,
    pub resource_id: Option<String>,
    pub content_description: Option<String>,
    pub class: String,
}

pub fn bundled_annotation_demos() -> Vec<AnnotationDemo> {
    serde_json::from_str(include_str!("../assets/annotation_demos.json")).expect("bundled demos are valid")
}

/// Renders `{"k": "v", ...}` in the given key order; absent values become
/// the string "null".
pub(crate) fn render_attribute_object(pairs: &[(&str, Option<&str>)]) -> String {
    let body: Vec<String> = pairs
        .iter()
        .map(|(k, v)| format!("{}: {}", Value::from(*k), Value::from(v.unwrap_or("null"))))
        .collect();
    format!("{{{}}}", body.join(", "))
}

fn attribute_json(text: Option<&str>, id: Option<&str>, desc: Option<&str>, class: &str) -> String {
    render_attribute_object(&[
        ("text", text),
        ("resource_id", id),
        ("description", desc),
        ("class", Some(class)),
    ])
}

const ANNOTATION_ROLE: &str = "You are a professional mobile app UI semantic annotation assistant.";

const ANNOTATION_TASK: &str = "Please annotate the provided UI widget with the semantic label and functionality description based on the given context.
- The full page screenshot, where the target widget is highlighted with a red box.
- The cropped widget image and its attributes.
- The provided app name and foreground activity name.";

const ANNOTATION_CONSTRAINTS: &str = "Strict rules:
1. Respond with exactly one JSON object and nothing else.
2. The object has exactly two string keys: \"semantic_label\" and \"functionality\".
3. \"semantic_label\" is a short name for the widget of at most 8 words.
4. \"functionality\" is one sentence describing what the widget does for the user.
5. Base the answer only on the given context; do not invent widgets or screens.";

const ANNOTATION_REPAIR: &str = "Your previous reply did not follow the required format. Respond again with only a JSON object containing the string keys \"semantic_label\" and \"functionality\".";

fn input_block(app: &str, activity: &str, attributes: &str) -> String {
    format!("Page information:\nApp name: {app}\nActivity name: {activity}\nWidget information:\nAttributes: {attributes}\n")
}

/// Assembles the five-part annotation prompt. With a usable screenshot the
/// input message carries the highlighted page and the widget crop as PNG
/// attachments; otherwise it says so explicitly.
pub fn build_annotation_prompt(
    page: &PageCapture,
    widget: &WidgetAttributes,
    demos: &[AnnotationDemo],
    screenshot: Option<&RasterImage>,
) -> Result<PromptBundle, GroundingError> {
    if demos.len() != 2 {
        return Err(GroundingError::MissingDemos(demos.len()));
    }
    let mut p = PromptBundle::default();
    p.push_component(1, "Role Assignment", Message::new(Role::System, ANNOTATION_ROLE));
    p.push_component(2, "Task", Message::new(Role::User, ANNOTATION_TASK));

    let mut demo_text = String::from("Here are two examples of the expected annotation:\n");
    for (i, d) in demos.iter().enumerate() {
        let a = &d.attributes;
        let attrs = attribute_json(
            a.text.as_deref(),
            a.resource_id.as_deref(),
            a.content_description.as_deref(),
            &a.class,
        );
        let output = render_attribute_object(&[
            ("semantic_label", Some(&d.output.semantic_label)),
            ("functionality", Some(&d.output.functionality)),
        ]);
        demo_text.push_str(&format!(
            "\nExample {} input:\n{}Example {} output:\n{}\n",
            i + 1,
            input_block(&d.app_name, &d.activity_name, &attrs),
            i + 1,
            output
        ));
    }
    p.push_component(3, "Few-shot Demonstrations", Message::new(Role::User, demo_text));

    let attrs = attribute_json(
        widget.text.as_deref(),
        widget.resource_id.as_deref(),
        widget.content_description.as_deref(),
        &widget.class_name,
    );
    let mut input = Message::new(Role::User, input_block(&page.app_name, &page.activity_name, &attrs));
    let images = screenshot.and_then(|shot| {
        if widget.bounds.width() == 0 || widget.bounds.height() == 0 {
            return None;
        }
        let boxed = highlight_widget(shot, widget.bounds, HIGHLIGHT_STROKE).ok()?;
        let crop = crop_widget_image(shot, widget.bounds).ok()?;
        Some((boxed.encode_png().ok()?, crop.encode_png().ok()?))
    });
    match images {
        Some((boxed, crop)) => {
            input.text.push_str(&format!(
                "Bounds: {}\nImages: the first image is the full page screenshot with the target widget in a red box; the second image is the cropped widget.\n",
                widget.bounds
            ));
            input.attachments.push(Attachment::png("page_screenshot", boxed));
            input.attachments.push(Attachment::png("widget_crop", crop));
        }
        None => input
            .text
            .push_str("No screenshot available; use the page information and widget attributes only.\n"),
    }
    p.push_component(4, "Input", input);
    p.push_component(5, "Constraints", Message::new(Role::User, ANNOTATION_CONSTRAINTS));
    Ok(p)
}

/// First JSON object embedded in `text` that satisfies the annotation
/// contract, or the reason none did.
pub fn parse_annotation(text: &str) -> Result<WidgetAnnotation, String> {
    let mut reason = "no JSON object found".to_string();
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        match (
            obj.get("semantic_label").and_then(Value::as_str),
            obj.get("functionality").and_then(Value::as_str),
        ) {
            (Some(label), Some(func)) => match WidgetAnnotation::checked(label, func) {
                Ok(a) => return Ok(a),
                Err(e) => reason = e,
            },
            _ => reason = "object lacks string keys semantic_label and functionality".into(),
        }
    }
    Err(reason)
}

/// Sends the prompt; one repair round if the reply breaks the contract.
/// Returns the annotation and the number of repair rounds used.
pub fn annotate_widget(
    provider: &dyn ChatProvider,
    prompt: &PromptBundle,
) -> Result<(WidgetAnnotation, u32), GroundingError> {
    let reply = provider.complete(prompt)?;
    match parse_annotation(&reply) {
        Ok(a) => Ok((a, 0)),
        Err(_) => {
            let retry = prompt.with_followup(&reply, ANNOTATION_REPAIR);
            let second = provider.complete(&retry)?;
            parse_annotation(&second)
                .map(|a| (a, 1))
                .map_err(GroundingError::MalformedAnnotation)
        }
    }
}

/// Annotator backed by a multimodal chat model.
pub struct MllmAnnotator<'p> {
    provider: &'p dyn ChatProvider,
    demos: Vec<AnnotationDemo>,
    /// Directory screenshot paths are relative to.
    base: PathBuf,
    screenshots: Mutex<HashMap<PathBuf, Option<RasterImage>>>,
}

impl<'p> MllmAnnotator<'p> {
    pub fn new(provider: &'p dyn ChatProvider, demos: Vec<AnnotationDemo>, base: impl Into<PathBuf>) -> Self {
        Self {
            provider,
            demos,
            base: base.into(),
            screenshots: Mutex::new(HashMap::new()),
        }
    }

    /// Decoded screenshot of the page; unreadable images count as absent.
    fn screenshot(&self, page: &PageCapture) -> Option<RasterImage> {
        let rel = page.screenshot_path.as_ref()?;
        let path = self.base.join(rel);
        let mut cache = self.screenshots.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(path.clone())
            .or_insert_with(|| std::fs::read(&path).ok().and_then(|b| RasterImage::decode_png(&b).ok()))
            .clone()
    }
}

impl Annotator for MllmAnnotator<'_> {
    fn annotate(&self, page: &PageCapture, widget: &WidgetAttributes) -> Result<WidgetAnnotation, GroundingError> {
        let shot = self.screenshot(page);
        let prompt = build_annotation_prompt(page, widget, &self.demos, shot.as_ref())?;
        annotate_widget(self.provider, &prompt).map(|(a, _)| a)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::capture::build_page_capture;
    use crate::provider::MockProvider;

    pub(crate) fn widget(
        text: Option<&str>,
        id: Option<&str>,
        desc: Option<&str>,
        class: &str,
        clickable: bool,
        node_index: usize,
    ) -> WidgetAttributes {
        WidgetAttributes {
            text: text.map(str::to_string),
            resource_id: id.map(str::to_string),
            content_description: desc.map(str::to_string),
            class_name: class.to_string(),
            clickable,
            bounds: Bounds::new(0, node_index as u32 * 10, 100, node_index as u32 * 10 + 10).unwrap(),
            node_index,
        }
    }

    pub(crate) fn annotated_store(widgets: Vec<(WidgetAttributes, &str, &str)>) -> WidgetContextStore {
        let mut store = WidgetContextStore::new("Test");
        for (w, label, func) in widgets {
            let mut e = EnrichedWidget::new("cap", w);
            e.annotation = Some(WidgetAnnotation {
                semantic_label: label.into(),
                functionality: func.into(),
            });
            store.insert(e);
        }
        store
    }

    fn page(widgets: Vec<WidgetAttributes>) -> PageCapture {
        build_page_capture("AnkiDroid", "Previewer", None, widgets).unwrap()
    }

    #[test]
    fn heuristic_rules() {
        let p = page(vec![]);
        let login = widget(Some("Login"), None, None, "android.widget.Button", true, 0);
        assert_eq!(
            heuristic_annotate(&p, &login),
            WidgetAnnotation {
                semantic_label: "Login".into(),
                functionality: "Triggers Login".into()
            }
        );
        let submit = widget(None, Some("btn_submit"), None, "android.widget.Button", false, 1);
        assert_eq!(heuristic_annotate(&p, &submit).semantic_label, "submit");
        assert_eq!(heuristic_annotate(&p, &submit).functionality, "Displays submit");
        let bare = widget(None, None, None, "android.widget.TextView", false, 2);
        assert_eq!(heuristic_annotate(&p, &bare).semantic_label, "TextView");
    }

    #[test]
    fn humanize() {
        assert_eq!(humanize_resource_id("com.app:id/btn_submit"), "submit");
        assert_eq!(humanize_resource_id("tvNoteTitle"), "note title");
        assert_eq!(humanize_resource_id("btn"), "btn");
        assert_eq!(humanize_resource_id("searchIcon2"), "search icon2");
    }

    #[test]
    fn tokens() {
        let t: Vec<String> = tokenize("the fileNames of all_items, Class").into_iter().collect();
        assert_eq!(t, ["class", "file", "item", "name"]);
    }

    #[test]
    fn match_scores_by_hand() {
        let store = annotated_store(vec![
            (
                widget(None, Some("search"), None, "android.widget.ImageView", true, 0),
                "Search button",
                "Opens the search bar",
            ),
            (
                widget(
                    Some("Download"),
                    Some("line"),
                    None,
                    "android.widget.TextView",
                    false,
                    1,
                ),
                "File name text",
                "Display the name of the file",
            ),
        ]);
        let r = match_widget("search button", &store).unwrap();
        assert_eq!(r.candidates.len(), 1);
        // label {search, button} = query: dice 1; functionality {open, search, bar}: 2/5;
        // humanized id {search}: 2/3.
        let expected = 0.30 + 0.20 * (2.0 / 5.0) + 0.15 * (2.0 / 3.0);
        assert!((r.candidates[0].score - expected).abs() < 1e-12);
        assert!(match_widget("zebra", &store).unwrap().candidates.is_empty());
        assert!(matches!(match_widget("  ", &store), Err(GroundingError::EmptyQuery)));
    }

    #[test]
    fn ties_break_by_node_index() {
        let store = annotated_store(vec![
            (widget(Some("Open"), None, None, "B", true, 5), "x", "y"),
            (widget(Some("Open"), None, None, "A", true, 2), "x", "y"),
        ]);
        let r = match_widget("open", &store).unwrap();
        let order: Vec<usize> = r
            .candidates
            .iter()
            .map(|c| store.get(&c.widget_uid).unwrap().attributes.node_index)
            .collect();
        assert_eq!(order, [2, 5]);
        assert_eq!(r.candidates[0].score, r.candidates[1].score);
    }

    #[test]
    fn dedup_and_mixed_apps() {
        let settings = widget(
            Some("Settings"),
            Some("app.settings"),
            None,
            "android.widget.Button",
            true,
            0,
        );
        let a = build_page_capture("App", "Main", None, vec![settings.clone()]).unwrap();
        let mut moved = settings.clone();
        moved.bounds = Bounds::new(0, 500, 100, 560).unwrap();
        let b = build_page_capture("App", "Other", None, vec![moved]).unwrap();
        let store = build_context_store(&[a.clone(), b], &HeuristicAnnotator, 4).unwrap();
        assert_eq!(store.widgets.len(), 1);
        assert_eq!(store.widgets[0].source_capture, a.capture_id);
        assert_eq!(store.annotated_count(), 1);

        assert!(build_context_store(&[], &HeuristicAnnotator, 4)
            .unwrap()
            .widgets
            .is_empty());
        let other = build_page_capture("Else", "Main", None, vec![]).unwrap();
        assert!(matches!(
            build_context_store(&[a, other], &HeuristicAnnotator, 4),
            Err(GroundingError::MixedApps { .. })
        ));
    }

    #[test]
    fn store_json_round_trip() {
        let ws = vec![
            widget(
                Some("Settings"),
                Some("app.settings"),
                None,
                "android.widget.Button",
                true,
                0,
            ),
            widget(None, None, Some("Search"), "android.widget.ImageView", true, 1),
            widget(Some("Title"), None, None, "android.widget.TextView", false, 2),
        ];
        let page = build_page_capture("App", "Main", None, ws.clone()).unwrap();
        let built = build_context_store(std::slice::from_ref(&page), &HeuristicAnnotator, 2).unwrap();
        let json = built.to_json();
        let back = WidgetContextStore::from_json(&json).unwrap();
        assert_eq!(back, built);
        assert_eq!(back.to_json(), json);
        let attrs: Vec<_> = back.widgets.iter().map(|w| w.attributes.clone()).collect();
        assert_eq!(attrs, ws);
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["widgets"][1]["text"], Value::Null);
        assert_eq!(v["widgets"][0]["class"], "android.widget.Button");
        // idempotent build
        assert_eq!(build_context_store(&[page], &HeuristicAnnotator, 3).unwrap(), built);
    }

    #[test]
    fn same_widget_by_either_identifier() {
        let store = annotated_store(vec![
            (
                widget(
                    Some("Settings"),
                    Some("app.settings"),
                    None,
                    "android.widget.Button",
                    true,
                    0,
                ),
                "Settings",
                "Opens settings",
            ),
            (
                widget(Some("Search"), None, None, "android.widget.Button", true, 1),
                "Search",
                "Searches",
            ),
        ]);
        let by_text = Selector::single(Field::Text, "Settings");
        let by_id = Selector::single(Field::Id, "app.settings");
        let search = Selector::single(Field::Text, "Search");
        let ghost = Selector::single(Field::Id, "ghost");
        assert!(same_widget(&by_text, &by_id, &store));
        assert!(same_widget(&by_id, &by_text, &store));
        assert!(same_widget(&by_text, &by_text, &store));
        assert!(!same_widget(&by_text, &search, &store));
        assert!(!same_widget(&ghost, &ghost, &store));
    }

    #[test]
    fn annotation_prompt_shape() {
        let w = widget(
            Some("What is 2+2?"),
            Some("com.ichi2.anki:id/flashcard"),
            None,
            "android.webkit.WebView",
            false,
            0,
        );
        let p = page(vec![w.clone()]);
        let demos = bundled_annotation_demos();
        let prompt = build_annotation_prompt(&p, &w, &demos, None).unwrap();
        assert_eq!(prompt.component_ids(), [1, 2, 3, 4, 5]);
        let input = prompt.component_text(4).unwrap();
        assert!(input.contains("App name: AnkiDroid\nActivity name: Previewer\n"));
        assert!(input.contains(r#""description": "null""#));
        assert!(input.contains("No screenshot available"));
        assert_eq!(
            prompt.serialize(),
            build_annotation_prompt(&p, &w, &demos, None).unwrap().serialize()
        );
        assert!(matches!(
            build_annotation_prompt(&p, &w, &demos[..1], None),
            Err(GroundingError::MissingDemos(1))
        ));

        let shot = RasterImage::filled(100, 40, [9, 9, 9, 255]);
        let with = build_annotation_prompt(&p, &w, &demos, Some(&shot)).unwrap();
        assert_eq!(with.messages[with.components[3].message].attachments.len(), 2);
        // Off-screen widget falls back to the attribute-only variant.
        let mut off = w.clone();
        off.bounds = Bounds::new(0, 30, 100, 90).unwrap();
        let fallback = build_annotation_prompt(&p, &off, &demos, Some(&shot)).unwrap();
        assert!(fallback.component_text(4).unwrap().contains("No screenshot available"));
    }

    #[test]
    fn annotate_with_repair() {
        let w = widget(Some("Q"), None, None, "android.widget.TextView", false, 0);
        let p = page(vec![w.clone()]);
        let prompt = build_annotation_prompt(&p, &w, &bundled_annotation_demos(), None).unwrap();
        let good = r#"Sure: {"semantic_label": " Question text display ", "functionality": "Displays the question text to the user for review"}"#;

        let mock = MockProvider::new(BTreeMap::from([(prompt.sha256(), good.to_string())]));
        let (a, retries) = annotate_widget(&mock, &prompt).unwrap();
        assert_eq!(retries, 0);
        assert_eq!(a.semantic_label, "Question text display");

        let prose = "This widget shows a question.";
        let repaired = prompt.with_followup(prose, ANNOTATION_REPAIR);
        let mock = MockProvider::new(BTreeMap::from([
            (prompt.sha256(), prose.to_string()),
            (repaired.sha256(), good.to_string()),
        ]));
        assert_eq!(annotate_widget(&mock, &prompt).unwrap().1, 1);

        let mock = MockProvider::new(BTreeMap::from([
            (prompt.sha256(), prose.to_string()),
            (repaired.sha256(), prose.to_string()),
        ]));
        assert!(matches!(
            annotate_widget(&mock, &prompt),
            Err(GroundingError::MalformedAnnotation(_))
        ));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn label_word_limit() {
        assert!(parse_annotation(
            r#"{"semantic_label": "one two three four five six seven eight nine", "functionality": "f"}"#
        )
        .is_err());
        assert!(parse_annotation(r#"{"semantic_label": "", "functionality": "f"}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scores_bounded_and_independent(query in "[a-z ]{1,30}", extra in "[a-z]{1,8}") {
                let mut store = annotated_store(vec![
                    (widget(Some("Search files"), Some("btn_search"), None, "android.widget.Button", true, 0), "Search button", "Searches the file list"),
                    (widget(Some("Download"), None, Some("folder"), "android.widget.TextView", false, 1), "Folder name", "Displays a folder"),
                ]);
                let Ok(before) = match_widget(&query, &store) else { return Ok(()); };
                for c in &before.candidates {
                    prop_assert!(c.score > 0.0 && c.score <= 1.0 + 1e-12);
                }
                store.insert(EnrichedWidget::new("other", widget(Some(&extra), None, None, "X", false, 7)));
                let after = match_widget(&query, &store).unwrap();
                for c in &before.candidates {
                    let same = after.candidates.iter().find(|d| d.widget_uid == c.widget_uid).unwrap();
                    prop_assert_eq!(same.score, c.score);
                }
            }
        }
    }
}
