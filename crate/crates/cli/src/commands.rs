use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};

use propforge_core::capture::{load_capture_dir, PageCapture};
use propforge_core::evaluation::{judge, BatchReport, ModelPair, NamedReport, Unjudged};
use propforge_core::grounding::{
    build_context_store, bundled_annotation_demos, Annotator, GroundingError, HeuristicAnnotator, MllmAnnotator,
    WidgetContextStore,
};
use propforge_core::propdsl::{
    char_complexity, complexity as property_complexity, parse_property, print_property, validate, Severity,
};
use propforge_core::provider::{ChatProvider, MockProvider, OpenAiCompatible, ENV_LLM_MODEL, ENV_MLLM_MODEL};
use propforge_core::robustness::{
    bundled_paraphrase_template, generate_paraphrases, greedy_select, BleuConfig, ParaphrasePool, RobustnessError,
};
use propforge_core::simulator::{execute_property, AppModel, ScreenState};
use propforge_core::synthesis::{
    baseline_synthesize, build_synthesis_prompt, bundled_api_catalog, bundled_synthesis_demos,
    parse_description_with_default, select_context_subset, synthesize as llm_synthesize,
};

use crate::workspace::{file_stem, files_with_ext, read, subdirs, write_atomic, LockGuard, Workspace};
use crate::{
    AnnotatorChoice, CheckArgs, ComplexityArgs, ContextBuildArgs, ParaphraseArgs, ProviderArgs, SimulateArgs,
    SynthesizeArgs, TableFormat,
};

/// Exit code 2 for `Usage`, 1 for `Failed`.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Failed(e.into())
}

#[derive(Debug)]
pub struct Outcome {
    /// False means partial failure (exit code 1).
    pub ok: bool,
    pub text: String,
    pub json: Value,
    pub warnings: Vec<String>,
}

fn lock(ws: &Workspace) -> Result<LockGuard, Failure> {
    if !ws.root.is_dir() {
        return Err(usage(anyhow!("workspace {} does not exist", ws.root.display())));
    }
    ws.lock().map_err(usage)
}

fn to_json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(failed)
}

fn make_provider(ws: &Workspace, p: &ProviderArgs, model_var: &str) -> Result<Box<dyn ChatProvider>, Failure> {
    if p.mock {
        let dir = p.fixtures.clone().unwrap_or_else(|| ws.fixtures());
        let mock = MockProvider::load_dir(&dir).map_err(usage)?;
        return Ok(Box::new(mock));
    }
    Ok(Box::new(OpenAiCompatible::from_env(model_var).map_err(usage)?))
}

fn load_context(ws: &Workspace) -> Result<WidgetContextStore, Failure> {
    let path = ws.context();
    if !path.is_file() {
        return Err(usage(anyhow!(
            "missing context: {} not found; run `propforge context build` first",
            path.display()
        )));
    }
    WidgetContextStore::load(&path).map_err(usage)
}

/// Runs `f` over `items` with at most `workers` in flight; results keep
/// input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every item visited"))
        .collect()
}

pub fn context_build(ws: &Workspace, a: &ContextBuildArgs) -> Result<Outcome, Failure> {
    let _lock = lock(ws)?;
    let dirs = subdirs(&ws.captures()).map_err(usage)?;
    if dirs.is_empty() {
        return Err(usage(anyhow!(
            "no captures: {} has no capture directories",
            ws.captures().display()
        )));
    }
    let captures: Vec<PageCapture> = dirs
        .iter()
        .map(|d| load_capture_dir(d, &ws.root).with_context(|| format!("loading capture {}", d.display())))
        .collect::<Result<_, _>>()
        .map_err(usage)?;

    let provider = match a.annotator {
        AnnotatorChoice::Heuristic => None,
        AnnotatorChoice::Mllm => Some(make_provider(ws, &a.provider, ENV_MLLM_MODEL)?),
    };
    let mllm;
    let annotator: &dyn Annotator = match &provider {
        None => &HeuristicAnnotator,
        Some(p) => {
            mllm = MllmAnnotator::new(p.as_ref(), bundled_annotation_demos(), &ws.root);
            &mllm
        }
    };
    let store = build_context_store(&captures, annotator, a.concurrency as usize).map_err(|e| match e {
        GroundingError::MixedApps { .. } | GroundingError::MissingDemos(_) => usage(e),
        other => failed(other),
    })?;
    write(&ws.context(), store.to_json().as_bytes())?;
    let total = store.widgets.len();
    let annotated = store.annotated_count();
    Ok(Outcome {
        ok: true,
        text: format!(
            "context.json: {total} widgets from {} captures, {annotated} annotated\n",
            captures.len()
        ),
        json: json!({
            "context": ws.context(),
            "captures": captures.len(),
            "widgets": total,
            "annotated": annotated,
        }),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Serialize)]
struct SynthesisEntry {
    file: String,
    name: String,
    ok: bool,
    output: Option<String>,
    retries: Option<u32>,
    prompt_sha256: Option<String>,
    error: Option<String>,
    diagnostics: Vec<String>,
    warnings: Vec<String>,
}

pub fn synthesize(ws: &Workspace, a: &SynthesizeArgs) -> Result<Outcome, Failure> {
    let _lock = lock(ws)?;
    let store = load_context(ws)?;
    let files = if a.files.is_empty() {
        files_with_ext(&ws.descriptions(), "txt").map_err(usage)?
    } else {
        a.files.clone()
    };
    if files.is_empty() {
        return Err(usage(anyhow!("no descriptions in {}", ws.descriptions().display())));
    }
    let provider = if a.baseline {
        None
    } else {
        Some(make_provider(ws, &a.provider, ENV_LLM_MODEL)?)
    };
    let demos = bundled_synthesis_demos();

    let run_one = |file: &PathBuf| -> SynthesisEntry {
        let name = file_stem(file);
        let mut entry = SynthesisEntry {
            file: file.display().to_string(),
            name: name.clone(),
            ok: false,
            output: None,
            retries: None,
            prompt_sha256: None,
            error: None,
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        };
        let desc = match read(file)
            .map_err(|e| format!("{e:#}"))
            .and_then(|t| parse_description_with_default(&t, &name).map_err(|e| e.to_string()))
        {
            Ok(d) => d,
            Err(e) => {
                entry.error = Some(e);
                return entry;
            }
        };
        let ast = match &provider {
            None => baseline_synthesize(&desc, &store).map_err(|e| e.to_string()),
            Some(p) => {
                let subset = select_context_subset(&desc, &store, a.context_budget);
                match build_synthesis_prompt(&desc, &subset, bundled_api_catalog(), &demos) {
                    Err(e) => Err(e.to_string()),
                    Ok(bundle) => {
                        entry.prompt_sha256 = Some(bundle.sha256());
                        if a.dump_prompts {
                            let path = ws.reports().join("prompts").join(format!("{name}.synthesis.txt"));
                            if let Err(e) = write_atomic(&path, bundle.serialize().as_bytes()) {
                                entry.warnings.push(format!("{e:#}"));
                            }
                        }
                        match llm_synthesize(p.as_ref(), &bundle, a.repair_budget) {
                            Ok(r) => {
                                entry.retries = Some(r.retries_used);
                                Ok(r.ast)
                            }
                            Err(propforge_core::synthesis::SynthesisError::SynthesisFailed {
                                attempts,
                                diagnostics,
                            }) => {
                                entry.diagnostics = diagnostics;
                                entry.retries = Some(attempts.saturating_sub(1));
                                Err(format!("no valid property after {attempts} attempts"))
                            }
                            Err(e) => Err(e.to_string()),
                        }
                    }
                }
            }
        };
        let ast = match ast {
            Ok(ast) => ast,
            Err(e) => {
                entry.error = Some(e);
                return entry;
            }
        };
        let diags = validate(&ast, Some(&store));
        for d in &diags {
            match d.severity {
                Severity::Warning => entry.warnings.push(d.to_string()),
                Severity::Error => entry.diagnostics.push(d.to_string()),
            }
        }
        if !entry.diagnostics.is_empty() {
            entry.error = Some("generated property does not validate".into());
            return entry;
        }
        let out = ws.properties().join(format!("{name}.prop"));
        match write_atomic(&out, print_property(&ast).as_bytes()) {
            Ok(()) => {
                entry.ok = true;
                entry.output = Some(out.display().to_string());
            }
            Err(e) => entry.error = Some(format!("{e:#}")),
        }
        entry
    };
    let entries = parallel_map(&files, a.concurrency as usize, run_one);
    write(&ws.reports().join("synthesis_log.json"), &to_json_bytes(&entries))?;

    let succeeded = entries.iter().filter(|e| e.ok).count();
    let mut text = String::new();
    let mut warnings = Vec::new();
    for e in &entries {
        match (&e.error, e.retries) {
            (None, Some(r)) => text.push_str(&format!("ok      {} ({r} repair rounds)\n", e.name)),
            (None, None) => text.push_str(&format!("ok      {}\n", e.name)),
            (Some(err), _) => {
                text.push_str(&format!("failed  {}: {err}\n", e.name));
                for d in &e.diagnostics {
                    text.push_str(&format!("        {d}\n"));
                }
            }
        }
        warnings.extend(e.warnings.iter().map(|w| format!("{}: {w}", e.name)));
    }
    text.push_str(&format!("{succeeded}/{} properties written\n", entries.len()));
    Ok(Outcome {
        ok: succeeded == entries.len(),
        text,
        json: json!({ "succeeded": succeeded, "total": entries.len(), "entries": entries }),
        warnings,
    })
}

pub fn check(ws: &Workspace, a: &CheckArgs) -> Result<Outcome, Failure> {
    let _lock = lock(ws)?;
    let store = load_context(ws)?;
    let gen_dir = a.generated.clone().unwrap_or_else(|| ws.properties());
    let gt_dir = a.ground_truth.clone().unwrap_or_else(|| ws.ground_truth());
    let models_dir = a.models.clone().unwrap_or_else(|| ws.models());

    // name -> (pair, path)
    let mut truths: BTreeMap<String, (String, PathBuf)> = BTreeMap::new();
    for pair_dir in subdirs(&gt_dir).map_err(usage)? {
        let pair = file_stem(&pair_dir);
        for f in files_with_ext(&pair_dir, "prop").map_err(usage)? {
            let name = file_stem(&f);
            if let Some((other, _)) = truths.insert(name.clone(), (pair.clone(), f)) {
                return Err(usage(anyhow!(
                    "ground truth `{name}` appears under both `{other}` and `{pair}`"
                )));
            }
        }
    }
    let generated: BTreeMap<String, PathBuf> = files_with_ext(&gen_dir, "prop")
        .map_err(usage)?
        .into_iter()
        .map(|p| (file_stem(&p), p))
        .collect();
    let gt_names: BTreeSet<&String> = truths.keys().collect();
    let gen_names: BTreeSet<&String> = generated.keys().collect();
    if gt_names.is_empty() || gt_names != gen_names {
        let missing: Vec<&&String> = gt_names.difference(&gen_names).collect();
        let extra: Vec<&&String> = gen_names.difference(&gt_names).collect();
        return Err(usage(anyhow!(
            "name mismatch between {} and {}: {} ground truths, {} generated; without generated: {missing:?}; without ground truth: {extra:?}",
            gen_dir.display(),
            gt_dir.display(),
            gt_names.len(),
            gen_names.len()
        )));
    }

    let mut pairs: BTreeMap<String, ModelPair> = BTreeMap::new();
    for (pair, _) in truths.values() {
        if pairs.contains_key(pair) {
            continue;
        }
        let correct = models_dir.join(format!("{pair}.json"));
        let buggy = models_dir.join(format!("{pair}.buggy.json"));
        if !correct.is_file() || !buggy.is_file() {
            return Err(usage(anyhow!(
                "model pair `{pair}` incomplete: need {} and {}",
                correct.display(),
                buggy.display()
            )));
        }
        let load = |p: &Path| AppModel::load(p).with_context(|| format!("loading {}", p.display()));
        pairs.insert(
            pair.clone(),
            ModelPair {
                correct: load(&correct).map_err(usage)?,
                buggy: Some(load(&buggy).map_err(usage)?),
            },
        );
    }

    let mut reports = Vec::new();
    let mut unjudged = Vec::new();
    for (name, (pair, gt_path)) in &truths {
        let gt = parse_property(&read(gt_path).map_err(usage)?)
            .map_err(|e| usage(anyhow!("ground truth {}: {e}", gt_path.display())))?;
        let gen = match read(&generated[name])
            .map_err(|e| format!("{e:#}"))
            .and_then(|t| parse_property(&t).map_err(|e| e.to_string()))
        {
            Ok(ast) => ast,
            Err(error) => {
                unjudged.push(Unjudged {
                    name: name.clone(),
                    error,
                });
                continue;
            }
        };
        let report = judge(&pairs[pair], &gen, &gt, &store).map_err(usage)?;
        reports.push(NamedReport {
            name: name.clone(),
            report,
        });
    }
    let batch = BatchReport::new(reports, unjudged);
    let md = batch.to_markdown();
    write(&ws.reports().join("report.json"), &to_json_bytes(&batch))?;
    write(&ws.reports().join("report.md"), md.as_bytes())?;
    Ok(Outcome {
        ok: batch.correct == batch.total,
        text: md,
        json: serde_json::to_value(&batch).expect("serializable"),
        warnings: Vec::new(),
    })
}

pub fn paraphrase(ws: &Workspace, a: &ParaphraseArgs) -> Result<Outcome, Failure> {
    let _lock = lock(ws)?;
    let mut warnings = Vec::new();
    let pool = match &a.pool {
        Some(path) => serde_json::from_str::<ParaphrasePool>(&read(path).map_err(usage)?)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(usage)?,
        None => {
            let desc_path = a
                .description
                .as_ref()
                .expect("clap requires a description without --pool");
            let description = read(desc_path).map_err(usage)?;
            let template = match &a.template {
                Some(t) => read(t).map_err(usage)?,
                None => bundled_paraphrase_template().to_string(),
            };
            let provider = make_provider(ws, &a.provider, ENV_LLM_MODEL)?;
            let generated = generate_paraphrases(
                provider.as_ref(),
                &template,
                description.trim_end(),
                a.calls,
                a.per_call,
                a.parallel as usize,
            )
            .map_err(|e| match e {
                RobustnessError::BadCounts => usage(e),
                other => failed(other),
            })?;
            warnings = generated.warnings;
            write(&ws.reports().join("paraphrases.json"), &to_json_bytes(&generated.pool))?;
            generated.pool
        }
    };
    let selection = greedy_select(&pool, a.k, &BleuConfig::default()).map_err(usage)?;
    write(&ws.reports().join("selection.json"), &to_json_bytes(&selection))?;
    let mut text = format!(
        "selected {} of {} candidates, average pairwise BLEU {:.4}\n",
        selection.k,
        pool.candidates.len(),
        selection.objective
    );
    for (i, s) in selection.steps.iter().enumerate() {
        text.push_str(&format!("{:>3}. [{:.4}] {}\n", i + 1, s.score, s.text));
    }
    Ok(Outcome {
        ok: true,
        text,
        json: json!({ "pool_size": pool.candidates.len(), "selection": selection }),
        warnings,
    })
}

#[derive(Debug, Serialize)]
struct ComplexityRow {
    item: String,
    kind: &'static str,
    clauses: Option<usize>,
    operators: Option<usize>,
    events: Option<usize>,
    chars: Option<usize>,
    error: Option<String>,
}

fn mean(values: impl Iterator<Item = Option<usize>>) -> Option<f64> {
    let v: Vec<usize> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64)
}

pub fn complexity(a: &ComplexityArgs) -> Result<Outcome, Failure> {
    let rows: Vec<ComplexityRow> = a
        .files
        .iter()
        .map(|f| {
            let item = f.display().to_string();
            let is_prop = f.extension().is_some_and(|e| e == "prop");
            let kind = if is_prop { "property" } else { "description" };
            let mut row = ComplexityRow {
                item,
                kind,
                clauses: None,
                operators: None,
                events: None,
                chars: None,
                error: None,
            };
            match read(f) {
                Err(e) => row.error = Some(format!("{e:#}")),
                Ok(text) if is_prop => match parse_property(&text) {
                    Ok(ast) => {
                        let m = property_complexity(&ast);
                        row.clauses = Some(m.clause_count);
                        row.operators = Some(m.operator_count);
                        row.events = Some(m.event_count);
                        row.chars = Some(m.char_count);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
                Ok(text) => row.chars = Some(char_complexity(text.trim())),
            }
            row
        })
        .collect();
    let means = [
        mean(rows.iter().map(|r| r.clauses)),
        mean(rows.iter().map(|r| r.operators)),
        mean(rows.iter().map(|r| r.events)),
        mean(rows.iter().map(|r| r.chars)),
    ];
    let cell = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
    let mean_cell = |v: Option<f64>| v.map(|n| format!("{n:.2}")).unwrap_or_else(|| "-".into());
    let (sep, head, tail) = match a.format {
        TableFormat::Tsv => ("\t", String::new(), String::new()),
        TableFormat::Markdown => (" | ", "| ".to_string(), " |".to_string()),
    };
    let line = |cells: Vec<String>| format!("{head}{}{tail}\n", cells.join(sep));
    let mut text = line(
        ["item", "kind", "clauses", "operators", "events", "chars"]
            .map(String::from)
            .to_vec(),
    );
    if a.format == TableFormat::Markdown {
        text.push_str("|---|---|---|---|---|---|\n");
    }
    let mut warnings = Vec::new();
    for r in &rows {
        if let Some(e) = &r.error {
            warnings.push(format!("{}: {e}", r.item));
        }
        text.push_str(&line(vec![
            r.item.clone(),
            r.kind.into(),
            cell(r.clauses),
            cell(r.operators),
            cell(r.events),
            cell(r.chars),
        ]));
    }
    let mut mean_row = vec!["mean".to_string(), String::new()];
    mean_row.extend(means.iter().map(|m| mean_cell(*m)));
    text.push_str(&line(mean_row));
    Ok(Outcome {
        ok: rows.iter().all(|r| r.error.is_none()),
        text,
        json: json!({
            "items": rows,
            "means": {"clauses": means[0], "operators": means[1], "events": means[2], "chars": means[3]},
        }),
        warnings,
    })
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome, Failure> {
    let model = AppModel::load(&a.model)
        .with_context(|| format!("loading {}", a.model.display()))
        .map_err(usage)?;
    if let Some(dir) = &a.export_captures {
        let app = a.app.as_deref().expect("clap requires --app with --export-captures");
        let mut states = model.explore(a.max_states);
        // Screens no transition reaches are still captured, in their initial state.
        for screen in model.screens.keys() {
            if !states.iter().any(|s| &s.screen == screen) {
                states.push(ScreenState {
                    screen: screen.clone(),
                    vars: model.state.clone(),
                });
            }
        }
        let mut written = Vec::new();
        for (i, st) in states.iter().enumerate() {
            let xml = model.hierarchy_xml(&st.screen, app, &st.vars).expect("screen exists");
            let cap = dir.join(format!("{:02}-{}", i + 1, st.screen));
            write(
                &cap.join("app.json"),
                &to_json_bytes(&json!({"app_name": app, "activity_name": st.screen})),
            )?;
            write(&cap.join("window_dump.xml"), xml.as_bytes())?;
            written.push(cap.display().to_string());
        }
        return Ok(Outcome {
            ok: true,
            text: written.iter().map(|w| format!("{w}\n")).collect(),
            json: json!({ "captures": written }),
            warnings: Vec::new(),
        });
    }
    let path = a
        .property
        .as_ref()
        .expect("clap requires a property without --export-captures");
    let ast = parse_property(&read(path).map_err(usage)?).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let (verdict, trace) = execute_property(&model, &ast);
    let mut text = String::new();
    for e in &trace.events {
        text.push_str(&format!(
            "{} {} : {} -> {}\n",
            e.action,
            e.widget.as_deref().unwrap_or(""),
            e.screen_before,
            e.screen_after
        ));
    }
    for (assertion, ok) in &trace.assertion_results {
        text.push_str(&format!(
            "assert {assertion}: {}\n",
            if *ok { "holds" } else { "fails" }
        ));
    }
    text.push_str(&format!("verdict: {verdict}\n"));
    Ok(Outcome {
        ok: true,
        text,
        json: json!({ "verdict": verdict, "trace": trace }),
        warnings: Vec::new(),
    })
}
