//! `propforge`: turn structured property descriptions into executable GUI
//! properties, then run and judge them against scripted app models.

mod commands;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Failure, Outcome};
use workspace::Workspace;

#[derive(Parser, Debug)]
#[command(name = "propforge", version, about = "Property synthesis and checking for GUI apps")]
struct Cli {
    /// Workspace directory.
    #[arg(long, short = 'w', global = true, default_value = ".")]
    workspace: PathBuf,
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Widget context store.
    Context {
        #[command(subcommand)]
        action: ContextCmd,
    },
    /// Write one property per description into properties/.
    Synthesize(SynthesizeArgs),
    /// Judge generated properties against ground truths on model pairs.
    Check(CheckArgs),
    /// Generate a paraphrase pool and select a diverse subset.
    Paraphrase(ParaphraseArgs),
    /// Size metrics of properties (.prop) or descriptions (any other file).
    Complexity(ComplexityArgs),
    /// Run a property on an app model, or export a model's screens as captures.
    Simulate(SimulateArgs),
}

#[derive(Subcommand, Debug)]
enum ContextCmd {
    /// Annotate every captured widget and write context.json.
    Build(ContextBuildArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotatorChoice {
    Heuristic,
    Mllm,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    /// Answer model calls from fixture files instead of the network.
    #[arg(long)]
    pub mock: bool,
    /// Fixture directory for --mock (default: <workspace>/fixtures).
    #[arg(long, requires = "mock")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ContextBuildArgs {
    #[arg(long, value_enum, default_value_t = AnnotatorChoice::Heuristic)]
    pub annotator: AnnotatorChoice,
    /// Parallel annotation calls.
    #[arg(long, env = "PF_CONCURRENCY", default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Description files (default: every descriptions/*.txt).
    pub files: Vec<PathBuf>,
    /// Rule-based synthesis; no model calls.
    #[arg(long, conflicts_with = "mock")]
    pub baseline: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Also write every prompt to reports/prompts/.
    #[arg(long)]
    pub dump_prompts: bool,
    /// Widgets offered to the model per description.
    #[arg(long, default_value_t = propforge_core::synthesis::DEFAULT_CONTEXT_BUDGET)]
    pub context_budget: usize,
    /// Follow-up rounds after an invalid reply.
    #[arg(long, default_value_t = propforge_core::synthesis::DEFAULT_REPAIR_BUDGET)]
    pub repair_budget: u32,
    #[arg(long, env = "PF_CONCURRENCY", default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Generated properties (default: <workspace>/properties).
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Ground truths, one subdirectory per model pair (default: <workspace>/ground_truth).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Model pairs as NAME.json and NAME.buggy.json (default: <workspace>/models).
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParaphraseArgs {
    /// Description to paraphrase; required unless --pool is given.
    #[arg(required_unless_present = "pool")]
    pub description: Option<PathBuf>,
    /// Selection size.
    #[arg(long, short = 'k', default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub calls: usize,
    #[arg(long, default_value_t = 10)]
    pub per_call: usize,
    /// Select from an existing paraphrases.json instead of generating.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Prompt template with {description}, {count} and {call} placeholders.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Provider calls in flight at once; 1 is sequential.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallel: u32,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Tsv,
    Markdown,
}

#[derive(Args, Debug)]
pub struct ComplexityArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableFormat::Tsv)]
    pub format: TableFormat,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// App model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Property to run.
    #[arg(required_unless_present = "export_captures")]
    pub property: Option<PathBuf>,
    /// Write one capture directory per screen here instead of running.
    #[arg(long, requires = "app")]
    pub export_captures: Option<PathBuf>,
    /// App name recorded in exported captures; each screen id becomes
    /// the activity name.
    #[arg(long)]
    pub app: Option<String>,
    /// Bound on model states visited while exporting.
    #[arg(long, default_value_t = 64, requires = "export_captures")]
    pub max_states: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ws = Workspace::new(&cli.workspace);
    let result = match &cli.command {
        Command::Context {
            action: ContextCmd::Build(a),
        } => commands::context_build(&ws, a),
        Command::Synthesize(a) => commands::synthesize(&ws, a),
        Command::Check(a) => commands::check(&ws, a),
        Command::Paraphrase(a) => commands::paraphrase(&ws, a),
        Command::Complexity(a) => commands::complexity(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    finish(result, cli.json)
}

fn finish(result: Result<Outcome, Failure>, json: bool) -> ExitCode {
    match result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("json value"));
            } else {
                print!("{}", out.text);
            }
            ExitCode::from(if out.ok { 0 } else { 1 })
        }
        Err(f) => {
            let (code, err) = match &f {
                Failure::Usage(e) => (2, e),
                Failure::Failed(e) => (1, e),
            };
            if json {
                let v = serde_json::json!({"error": format!("{err:#}"), "exit_code": code});
                println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            }
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
