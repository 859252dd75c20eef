//! Natural-language GUI property synthesis: capture parsing, widget
//! grounding, the property DSL, prompt-driven synthesis, a scripted app
//! simulator, correctness judging and paraphrase robustness tooling.

pub mod capture;
pub mod evaluation;
pub mod grounding;
pub mod prompt;
pub mod propdsl;
pub mod provider;
pub mod robustness;
pub mod simulator;
pub mod synthesis;
