//! Maps failures to exit codes, each with a one-line remedy.

use std::io::ErrorKind;

use recsandbox::agent::AgentError;
use recsandbox::catalog::CatalogError;
use recsandbox::harness::HarnessError;
use recsandbox::memory::MemoryError;
use recsandbox::recsys::RecsysError;

pub const EXIT_MISSING_INPUT: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_DATA: u8 = 5;
pub const EXIT_RUNTIME: u8 = 6;
pub const EXIT_OTHER: u8 = 1;

pub struct Failure {
    pub code: u8,
    pub remedy: &'static str,
}

/// A bad flag value that clap cannot check on its own.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn failure(code: u8, remedy: &'static str) -> Option<Failure> {
    Some(Failure { code, remedy })
}

pub fn classify(err: &anyhow::Error) -> Failure {
    err.chain().find_map(classify_one).unwrap_or(Failure { code: EXIT_OTHER, remedy: "rerun with --log-level debug for details" })
}

fn classify_one(e: &(dyn std::error::Error + 'static)) -> Option<Failure> {
    if let Some(io) = e.downcast_ref::<std::io::Error>() {
        return match io.kind() {
            ErrorKind::NotFound => failure(EXIT_MISSING_INPUT, "check that the named path exists"),
            ErrorKind::PermissionDenied => failure(EXIT_MISSING_INPUT, "check permissions on the named path"),
            _ => None,
        };
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return failure(EXIT_DATA, "the named file is not valid JSON for this command");
    }
    if e.downcast_ref::<UsageError>().is_some() {
        return failure(EXIT_CONFIG, "fix the flag value named above; see --help");
    }
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return match h {
            HarnessError::Config(_) => failure(EXIT_CONFIG, "fix the experiment config value named above"),
            HarnessError::Parse(_) => failure(EXIT_CONFIG, "fix the syntax error in the named file"),
            HarnessError::NoEligibleUsers(_) => failure(EXIT_DATA, "use a larger catalog or relax the cohort selection"),
            _ => None,
        };
    }
    if let Some(c) = e.downcast_ref::<CatalogError>() {
        return match c {
            CatalogError::Invalid(_) => failure(EXIT_DATA, "fix the listed lines in the input files"),
            CatalogError::Synthetic(_) | CatalogError::Ratios(_) => failure(EXIT_CONFIG, "adjust the generator or split parameters"),
            CatalogError::Io { .. } => None,
        };
    }
    if let Some(r) = e.downcast_ref::<RecsysError>() {
        return match r {
            RecsysError::InvalidConfig(_) => failure(EXIT_CONFIG, "fix the recommender parameters"),
            RecsysError::EmptyTrain => failure(EXIT_DATA, "the training split is empty; supply more interactions"),
            RecsysError::External { .. } => failure(EXIT_DATA, "fix the external list file"),
            RecsysError::Checkpoint(_) => failure(EXIT_DATA, "retrain the model with this version of the tool"),
            _ => None,
        };
    }
    if let Some(a) = e.downcast_ref::<AgentError>() {
        return match a {
            AgentError::Config(_) => failure(EXIT_CONFIG, "set LLM_ENDPOINT, LLM_MODEL and LLM_API_KEY or fix the policy settings"),
            AgentError::Transport(_) | AgentError::Reply(_) => failure(EXIT_RUNTIME, "check the LLM endpoint, or use --policy rule"),
            _ => None,
        };
    }
    if let Some(m) = e.downcast_ref::<MemoryError>() {
        return match m {
            MemoryError::Config(_) => failure(EXIT_CONFIG, "set EMBED_ENDPOINT, EMBED_MODEL and EMBED_API_KEY or use the deterministic embedder"),
            MemoryError::Remote(_) => failure(EXIT_RUNTIME, "check the embedding endpoint, or use the deterministic embedder"),
            _ => None,
        };
    }
    None
}
