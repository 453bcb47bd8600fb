use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure categories for unsuccessful episodes. `ToolingRuntime` only
/// shows up once the scaffold adds its own moving parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    AuthCredentials,
    ReasoningPlanning,
    ApiParamsSchema,
    Other,
    MissingApiWrongName,
    RepetitionLoop,
    FormattingCodeBlock,
    PaginationIncomplete,
    ContextLength,
    ToolingRuntime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown failure category `{0}`")]
pub struct UnknownCategory(pub String);

impl FailureCategory {
    /// Display order of the failure tables.
    pub const ALL: [FailureCategory; 10] = [
        FailureCategory::AuthCredentials,
        FailureCategory::ReasoningPlanning,
        FailureCategory::ApiParamsSchema,
        FailureCategory::Other,
        FailureCategory::MissingApiWrongName,
        FailureCategory::RepetitionLoop,
        FailureCategory::FormattingCodeBlock,
        FailureCategory::PaginationIncomplete,
        FailureCategory::ContextLength,
        FailureCategory::ToolingRuntime,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FailureCategory::AuthCredentials => "auth_credentials",
            FailureCategory::ReasoningPlanning => "reasoning_planning",
            FailureCategory::ApiParamsSchema => "api_params_schema",
            FailureCategory::Other => "other",
            FailureCategory::MissingApiWrongName => "missing_api_wrong_name",
            FailureCategory::RepetitionLoop => "repetition_loop",
            FailureCategory::FormattingCodeBlock => "formatting_code_block",
            FailureCategory::PaginationIncomplete => "pagination_incomplete",
            FailureCategory::ContextLength => "context_length",
            FailureCategory::ToolingRuntime => "tooling_runtime",
        }
    }

    /// Long label, as used in prompts and the main failure table.
    pub fn label(self) -> &'static str {
        match self {
            FailureCategory::AuthCredentials => "Authentication / credential issue",
            FailureCategory::ReasoningPlanning => "Reasoning / planning error",
            FailureCategory::ApiParamsSchema => "Wrong API params / schema mismatch",
            FailureCategory::Other => "Other",
            FailureCategory::MissingApiWrongName => "Missing API call / wrong API name",
            FailureCategory::RepetitionLoop => "Repetition / loop",
            FailureCategory::FormattingCodeBlock => "Formatting / code block error",
            FailureCategory::PaginationIncomplete => "Pagination / incomplete iteration",
            FailureCategory::ContextLength => "Context length / token limit",
            FailureCategory::ToolingRuntime => "Tooling runtime error",
        }
    }

    /// Short label, as used in comparison tables.
    pub fn short_label(self) -> &'static str {
        match self {
            FailureCategory::AuthCredentials => "Auth / credentials",
            FailureCategory::ReasoningPlanning => "Reasoning / planning",
            FailureCategory::ApiParamsSchema => "API params / schema",
            FailureCategory::Other => "Other",
            FailureCategory::MissingApiWrongName => "Missing API / wrong name",
            FailureCategory::RepetitionLoop => "Repetition / loop",
            FailureCategory::FormattingCodeBlock => "Formatting / code block",
            FailureCategory::PaginationIncomplete => "Pagination / incomplete",
            FailureCategory::ContextLength => "Context length / token limit",
            FailureCategory::ToolingRuntime => "Tooling runtime error",
        }
    }

    /// Accepts ids, long labels and short labels, ignoring case and spacing.
    pub fn parse_label(text: &str) -> Result<Self, UnknownCategory> {
        let norm = |s: &str| s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        let want = norm(text);
        FailureCategory::ALL
            .into_iter()
            .find(|c| [c.id(), c.label(), c.short_label()].iter().any(|l| norm(l) == want))
            .ok_or_else(|| UnknownCategory(text.trim().to_string()))
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FailureCategory {
    type Err = UnknownCategory;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_label(s)
    }
}
