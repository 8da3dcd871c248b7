use std::fmt;

/// Counts of lattice candidates removed by each filter, reported when a
/// search level ends with nothing left to score.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct RejectCounts {
    pub integer_required: usize,
    pub nonnegative_required: usize,
    pub sparsity: usize,
    pub duplicate: usize,
    pub zero_row: usize,
    pub proportional_rows: usize,
    pub zero_pattern: usize,
    pub sign_pattern: usize,
    pub ratio: usize,
    pub domain: usize,
}

impl RejectCounts {
    pub fn total(&self) -> usize {
        self.integer_required
            + self.nonnegative_required
            + self.sparsity
            + self.duplicate
            + self.zero_row
            + self.proportional_rows
            + self.zero_pattern
            + self.sign_pattern
            + self.ratio
            + self.domain
    }

    /// Field-wise difference against an earlier snapshot of the same counter.
    pub fn since(&self, earlier: &RejectCounts) -> RejectCounts {
        RejectCounts {
            integer_required: self.integer_required - earlier.integer_required,
            nonnegative_required: self.nonnegative_required - earlier.nonnegative_required,
            sparsity: self.sparsity - earlier.sparsity,
            duplicate: self.duplicate - earlier.duplicate,
            zero_row: self.zero_row - earlier.zero_row,
            proportional_rows: self.proportional_rows - earlier.proportional_rows,
            zero_pattern: self.zero_pattern - earlier.zero_pattern,
            sign_pattern: self.sign_pattern - earlier.sign_pattern,
            ratio: self.ratio - earlier.ratio,
            domain: self.domain - earlier.domain,
        }
    }
}

impl fmt::Display for RejectCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "integer_required={} nonnegative_required={} sparsity={} duplicate={} \
             zero_row={} proportional_rows={} zero_pattern={} sign_pattern={} ratio={} domain={}",
            self.integer_required,
            self.nonnegative_required,
            self.sparsity,
            self.duplicate,
            self.zero_row,
            self.proportional_rows,
            self.zero_pattern,
            self.sign_pattern,
            self.ratio,
            self.domain
        )
    }
}

/// Engine error type. Variants carry enough context to name the offending
/// byte, row, or column in user-facing messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unit syntax error at byte {offset}: {msg}")]
    UnitSyntax { offset: usize, msg: String },

    #[error("unknown base unit `{symbol}` at byte {offset}")]
    UnknownUnit { symbol: String, offset: usize },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("row {row} rejected: non-numeric cell `{cell}` in column `{column}`")]
    BadCell {
        row: usize,
        column: String,
        cell: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimensionally infeasible: {0}")]
    Infeasible(String),

    #[error("zero pattern infeasible: {0}")]
    ZeroPatternInfeasible(String),

    #[error("no candidate survived filtering ({counts})")]
    EmptyLattice { counts: RejectCounts },

    #[error("no candidate met the acceptance threshold: {0}")]
    NoCandidate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 malformed input, 3 infeasible
    /// dimensional setup, 4 empty result.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnitSyntax { .. }
            | Error::UnknownUnit { .. }
            | Error::Csv(_)
            | Error::BadCell { .. }
            | Error::InvalidInput(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Infeasible(_) | Error::ZeroPatternInfeasible(_) => 3,
            Error::EmptyLattice { .. } | Error::NoCandidate(_) => 4,
        }
    }
}
