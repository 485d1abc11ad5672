use spiked_core::model::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] spiked_core::Error),

    #[error("model validation failed for {kind}: {}", describe(.report))]
    Validation {
        kind: &'static str,
        report: ValidationReport,
    },

    #[error("insufficient data for {statistic}: {count} records, need at least {needed}")]
    InsufficientData {
        statistic: String,
        count: usize,
        needed: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn describe(report: &ValidationReport) -> String {
    report
        .failures()
        .map(|c| format!("{} (value {:e})", c.name, c.value))
        .collect::<Vec<_>>()
        .join(", ")
}

impl HarnessError {
    /// Process exit code: 1 input, 2 domain, 3 insufficient data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        use spiked_core::Error as E;
        match self {
            HarnessError::Input(_) | HarnessError::Io { .. } => 1,
            HarnessError::Validation { .. } => 2,
            HarnessError::InsufficientData { .. } => 3,
            HarnessError::Core(e) => match e {
                E::Solver { .. } | E::Numerical(_) | E::DegenerateVariance { .. } => 4,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
