//! Exit-code protocol. Every failure carries the code the process exits with.

use htdetect_core::conformal::ConformalError;
use htdetect_core::dataset::DatasetError;
use htdetect_core::gan::GanError;
use htdetect_core::mlp::MlpError;
use htdetect_core::pipeline::PipelineError;
use htdetect_core::rtl::FrontendError;
use std::fmt;

pub const OK: i32 = 0;
pub const PARSE: i32 = 2;
pub const CONFIG: i32 = 3;
pub const DATA: i32 = 4;
pub const DIVERGENCE: i32 = 5;
pub const DETECT_TI: i32 = 10;
pub const DETECT_UNSURE: i32 = 11;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }

    /// Prefix the message with where it happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<FrontendError> for CliError {
    fn from(e: FrontendError) -> Self {
        Self::new(PARSE, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::InvalidSplit(_) => CONFIG,
            _ => DATA,
        };
        Self::new(code, e.to_string())
    }
}

fn mlp_code(e: &MlpError) -> i32 {
    match e {
        MlpError::Config(_) => CONFIG,
        MlpError::ShapeMismatch { .. } => DATA,
        MlpError::Divergence { .. } => DIVERGENCE,
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Dataset(d) => d.into(),
            GanError::InsufficientData(_) => Self::data(e.to_string()),
            GanError::Divergence { .. } => Self::new(DIVERGENCE, e.to_string()),
            GanError::Argument(_) => Self::config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Dataset(d) => return d.into(),
            PipelineError::Gan(g) => return g.into(),
            PipelineError::Parse(_) => PARSE,
            PipelineError::Config(_) | PipelineError::Bundle(_) | PipelineError::SchemaMismatch(_) => CONFIG,
            PipelineError::Classifier(ref m) | PipelineError::Conformal(ConformalError::Scorer(ref m)) => mlp_code(m),
            PipelineError::Conformal(ConformalError::Argument(_)) => CONFIG,
            PipelineError::Conformal(_)
            | PipelineError::Normalize(_)
            | PipelineError::Metrics(_)
            | PipelineError::MissingArm(_) => DATA,
        };
        Self::new(code, e.to_string())
    }
}

pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}
