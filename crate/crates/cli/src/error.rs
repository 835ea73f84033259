use blockwise::ErrorClass;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] blockwise::Error),
    /// Bad flags or an unusable configuration file.
    #[error("{0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(std::io::Error),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    class: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorEnvelope<'a> {
    error: ErrorBody<'a>,
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => ErrorClass::Config,
            CliError::Output(_) => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "Config",
            CliError::Output(_) => "Output",
        }
    }

    pub fn to_json(&self) -> String {
        let class = match self.class() {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        };
        let env = ErrorEnvelope { error: ErrorBody { kind: self.kind(), class, message: self.to_string() } };
        serde_json::to_string(&env).expect("error envelope serializes")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
