use std::fmt;

/// Failure classes of a CLI invocation, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver {
        scenario: String,
        source: lambda_switch::Error,
    },
    Io(String),
    /// The Fock-convergence gate failed; outputs were still written.
    Gate(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver { .. } | CliError::Io(_) => 3,
            CliError::Gate(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver { .. } => "solver",
            CliError::Io(_) => "io",
            CliError::Gate(_) => "convergence-gate",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("error".into(), self.kind().into());
        obj.insert("message".into(), self.to_string().into());
        match self {
            CliError::Solver { scenario, source } => {
                obj.insert("scenario".into(), scenario.clone().into());
                obj.insert("cause".into(), format!("{:?}", source.root()).into());
            }
            CliError::Gate(failed) => {
                obj.insert("failed".into(), failed.clone().into());
            }
            _ => {}
        }
        obj.into()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Solver { scenario, source } => write!(f, "scenario {scenario}: {source}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::Gate(failed) => write!(
                f,
                "Fock-convergence gate failed for {}; raise the cutoffs",
                failed.join(", ")
            ),
        }
    }
}

impl std::error::Error for CliError {}
