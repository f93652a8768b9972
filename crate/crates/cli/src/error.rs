use stable_lsi::compression::CompressionError;
use stable_lsi::datagen::DatagenError;
use stable_lsi::inference::InferenceError;
use stable_lsi::integrator::IntegratorError;
use stable_lsi::io::IoError;
use stable_lsi::linalg::LinalgError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flags, config entries or settings. Exit code 2.
    Usage(String),
    /// Unreadable, malformed or incompatible data. Exit code 3.
    Data(String),
    /// Divergence, non-finite values or failed numerical checks. Exit code 4.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numerical(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NoConvergence { .. } | LinalgError::NonFinite { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::InvalidSpec(_) => Self::Usage(e.to_string()),
            DatagenError::SubstepCap { .. } | DatagenError::NonFinite { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<CompressionError> for CliError {
    fn from(e: CompressionError) -> Self {
        match e {
            CompressionError::BadEnergy(_) | CompressionError::BadRank { .. } => Self::Usage(e.to_string()),
            CompressionError::Linalg(l) => l.into(),
            CompressionError::DimensionMismatch { .. } => Self::Data(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Config(_) => Self::Usage(e.to_string()),
            InferenceError::NonFiniteLoss { .. } | InferenceError::StabilityViolated(_) => {
                Self::Numerical(e.to_string())
            }
            InferenceError::Linalg(l) => l.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<IntegratorError> for CliError {
    fn from(e: IntegratorError) -> Self {
        match e {
            IntegratorError::Diverged { .. } => Self::Numerical(e.to_string()),
            IntegratorError::BadStep(_) => Self::Usage(e.to_string()),
            IntegratorError::Linalg(l) => l.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}
