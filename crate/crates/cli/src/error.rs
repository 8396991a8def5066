use thiserror::Error;

/// CLI failure modes, mapped onto process exit codes: configuration and
/// precondition problems exit with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) | CliError::Json(_) => 3,
        }
    }
}

/// Step-size and parameter-range errors are caller mistakes (exit 2);
/// divergence and convergence failures are numerical (exit 3).
pub fn from_lindyn(e: ntk_spectra_core::lindyn::LindynError) -> CliError {
    use ntk_spectra_core::lindyn::LindynError as E;
    match e {
        E::StepTooLarge { .. } | E::ParameterRange(_) | E::BetaTooSmall { .. } => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Numerical(other.to_string()),
    }
}

pub fn from_net(e: ntk_spectra_core::shallownet::ShallowNetError) -> CliError {
    use ntk_spectra_core::shallownet::ShallowNetError as E;
    match e {
        E::DimensionMismatch { .. } | E::InvalidStepSize(_) => CliError::Validation(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

pub fn from_data(e: ntk_spectra_core::data::DataError) -> CliError {
    use ntk_spectra_core::data::DataError as E;
    match e {
        E::Io(io) => CliError::Io(io),
        E::Json(j) => CliError::Json(j),
        E::Malformed(m) => CliError::Numerical(format!("malformed dataset: {m}")),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn from_ntk(e: ntk_spectra_core::ntk::NtkError) -> CliError {
    use ntk_spectra_core::ntk::NtkError as E;
    match e {
        E::NotPsd { .. } => CliError::Numerical(e.to_string()),
        E::Net(n) => from_net(n),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn from_spectral(e: ntk_spectra_core::spectral::SpectralError) -> CliError {
    use ntk_spectra_core::spectral::SpectralError as E;
    match e {
        E::SvdFailed | E::NonFinite | E::NotPsd(_) => CliError::Numerical(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn from_bounds(e: ntk_spectra_core::bounds::BoundsError) -> CliError {
    CliError::Validation(e.to_string())
}
