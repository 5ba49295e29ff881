use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Core(asv_core::Error),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) | CliError::Core(_) | CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

impl From<asv_core::Error> for CliError {
    fn from(e: asv_core::Error) -> Self {
        use asv_core::Error as E;
        match e {
            E::NodeLimit { .. } | E::TooManyGroups { .. } => CliError::Budget(e.to_string()),
            E::MissingFile(_)
            | E::Json(_)
            | E::Csv(_)
            | E::MissingColumn(_)
            | E::NoUsableRows { .. }
            | E::InvalidDataset(_)
            | E::InvalidGrouping(_)
            | E::UnknownExample(_)
            | E::NoClosedForm { .. }
            | E::InvalidParams(_)
            | E::UnknownGroup(_)
            | E::Cycle(_)
            | E::UnknownNode(_)
            | E::InvalidDag(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
