//! Crate-wide error wrapping every module error.

use crate::appf::AppfError;
use crate::netmodel::NetworkError;
use crate::npfs::NpfsError;
use crate::pfcore::PfError;
use crate::rom::RomError;
use crate::sampling::SamplingError;
use crate::sparla::LinalgError;
use crate::uq::UqError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error(transparent)]
    Npfs(#[from] NpfsError),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error(transparent)]
    Appf(#[from] AppfError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Uq(#[from] UqError),
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data or configuration.
    Config,
    /// A solve failed to reach tolerance or hit a singular system.
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Network(NetworkError::Io { .. }) => ErrorKind::Io,
            Error::Network(_) | Error::Sampling(SamplingError::Invalid(_) | SamplingError::NotPsd(_)) => ErrorKind::Config,
            Error::Sampling(SamplingError::Io { .. }) => ErrorKind::Io,
            Error::Linalg(_) | Error::PowerFlow(_) => ErrorKind::Numerical,
            Error::Npfs(e) => npfs_kind(e),
            Error::Rom(e) => rom_kind(e),
            Error::Appf(e) => match e {
                AppfError::Npfs(e) => npfs_kind(e),
                AppfError::Rom(e) => rom_kind(e),
                AppfError::Linalg(_)
                | AppfError::NominalNonConvergence { .. }
                | AppfError::SampleNonConvergence { .. } => ErrorKind::Numerical,
                AppfError::SampleLength { .. } | AppfError::SampleCountMismatch { .. } => ErrorKind::Config,
                AppfError::Io { .. } => ErrorKind::Io,
            },
            Error::Uq(UqError::Io { .. }) => ErrorKind::Io,
            Error::Uq(_) => ErrorKind::Config,
        }
    }
}

fn npfs_kind(e: &NpfsError) -> ErrorKind {
    match e {
        NpfsError::Factorization(_) => ErrorKind::Numerical,
        NpfsError::InvalidConfig(_) | NpfsError::LengthMismatch { .. } => ErrorKind::Config,
    }
}

fn rom_kind(e: &RomError) -> ErrorKind {
    match e {
        RomError::ZeroState => ErrorKind::Numerical,
        RomError::LengthMismatch { .. } | RomError::BadCheckpoint(_) => ErrorKind::Config,
        RomError::Io { .. } => ErrorKind::Io,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
