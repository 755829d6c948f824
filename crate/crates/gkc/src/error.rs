use std::io;

use keep_core::KeepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GkcError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame payload of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(u64),
    #[error("version {version} rejected: {reason}")]
    Rejected { version: u32, reason: String },
    #[error("server error {code}: {message}")]
    Remote { code: u8, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] KeepError),
}

pub type Result<T, E = GkcError> = std::result::Result<T, E>;
