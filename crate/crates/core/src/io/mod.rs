//! Instance files and model checkpoints.

mod checkpoint;
mod instance;
mod lexer;

use std::fmt;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, FORMAT_VERSION};
pub use instance::{parse_instance, write_instance};

/// Syntax error with a 1-based position and the tokens that would have been
/// accepted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("{line}:{column}: {message}")]
    Semantic {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found} not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint is truncated or corrupted (checksum mismatch)")]
    CorruptChecksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor `{0}` is not finite")]
    NonFinite(String),
}
