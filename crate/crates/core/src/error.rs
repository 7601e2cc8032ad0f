use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("dataset error at record {record}: {message}")]
    Dataset { record: usize, message: String },

    #[error("no feasible {module} strategy: {reasons}")]
    NoStrategy {
        module: &'static str,
        reasons: String,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("efficiency model mismatch: expected {expected}, got {actual}")]
    ModelMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("dequant time table has no bucket for n_gpus={n_gpus}, v_dequant={v_dequant}")]
    TableMiss { n_gpus: u32, v_dequant: u64 },

    #[error("corrupted quantized tensor: {0}")]
    Corrupted(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
