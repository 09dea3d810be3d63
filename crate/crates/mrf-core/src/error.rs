use std::path::PathBuf;

/// Error type shared by every stage of the toolkit.
///
/// The CLI maps these onto process exit codes: configuration, shape,
/// format, lineage, and I/O problems are validation errors (exit 1),
/// while simulation and solver breakdowns are numerical failures (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum MrfError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation failure at grid point {index} (t1 = {t1_ms} ms, t2 = {t2_ms} ms): {reason}")]
    Simulation {
        index: usize,
        t1_ms: f64,
        t2_ms: f64,
        reason: String,
    },

    #[error("file format error: {0}")]
    Format(String),

    #[error("lineage mismatch: {0}")]
    Lineage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MrfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MrfError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that signal a numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MrfError::Numerical(_) | MrfError::Simulation { .. })
    }
}

pub type Result<T> = std::result::Result<T, MrfError>;
