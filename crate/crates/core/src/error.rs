//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A required key is absent from an input file.
    #[error("missing key `{0}`")]
    MissingKey(String),

    /// A token could not be parsed where a number was expected.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input bytes or fields violate the declared file format.
    #[error("format error: {0}")]
    Format(String),

    /// A value is out of range or a precondition does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    /// No superpixel carries a depth observation; the normal equations
    /// have no data term and cannot be solved.
    #[error("singular system: no superpixel has a depth observation")]
    NoObservations,

    /// A connected component of the pairwise graph contains no observed
    /// node, so the system restricted to it has a null space.
    #[error("singular system: node {node} lies in a component with no depth observation")]
    SingularComponent { node: usize },

    /// Gaussian elimination hit a pivot too small to divide by.
    #[error("singular matrix: pivot {pivot:.3e} in column {col}")]
    SingularMatrix { col: usize, pivot: f64 },

    /// The iterative solver exhausted its budget.
    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    /// A non-finite value appeared inside an iterative solve.
    #[error("numerical breakdown: non-finite value at iteration {iterations}")]
    Numerical { iterations: usize },

    /// Adds frame and pipeline-stage context to an inner error.
    #[error("frame {frame}: {stage}: {source}")]
    Frame {
        frame: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Wrap an error with the frame id and pipeline stage it occurred in.
    pub fn in_frame(self, frame: &str, stage: &'static str) -> Error {
        Error::Frame {
            frame: frame.to_string(),
            stage,
            source: Box::new(self),
        }
    }
}
