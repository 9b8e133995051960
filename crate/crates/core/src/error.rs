use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid signature ({positive}, {negative}): total dimension must be at least 1")]
    Signature { positive: usize, negative: usize },

    #[error("degenerate frame: projected vector {index} has |<w,w>| = {norm:.3e} below tolerance")]
    DegenerateFrame { index: usize, norm: f64 },

    #[error("ill-conditioned basis: Gram condition number {cond:.3e} exceeds {max:.3e}")]
    IllConditioned { cond: f64, max: f64 },

    #[error("target not in span: residual {residual:.3e}")]
    NotInSpan { residual: f64 },

    #[error("grid too small for stencil: {axis} has {points} points, need at least {needed}")]
    Stencil { axis: char, points: usize, needed: usize },

    #[error("quadrature requires a closed grid or excluded margins: {0}")]
    Quadrature(String),

    #[error("integration diverged at line {line}, step {step}")]
    Diverged { line: usize, step: usize },

    #[error("coordinate is not conformal: max |<x_z,x_z>| / e^(2w) = {defect:.3e}")]
    Coordinate { defect: f64 },

    #[error("point off the quadric <x,x> = {expected}: max deviation {deviation:.3e}")]
    Embedding { expected: f64, deviation: f64 },

    #[error("global integral refused: {masked} masked grid points")]
    GlobalIntegral { masked: usize },

    #[error("normal bundle not flat: holonomy defect {holonomy:.3e} exceeds {tol:.3e}")]
    Flatness { holonomy: f64, tol: f64 },

    #[error("invalid seed: {0}")]
    Seed(String),

    #[error("polar surface is nowhere immersed")]
    EmptyMask,

    #[error("parent surface is not full: constant direction {direction:?} is orthogonal to the surface")]
    NotFull { direction: Vec<f64> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("compatibility residual {residual:.3e} exceeds {tol:.3e}")]
    Incompatible { residual: f64, tol: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
