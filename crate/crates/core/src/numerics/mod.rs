//! Dense tensors, reverse-mode gradients over a fixed operator set, and
//! small symmetric eigenproblems.

use std::path::PathBuf;

use thiserror::Error;

pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff, finite_diff_multi, max_relative_error};
pub use linalg::{mat_frac_power, sym_eig, SymEigen, SymMatrix};
pub use params::{ParamVector, Segment};
pub use tape::{evaluate, value_and_grad, values_and_grads, Gradients, NodeId, Op, ParamNodes, Tape};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("unsupported use of operator `{op}`: {reason}")]
    UnsupportedOp { op: &'static str, reason: String },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("duplicate parameter segment `{0}`")]
    DuplicateSegment(String),
    #[error("unknown parameter segment `{0}`")]
    UnknownSegment(String),
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("function is not finite when perturbing coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("symmetric eigensolver supports k <= 16, got {0}")]
    DimensionTooLarge(usize),
    #[error("invalid matrix power p={p} with eps_reg={eps_reg}")]
    InvalidPower { p: f64, eps_reg: f64 },
    #[error("eigenvalue {eigenvalue} cannot be raised to power {p}")]
    Singular { eigenvalue: f64, p: f64 },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}
