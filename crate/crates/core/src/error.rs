use std::fmt;

/// Atoms named in a stratified diagnosis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atoms(pub Vec<usize>);

impl fmt::Display for Atoms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no exact rule for {0}; a grid is required")]
    NeedsGrid(String),
    #[error("point outside dom(f) on atoms {atoms}: {what}")]
    OutsideDomain { atoms: Atoms, what: String },
    #[error("precondition violated on atoms {atoms}: {what}")]
    Precondition { atoms: Atoms, what: String },
    #[error("function is not proper: {0}")]
    Improper(String),
    #[error("input is not convex: {0}")]
    NotConvex(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("certificate failure (bug): {0}")]
    Certificate(String),
}

impl Error {
    pub fn outside(atoms: Vec<usize>, what: impl Into<String>) -> Self {
        Error::OutsideDomain {
            atoms: Atoms(atoms),
            what: what.into(),
        }
    }

    pub fn precondition(atoms: Vec<usize>, what: impl Into<String>) -> Self {
        Error::Precondition {
            atoms: Atoms(atoms),
            what: what.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
