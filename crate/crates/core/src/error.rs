use thiserror::Error;

/// Errors raised by the evaluators, solvers and checkers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("modulus has non-positive or too small imaginary part: {0}")]
    BadModulus(String),
    #[error("theta series did not converge within {0} terms")]
    NonConvergent(usize),
    #[error("argument within {radius:e} of a pole ({what})")]
    NearPole { what: String, radius: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("derivative order {0} exceeds the supported maximum")]
    OrderOverflow(usize),
    #[error("function is not quasi-periodic along the given period (residual {0:e})")]
    NotQuasiPeriodic(f64),
    #[error("could not find a generic sample point: {0}")]
    DegenerateSample(String),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("poles {0} and {1} coincide modulo the lattice")]
    CoincidentPoles(usize, usize),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("theta(a_{0}) vanishes; shift parameter is a lattice point")]
    DegenerateA(usize),
    #[error("a1 = ±a2 modulo the lattice: the fiber contains a vertical component")]
    VerticalComponent,
    #[error("expected {expected} solutions, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("not an eigenfunction: residual {0:e}")]
    NotEigen(f64),
    #[error("omega is resonant with the lattice: {0}")]
    ResonantOmega(String),
    #[error("kernel is not one-dimensional (singular values {0:?})")]
    DegenerateKernel(Vec<f64>),
    #[error("expected a constant, relative spread {0:e}")]
    NotConstant(f64),
    #[error("compatibility condition violated: {0:e}")]
    Incompatible(f64),
    #[error("product of the quasimomentum relations differs from 1 by {0:e}")]
    IncompatibleQscon(f64),
    #[error("logarithm branch is ambiguous: |Im log xi| = {0}")]
    BranchAmbiguity(f64),
    #[error("evaluation matrix is rank deficient (smallest/largest singular value {0:e})")]
    RankDeficient(f64),
    #[error("function grows towards a singular line (fitted exponent {0})")]
    SingularOnLine(f64),
    #[error("no solution found: {0}")]
    NoSolution(String),
}

impl Error {
    /// Whether this error comes from invalid input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::BadModulus(_)
                | Error::DimensionMismatch { .. }
                | Error::BadParams(_)
                | Error::CoincidentPoles(..)
                | Error::DegenerateA(_)
                | Error::VerticalComponent
                | Error::ResonantOmega(_)
                | Error::OrderOverflow(_)
        )
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadModulus(_) => "BadModulus",
            Error::NonConvergent(_) => "NonConvergent",
            Error::NearPole { .. } => "NearPole",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::OrderOverflow(_) => "OrderOverflow",
            Error::NotQuasiPeriodic(_) => "NotQuasiPeriodic",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::BadParams(_) => "BadParams",
            Error::CoincidentPoles(..) => "CoincidentPoles",
            Error::NoConvergence(_) => "NoConvergence",
            Error::DegenerateA(_) => "DegenerateA",
            Error::VerticalComponent => "VerticalComponent",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::NotEigen(_) => "NotEigen",
            Error::ResonantOmega(_) => "ResonantOmega",
            Error::DegenerateKernel(_) => "DegenerateKernel",
            Error::NotConstant(_) => "NotConstant",
            Error::Incompatible(_) => "Incompatible",
            Error::IncompatibleQscon(_) => "IncompatibleQscon",
            Error::BranchAmbiguity(_) => "BranchAmbiguity",
            Error::RankDeficient(_) => "RankDeficient",
            Error::SingularOnLine(_) => "SingularOnLine",
            Error::NoSolution(_) => "NoSolution",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
