use thiserror::Error;

use crate::admm::AdmmResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix has numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("objective is unbounded below")]
    Unbounded,

    #[error("conic solver failed: {0}")]
    NumericalFailure(String),

    #[error("not a stability multiplier: {0}")]
    NotStabilityMultiplier(String),

    #[error("system is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    Unstable { abscissa: f64 },

    #[error("multiplier is singular")]
    SingularMultiplier,

    #[error("I - Q2 Q1 is singular; the coupling condition is not strict")]
    SingularCoupling,

    #[error("synthesis infeasible at the upper bisection bound gamma = {gamma}")]
    InfeasibleAtHi { gamma: f64 },

    #[error("parametrized multiplier is not monotone near gamma = {gamma}")]
    NonMonotone { gamma: f64 },

    #[error("interconnection is not well-posed: {0}")]
    NotWellPosed(String),

    #[error("the reduced admissibility form requires M11 = 0 and M22 = 0")]
    NotPureRouting,

    #[error("multipliers are not a localization (admissibility lambda_max = {lambda_max:.3e})")]
    NotALocalization { lambda_max: f64 },

    #[error("local level {gamma_local} is below the global level {gamma_global}")]
    NegativeGapSquared { gamma_local: f64, gamma_global: f64 },

    #[error("membership matrix is not an equivalence relation at ({i}, {j}, {k})")]
    NotEquivalence { i: usize, j: usize, k: usize },

    #[error("no convergence after {iterations} iterations")]
    MaxIter { iterations: usize },

    #[error("ADMM did not converge after {} iterations", .0.state.iter)]
    AdmmMaxIter(Box<AdmmResult>),

    #[error("subsystem {subsystem} admits no finite-gain certificate at the seed level")]
    SeedInfeasible { subsystem: usize },
}
