use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pair (A, B) is not controllable: controllability matrix has rank {rank} < {n}")]
    Uncontrollable { rank: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no s > 0 satisfies {rho_lo} <= phi(s)/s <= {rho_hi}")]
    EmptyRegion { rho_lo: f64, rho_hi: f64 },

    #[error("sum of gain entries is zero; the scalar-wrapped region is undefined")]
    ZeroGainSum,

    #[error("vertex enumeration needs {needed} vertices, cap is {cap}")]
    VertexBudgetExceeded { needed: u128, cap: usize },

    #[error("LMI infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure in LMI solver: {0}")]
    NumericalFailure(String),

    #[error("no slope interval could be certified for this gain")]
    NoFeasibleInterval,
}
