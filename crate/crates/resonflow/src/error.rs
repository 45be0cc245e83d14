use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("mode grid is empty")]
    EmptyGrid,
    #[error("basis size exceeds cap {cap} (n_max={n_max}, e_max={e_max})")]
    BasisCap { cap: usize, n_max: usize, e_max: f64 },
    #[error("matrix is numerically singular (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("feshbach pair check failed: {0}")]
    PairFailed(String),
    #[error("resolvent denominator {value:.3e} below bound {bound:.3e} at state {state}")]
    ResolventBound { state: usize, value: f64, bound: f64 },
    #[error("margin violated at step {step}: {what}")]
    Margin { step: usize, what: String },
    #[error("newton iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("winding number {winding} != 1 on the search circle at step {step}")]
    Winding { step: usize, winding: i64 },
    #[error("no stability plateau in the dilation sweep (best |dz/dθ| = {best:.3e}); enlarge the basis")]
    NoPlateau { best: f64 },
    #[error("resolvent denominator {0:.3e} too close to zero at a grid node; shift the grid")]
    NearPole(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
