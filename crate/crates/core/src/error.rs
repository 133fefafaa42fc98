use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("Newton iteration failed to converge from every seed")]
    RootFindingFailed,

    #[error("not a fixed point: residual {residual:e}")]
    NotAFixedPoint { residual: f64 },

    #[error("unexpected fixed-point topology: {count} distinct roots")]
    UnexpectedTopology { count: usize },

    #[error("inconsistent topology: {0}")]
    InconsistentTopology(String),

    #[error("fixed point is at a bifurcation: eigenvalue {eigenvalue:e} too close to zero")]
    AtBifurcation { eigenvalue: f64 },

    #[error("Jacobian has complex eigenvalues (discriminant {discriminant:e})")]
    NonRealSpectrum { discriminant: f64 },

    #[error("slow-manifold solve failed at y = {y}")]
    ManifoldSolve { y: f64 },

    #[error("noise amplitude is zero, the stationary density is undefined")]
    DegenerateNoise,

    #[error("linear solver failed at step {step}: {detail}")]
    LinearSolver { step: usize, detail: String },

    #[error("bins do not cover the support: {outside_mass:e} mass falls outside")]
    Coverage { outside_mass: f64 },

    #[error("every path was censored before t_end = {t_end}")]
    InsufficientHorizon { t_end: f64 },

    #[error("potential has {zeros} critical points, three are required past the bifurcation")]
    PreBifurcation { zeros: usize },

    #[error("exponential regression is degenerate: {0}")]
    RegressionDegenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
