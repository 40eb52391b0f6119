use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto stable exit codes: input problems, configuration problems and
/// numerical failures.
#[derive(Debug, Error)]
pub enum AmirlError {
    #[error("no data")]
    NoData,

    #[error("no feasible window")]
    NoFeasibleWindow,

    #[error("input error: {0}")]
    Input(String),

    #[error("unbalanced panel: {0}; extract a balanced window first (select-window)")]
    Unbalanced(String),

    #[error("fixed effect unidentifiable: unit `{unit}` has {periods} period(s), need at least 2")]
    FixedEffectUnidentifiable { unit: String, periods: usize },

    #[error("constant column `{0}` cannot be standardized")]
    ConstantColumn(String),

    #[error("variable `{0}` has no observed values")]
    FullyMissing(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate fit: residual sum of squares is zero")]
    DegenerateFit,

    #[error("all fits along the penalty grid are degenerate")]
    AllFitsDegenerate,

    #[error("lasso did not converge after {sweeps} sweeps (last max change {last_change:e})")]
    LassoNotConverged {
        sweeps: usize,
        last_change: f64,
        coefficients: Vec<f64>,
    },

    #[error("variance-component search did not converge after {iterations} iterations (last ratio {last_ratio:e})")]
    LmmNotConverged { iterations: usize, last_ratio: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("imputation failed (m={m}, cycle={cycle}, variable `{variable}`): {source}")]
    Imputation {
        m: usize,
        cycle: usize,
        variable: String,
        #[source]
        source: Box<AmirlError>,
    },

    #[error("resample (m={m}, b={b}) failed in {stage}: {source}")]
    Resample {
        stage: &'static str,
        m: usize,
        b: usize,
        #[source]
        source: Box<AmirlError>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Config,
    Numerical,
}

impl AmirlError {
    pub fn class(&self) -> ErrorClass {
        use AmirlError::*;
        match self {
            NoData | NoFeasibleWindow | Input(_) | Unbalanced(_) | FullyMissing(_) | Csv(_)
            | Io(_) | Json(_) => ErrorClass::Input,
            Config(_) | DimensionMismatch(_) => ErrorClass::Config,
            FixedEffectUnidentifiable { .. } | ConstantColumn(_) => ErrorClass::Input,
            DegenerateFit
            | AllFitsDegenerate
            | LassoNotConverged { .. }
            | LmmNotConverged { .. }
            | Numerical(_) => ErrorClass::Numerical,
            Imputation { source, .. } | Resample { source, .. } => source.class(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AmirlError>;
