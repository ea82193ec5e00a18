use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} did not converge after {iterations} iterations: {detail}")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("rejected saddle point at ({x:.6}, {y:.6}): Hessian eigenvalues {lambda_min:.4e}, {lambda_max:.4e}")]
    SaddlePoint {
        x: f64,
        y: f64,
        lambda_min: f64,
        lambda_max: f64,
    },

    #[error("sublevel m = {0} is not part of the cooling pair")]
    UnsupportedSublevel(i32),

    #[error("m = {m} surface has no confining curvature along {axis} (curvature {curvature:.4e})")]
    NotConfining {
        m: i32,
        axis: &'static str,
        curvature: f64,
    },

    #[error("no B_z within ±{bound_mg} mG brings sideband {order} into resonance")]
    NoResonance { order: u32, bound_mg: f64 },

    #[error("Lamb-Dicke expansion invalid: eta^2 (2n+1) = {value:.3} exceeds {bound} at n = {n}")]
    LambDickeViolation { n: u32, value: f64, bound: f64 },

    #[error("rate generator has {closed_classes} closed classes; steady state is not unique")]
    Singular { closed_classes: usize },

    #[error("time evolution failed at t = {t:.4e}: {detail}")]
    Integration { t: f64, detail: String },

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("fit failed: {reason}")]
    Fit { reason: String },

    #[error("Stern-Gerlach peaks under-separated: spacing {spacing_ms:.3} ms < peak width {width_ms:.3} ms")]
    UnderSeparated { spacing_ms: f64, width_ms: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
