//! Tau-functions and m-functions for the KdV flow on reflectionless
//! Schrödinger potentials.

pub type C64 = num_complex::Complex64;

pub mod battery;
pub mod config;
pub mod flow;
pub mod gamma;
pub mod grassmann;
pub mod herglotz;
pub mod linalg;
pub mod schroedinger;
pub mod tau;

pub use config::RunConfig;
pub use flow::{flow_apply, kdv_evolve, kdv_residual, potential, Convention, FlowError, FlowGrid};
pub use gamma::{exp_kdv, exp_line, Atom, GammaElement, GammaError};
pub use grassmann::{tau_truncated, FourierTruncation, GrassmannError, SubspaceModel};
pub use herglotz::{mfun_free, mfun_from_sigma, mfun_zero_background, HerglotzError, MFunction, ValidationReport};
pub use linalg::LinalgError;
pub use schroedinger::{assemble_m, riccati_weyl, PotentialGrid, SchroedingerError, Side};
pub use tau::{tau_any, tau_det, tau_product, Route, TauConfig, TauError, TauResult};

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Herglotz(#[from] HerglotzError),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Tau(#[from] TauError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error(transparent)]
    Schroedinger(#[from] SchroedingerError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("config: {0}")]
    Config(String),
}
