//! Std companion of `evmix-core`: config files, CSV formats, parallel
//! experiment runners and the `evmix` command-line tool.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use error::AppError;
pub use evmix_core as core;

use evmix_core::verifier::{InteriorPoint, SolverBackend};

/// Environment variable naming the solver backend.
pub const BACKEND_ENV: &str = "EVMIX_BACKEND";

static INTERIOR_POINT: InteriorPoint = InteriorPoint;

/// Backend by name; `None` selects the default.
pub fn backend(name: Option<&str>) -> Result<&'static dyn SolverBackend, AppError> {
    match name.map(str::trim) {
        None | Some("") | Some("interior-point") | Some("ipm") => Ok(&INTERIOR_POINT),
        Some(other) => Err(AppError::Config(format!("unknown solver backend '{other}' (available: interior-point)"))),
    }
}

/// Backend selected by [`BACKEND_ENV`].
pub fn backend_from_env() -> Result<&'static dyn SolverBackend, AppError> {
    backend(std::env::var(BACKEND_ENV).ok().as_deref())
}
