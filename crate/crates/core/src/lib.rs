//! Legendre-memory projections and companion-form Koopman forecasting.

pub mod data;
pub mod error;
pub mod hippo;
pub mod kooba;
pub mod legendre;
pub mod linalg;
pub mod model;
pub mod quadrature;

pub use error::{KoobaError, Result};
pub use hippo::{BasisConfig, HippoBasis, Method, Timescale};
pub use model::{KoobaModel, ModelConfig};
