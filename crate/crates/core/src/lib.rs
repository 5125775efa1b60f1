//! Penalized additive mixed models for panel data, conditional-AIC model
//! selection and component-wise gradient boosting.

pub mod amm;
pub mod boosting;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod panel;
pub mod pipeline;
pub mod scalar;
pub mod selection;
pub mod serde_float;
pub mod spline;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Real;

/// Panel data in double precision.
pub type Panel = panel::PanelDataset<f64>;
/// Fitted model in double precision.
pub type Fit = amm::FittedAmm<f64>;
/// Design in double precision.
pub type Design = amm::DesignBundle<f64>;
