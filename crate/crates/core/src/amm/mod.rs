//! Additive mixed models for panel data: design assembly, estimation and
//! inference.

pub mod design;
pub mod fit;
pub mod inference;
pub mod spec;

pub use design::{build_design, DesignBundle, DesignOptions, Period, PeriodSplit, Term, TermKind};
pub use fit::{fit_amm, FitSettings, FittedAmm, Method, VarianceParams};
pub use inference::{
    conditional_loglik, effect_at, effective_dof, predict, smooth_effect_curve, smooth_effect_surface,
    term_significance, EffectCurve, TermEdf, TermTest,
};
pub use spec::{EffectsMode, ModelSpec, SmoothSpec, TensorSpec};
