//! Conditional AIC, the Mundlak test, the two-stage tournament and
//! varying-coefficient refits around a break year.

pub mod caic;
pub mod mundlak;
pub mod tournament;
pub mod varying;

pub use caic::{conditional_aic, CaicBackend, CaicReport};
pub use mundlak::{mundlak_lrt, LrtLikelihood, MundlakOptions, MundlakResult};
pub use tournament::{
    argmin_caic, evaluate_spec, run_first_stage, run_second_stage, CandidateResult, Comparison, GroupSpec,
    GroupWinner, SelectionOptions, SelectionOutcome, Subsample,
};
pub use varying::{fit_varying_coefficients, PeriodTerm, VaryingCoefFit};
