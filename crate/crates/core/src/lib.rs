//! Rational consumption decisions of an electricity consumer enrolled in a
//! peak time rebate (PTR) program.
//!
//! * [`model`]: utility, payoff and rebate building blocks.
//! * [`stage_one`]: event-period best response and its exact expectations.
//! * [`stage_two`]: closed-form and exact region-wise baseline-setting decisions.
//! * [`oracle`]: Monte Carlo / exhaustive-grid cross-check.
//! * [`dp`]: n-period backward induction on discretised grids.
//! * [`experiments`]: the solve/sweep/uncertainty/thermal/verify drivers and CSV output.

pub mod dp;
pub mod error;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod stage_one;
pub mod stage_two;

pub use error::{Error, Result};
pub use model::{
    payoff_u, rational_no_program, rebate, utility_g, ConsumerParams, ProgramParams,
    StrategyLabel, UncertaintyModel,
};
