//! Silicon participants for piloting social experiments.

pub mod agent;
pub mod behaviors;
pub mod environment;
pub mod experiment;
pub mod gateway;
pub mod num;

use num_rational::BigRational;

/// Exact money arithmetic.
pub type Exact = BigRational;

pub type Account = behaviors::economy::Account<f64>;
pub type ExactAccount = behaviors::economy::Account<Exact>;
pub type EconomyState = behaviors::economy::EconomyState<f64>;
pub type ExactEconomyState = behaviors::economy::EconomyState<Exact>;
pub type BracketSchedule = behaviors::economy::BracketSchedule<f64>;
pub type ExactBracketSchedule = behaviors::economy::BracketSchedule<Exact>;
pub type Settlement = behaviors::economy::Settlement<f64>;
pub type GeoPoint = environment::geo::GeoPoint<f64>;
