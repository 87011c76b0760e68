//! Precision-tracked arithmetic on the cyclotomic Robba ring, the operators
//! phi, psi, Gamma, the differential structure, localization into cyclotomic
//! power-series rings, and the invariant functors attached to small
//! (phi,Gamma)-modules.

pub mod budget;
pub mod cyclo;
pub mod error;
pub mod hodge;
pub mod linalg;
pub mod localize;
pub mod logring;
pub mod padic;
pub mod phigamma;
pub mod series;

pub use budget::PrecisionBudget;
pub use cyclo::{CyclotomicScalar, Rational};
pub use error::{Error, Result};
pub use linalg::PrecMatrix;
pub use localize::TPowerSeries;
pub use logring::LogSeries;
pub use padic::{padic_binomial, PadicScalar};
pub use phigamma::PhiGammaModule;
pub use series::AnnulusSeries;
