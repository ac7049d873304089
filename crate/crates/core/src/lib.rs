//! Efficient semiparametric estimation in multisample models.
//!
//! The crate fits stratified (case-control) logistic regression three ways
//! (full semiparametric maximum likelihood and two reparametrized least
//! favorable submodels), computes efficient-information standard errors, and
//! ships numerical checks of the identities the estimators rely on.

pub mod casecontrol;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod methods;
pub mod model;
pub mod optimizer;
pub mod reparam;
pub mod report;
pub mod validation;

pub use data::{compute_weights, MultisampleDataset, Observation, Weights};
pub use error::{Error, Result};
pub use model::{aggregate_hessian, aggregate_score, log_likelihood, LogDensityModel, Order, ParamLayout, Params};
