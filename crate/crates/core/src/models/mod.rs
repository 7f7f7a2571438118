//! Regressors: penalized linear models, gradient-boosted trees and a small sequence network.

pub mod linear;
pub mod gbt;
pub mod seqnet;
