//! False-negative denoising for distantly supervised relation extraction.

pub mod corpus;
pub mod encoder;
pub mod model;
pub mod classifier;
pub mod agent;
pub mod eval;
pub mod pipeline;
pub mod checks;
pub mod nn;

pub type Matrix = nn::Matrix<f64>;
pub type ParamSet = nn::ParamSet<f64>;
pub type AdamState = nn::AdamState<f64>;
