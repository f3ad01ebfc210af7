//! Contrastive, label-aware local explanations for black-box classifiers.
//!
//! A black box is queried only for class probabilities. Around an index
//! sample the toolkit draws a perturbation neighborhood, rebalances its
//! classes, optionally drops low-influence points, and fits a local
//! explainer whose coefficients attribute the prediction to features.

pub mod blackbox;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod explainers;
pub mod influence;
pub mod linalg;
pub mod plot;
pub mod surrogate;
pub mod util;

pub use error::{ClimaxError, Result};
pub use explainers::{explain, Balancer, ExplainConfig, Explanation, Method};
