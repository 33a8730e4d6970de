//! Unsupervised random-forest proximity clustering of critical traffic scenarios.

pub mod dataset;
pub mod forest;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod proximity;
pub mod render;
pub mod seriation;
