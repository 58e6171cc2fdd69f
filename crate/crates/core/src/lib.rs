//! Road-inspection pipeline: a tiny grid detector with its sum-square loss,
//! centroid-based evaluation, a bounding-box visual-servo lane follower, and a
//! simulated two-node publish/subscribe drone system that files defect reports.

pub mod data;
pub mod detect;
pub mod error;
pub mod kvfile;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod servo;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
