//! Prior attention segmentation networks for lesion and tumour segmentation in 2D CT
//! slices and 3D MRI volumes.

pub mod agd;
pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod skip;

pub use error::{Error, Result};
