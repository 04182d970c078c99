pub mod alignment;
pub mod error;
pub mod exec;
pub mod masking;
pub mod model;
pub mod posedata;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
