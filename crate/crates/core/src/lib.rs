pub mod bayes;
pub mod curvature;
pub mod data;
pub mod error;
pub mod glm;
pub mod hetero;
pub mod inference;
pub mod models;
pub mod numdiff;
pub mod sim;
pub mod solvers;
pub mod special;

pub use error::{Error, Result};
