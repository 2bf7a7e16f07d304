pub mod baselines;
pub mod error;
pub mod game;
pub mod live;
pub mod model;
pub mod planner;
pub mod predictor;
pub mod session;
pub mod sim;
pub mod ukf;

pub use error::{Error, Result};
