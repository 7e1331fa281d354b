pub mod activity;
pub mod autodiff;
pub mod calib;
pub mod config;
pub mod error;
pub mod fft;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod radar;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
