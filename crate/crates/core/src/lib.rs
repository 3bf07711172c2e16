pub mod config;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod manifest;
pub mod model;
pub mod network;
pub mod plot;
pub mod posterior;
pub mod problem;
pub mod rng;
pub mod search;
pub mod service;
pub mod synth;
pub mod transect;
pub mod utility;
pub mod windows;

pub use error::{Error, Result};
