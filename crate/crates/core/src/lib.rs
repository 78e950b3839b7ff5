pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fedcp;
pub mod federation;
pub mod nn;
pub mod output;
pub mod seed;
pub mod selftest;

pub use error::{Error, Result};
