//! Simulation and analysis of two-user links through active STAR surfaces.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod element;
pub mod error;
pub mod fading;
pub mod link;
pub mod mc;
pub mod pattern;
pub mod report;
pub mod stream;
pub mod validate;

pub use error::{Error, Result};
