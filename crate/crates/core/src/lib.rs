//! Uncertainty-aware online mapping and multi-layered belief-space planning.

pub mod bench;
pub mod cli;
pub mod collision;
pub mod config;
pub mod error;
pub mod export;
pub mod geometry;
pub mod kernel;
pub mod manager;
pub mod mapping;
pub mod motion;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
