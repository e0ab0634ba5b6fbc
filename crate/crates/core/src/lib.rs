//! Economic power management for fleets of heterogeneous second-life battery packs.
//!
//! The crate is organised bottom-up: [`types`] holds the validated domain data,
//! [`electrical`], [`thermal`] and [`aging`] are the pack models, [`costs`] turns
//! model outputs into dollars, [`optimizer`] and [`baselines`] allocate power over a
//! horizon, and [`simulator`] repeats horizons into multi-cycle campaigns.
//! [`config`] and [`export`] handle the file formats used by the `slbess` binary.

pub mod aging;
pub mod baselines;
pub mod config;
pub mod costs;
pub mod electrical;
mod error;
pub mod export;
pub mod optimizer;
pub mod simulator;
pub mod thermal;
pub mod types;

pub use error::{Error, Result};
