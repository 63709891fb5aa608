//! Simulation laboratory for force-adaptive in-vial sample scraping.
//!
//! A planar redundant arm under Cartesian impedance control presses a tool
//! against a vial wall coated with particles whose dislodgement thresholds are
//! drawn from Perlin noise. A PPO agent learns the feedforward contact wrench
//! and is compared against a fixed-wrench baseline. A synthetic RGB-D
//! perception pipeline localizes material on the vial wall.

pub mod agent;
pub mod arm;
pub mod commands;
pub mod config;
pub mod controller;
pub mod env;
pub mod error;
pub mod material;
pub mod noise;
pub mod perception;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
