//! Simulated benchmark problems and their configuration.

pub mod config;
pub mod falling_body;
pub mod imu_cam;
pub mod tumbler;

pub use config::Config;
