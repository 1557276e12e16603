//! Deterministic federated-learning simulator with an eavesdropping graph
//! auto-encoder attacker.
//!
//! The crate is organised bottom-up: [`numerics`] and [`data`] feed local
//! [`training`]; [`aggregation`] is FedAvg; [`channel`] decides what an
//! attacker overhears; [`attack`] turns that into a bounded malicious update;
//! [`sim`] runs the rounds and [`output`] writes the result files.

pub mod aggregation;
pub mod attack;
pub mod baseline;
pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod output;
pub mod sim;
pub mod training;

pub use config::SimConfig;
pub use error::{Error, Result};
pub use numerics::{ModelParams, RngStream};
pub use sim::run_simulation;
