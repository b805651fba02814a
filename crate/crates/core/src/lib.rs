//! Agent-driven recommendation sandbox for offline A/B testing.
//!
//! The crate is organised bottom-up: [`catalog`] holds the dataset,
//! [`recsys`] the recommenders and ranking metrics, [`sandbox`] the page
//! state machine, [`memory`] embedding retrieval, [`agent`] the simulated
//! user, and [`harness`] ties them together into experiments.

pub mod agent;
pub mod catalog;
pub mod harness;
pub mod memory;
pub mod recsys;
pub mod sandbox;
pub mod seed;
