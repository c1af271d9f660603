//! Decentralized swarm coordination: a coverage and pursuit-evasion world,
//! a two-stage role-aware consensus protocol, a monotonic value-mixing
//! trainer for role selection and a fine-tune data pipeline.

pub mod consensus;
pub mod datagen;
pub mod episode;
pub mod error;
pub mod intent;
pub mod nav;
pub mod rmix;
pub mod roles;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
