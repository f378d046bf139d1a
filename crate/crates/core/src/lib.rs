pub mod bandit;
pub mod config;
pub mod eluder;
pub mod env;
pub mod experiment;
pub mod metrics;
pub mod observations;
pub mod rng;
pub mod sgld;
