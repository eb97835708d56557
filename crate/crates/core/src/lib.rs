pub mod assignment;
pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod filters;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod rfs;
pub mod sim;
pub mod snapshot;
