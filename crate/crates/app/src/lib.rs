//! Command-line tool and HTTP service for the svoa retrieval engine.

pub mod backends;
pub mod commands;
pub mod config;
pub mod query;
pub mod server;
