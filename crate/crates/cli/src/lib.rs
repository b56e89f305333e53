//! Command-line tools and the HTTP chat service.

pub mod commands;
pub mod server;
