//! HTTP API and command-line front end for the Event Card engine.

pub mod api;
pub mod auth;
pub mod cli;
pub mod setup;
