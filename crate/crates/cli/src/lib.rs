//! Command-line pipeline and HTTP query service for the reverse-dictionary
//! engine.

pub mod cli;
pub mod config;
pub mod service;
